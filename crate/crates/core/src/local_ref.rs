//! Classical local reference problems: a cell-centered finite-difference
//! Dirichlet solver with harmonic face conductivities, the complementary
//! (Kelvin) energy bookkeeping on face fluxes, and the local design
//! optimization that produces the reference value for convergence studies.
//!
//! The face-flux complementary energy is the exact discrete dual of the
//! five-point scheme, so the alternating design iteration below descends
//! monotonically just like its nonlocal counterpart.

use crate::error::{Error, Result};
use crate::geometry::Mesh;
use crate::linalg::{cg, dot};
use crate::material::{check_admissible, Bounds, DesignField};
use crate::operators::{cell_norm, CellField, Support, VectorCellField};
use crate::state_solvers::{SolveOptions, SourceField};

/// Cell/face indexing over the interior lattice of a mesh.
struct LocalLattice {
    dim: usize,
    dims: Vec<usize>,
    h: f64,
}

impl LocalLattice {
    fn new(mesh: &Mesh) -> Self {
        LocalLattice { dim: mesh.domain.dim, dims: mesh.interior_dims.clone(), h: mesh.h }
    }

    fn n_cells(&self) -> usize {
        self.dims.iter().product()
    }

    fn cell_rank(&self, coord: &[usize]) -> usize {
        let mut r = 0;
        for d in 0..self.dim {
            r = r * self.dims[d] + coord[d];
        }
        r
    }

    fn coord_of(&self, mut rank: usize) -> Vec<usize> {
        let mut c = vec![0usize; self.dim];
        for d in (0..self.dim).rev() {
            c[d] = rank % self.dims[d];
            rank /= self.dims[d];
        }
        c
    }

    /// Number of faces orthogonal to axis `d`.
    fn n_faces(&self, d: usize) -> usize {
        self.dims
            .iter()
            .enumerate()
            .map(|(k, &n)| if k == d { n + 1 } else { n })
            .product()
    }

    /// Rank of the face orthogonal to axis `d` at face coordinate `coord`
    /// (where `coord[d]` runs 0..=dims[d]).
    fn face_rank(&self, d: usize, coord: &[usize]) -> usize {
        let mut r = 0;
        for k in 0..self.dim {
            let extent = if k == d { self.dims[k] + 1 } else { self.dims[k] };
            r = r * extent + coord[k];
        }
        r
    }
}

fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Face conductivity weights `w_f` such that the discrete Dirichlet energy is
/// `1/2 sum_f w_f (du_f)^2` with `du_f` the (scaled) jump across the face.
fn face_weights(lat: &LocalLattice, kappa: &[f64]) -> Vec<Vec<f64>> {
    let scale = lat.h.powi(lat.dim as i32 - 2);
    (0..lat.dim)
        .map(|d| {
            let mut w = vec![0.0; lat.n_faces(d)];
            let mut coord = vec![0usize; lat.dim];
            for rank in 0..lat.n_cells() {
                coord.copy_from_slice(&lat.coord_of(rank));
                let k_here = kappa[rank];
                // left face of this cell along axis d
                let fr = lat.face_rank(d, &coord);
                if coord[d] == 0 {
                    w[fr] = 2.0 * k_here * scale;
                } else {
                    let mut left = coord.clone();
                    left[d] -= 1;
                    w[fr] = harmonic(kappa[lat.cell_rank(&left)], k_here) * scale;
                }
                // right boundary face
                if coord[d] == lat.dims[d] - 1 {
                    let mut fc = coord.clone();
                    fc[d] += 1;
                    w[lat.face_rank(d, &fc)] = 2.0 * k_here * scale;
                }
            }
            w
        })
        .collect()
}

fn apply_local(lat: &LocalLattice, weights: &[Vec<f64>], x: &[f64], y: &mut [f64]) {
    for rank in 0..lat.n_cells() {
        let coord = lat.coord_of(rank);
        let mut acc = 0.0;
        for d in 0..lat.dim {
            let left_face = lat.face_rank(d, &coord);
            let mut right = coord.clone();
            right[d] += 1;
            let right_face = lat.face_rank(d, &right);
            let u_here = x[rank];
            // left neighbor (zero beyond the boundary)
            let u_left = if coord[d] == 0 {
                0.0
            } else {
                let mut c = coord.clone();
                c[d] -= 1;
                x[lat.cell_rank(&c)]
            };
            let u_right = if coord[d] == lat.dims[d] - 1 {
                0.0
            } else {
                let mut c = coord.clone();
                c[d] += 1;
                x[lat.cell_rank(&c)]
            };
            acc += weights[d][left_face] * (u_here - u_left);
            acc += weights[d][right_face] * (u_here - u_right);
        }
        y[rank] = acc;
    }
}

/// Solution of the local Dirichlet problem.
#[derive(Debug, Clone)]
pub struct LocalSolution {
    pub u: CellField,
    /// Face fluxes averaged to cell centers, one vector per interior cell.
    pub flux: VectorCellField,
    /// Oriented face fluxes per axis (internal layout of [`LocalLattice`]).
    pub face_flux: Vec<Vec<f64>>,
    pub i_loc_primal: f64,
    /// Complementary energy; equals `-i_loc_primal` by discrete duality.
    pub i_loc_dual: f64,
    pub residual: f64,
    pub cg_iterations: usize,
}

/// Finite-difference solve of `-div(kappa grad u) = f`, `u = 0` on the
/// boundary, with harmonic-mean face conductivities.
pub fn solve_local(
    kappa: &DesignField,
    f: &SourceField,
    mesh: &Mesh,
    opts: &SolveOptions,
) -> Result<LocalSolution> {
    let lat = LocalLattice::new(mesh);
    let n = lat.n_cells();
    debug_assert_eq!(n, mesh.n_interior());
    let kap: Vec<f64> = mesh.interior_ids.iter().map(|&id| kappa.kappa[id as usize]).collect();
    if kap.iter().any(|&k| k <= 0.0) {
        return Err(Error::Config("local solve: conductivity must be positive".into()));
    }
    let weights = face_weights(&lat, &kap);
    let hn = mesh.measure();
    let b: Vec<f64> = f.values.values.iter().map(|&v| v * hn).collect();
    let mut diag = vec![0.0; n];
    for rank in 0..n {
        let coord = lat.coord_of(rank);
        for d in 0..lat.dim {
            let mut right = coord.clone();
            right[d] += 1;
            diag[rank] += weights[d][lat.face_rank(d, &coord)];
            diag[rank] += weights[d][lat.face_rank(d, &right)];
        }
    }
    let (u, stats) = cg(
        |x, y| apply_local(&lat, &weights, x, y),
        &b,
        opts.tol,
        opts.max_iters,
        Some(&diag),
    )?;
    if !stats.converged {
        return Err(Error::Solver(format!(
            "local cg stalled after {} iterations at relative residual {:.3e}",
            stats.iterations, stats.rel_residual
        )));
    }
    let mut au = vec![0.0; n];
    apply_local(&lat, &weights, &u, &mut au);
    let i_primal = 0.5 * dot(&u, &au) - dot(&b, &u);
    let face_flux = face_fluxes(&lat, &kap, &u);
    let flux = average_to_cells(&lat, &face_flux);
    Ok(LocalSolution {
        u: CellField { support: Support::Interior, values: u },
        flux,
        face_flux,
        i_loc_primal: i_primal,
        i_loc_dual: -i_primal,
        residual: stats.rel_residual,
        cg_iterations: stats.iterations,
    })
}

/// Oriented physical flux `q = -kappa du/dx` on every face.
fn face_fluxes(lat: &LocalLattice, kappa: &[f64], u: &[f64]) -> Vec<Vec<f64>> {
    let h = lat.h;
    (0..lat.dim)
        .map(|d| {
            let mut q = vec![0.0; lat.n_faces(d)];
            let mut coord = vec![0usize; lat.dim];
            for rank in 0..lat.n_cells() {
                coord.copy_from_slice(&lat.coord_of(rank));
                let fr = lat.face_rank(d, &coord);
                if coord[d] == 0 {
                    q[fr] = -2.0 * kappa[rank] * (u[rank] - 0.0) / h;
                } else {
                    let mut left = coord.clone();
                    left[d] -= 1;
                    let lrank = lat.cell_rank(&left);
                    let kf = harmonic(kappa[lrank], kappa[rank]);
                    q[fr] = -kf * (u[rank] - u[lrank]) / h;
                }
                if coord[d] == lat.dims[d] - 1 {
                    let mut fc = coord.clone();
                    fc[d] += 1;
                    q[lat.face_rank(d, &fc)] = -2.0 * kappa[rank] * (0.0 - u[rank]) / h;
                }
            }
            q
        })
        .collect()
}

fn average_to_cells(lat: &LocalLattice, face_flux: &[Vec<f64>]) -> VectorCellField {
    let n = lat.n_cells();
    let mut values = vec![0.0; n * lat.dim];
    for rank in 0..n {
        let coord = lat.coord_of(rank);
        for d in 0..lat.dim {
            let mut right = coord.clone();
            right[d] += 1;
            let ql = face_flux[d][lat.face_rank(d, &coord)];
            let qr = face_flux[d][lat.face_rank(d, &right)];
            values[rank * lat.dim + d] = 0.5 * (ql + qr);
        }
    }
    VectorCellField { support: Support::Interior, dim: lat.dim, values }
}

/// Complementary energy of an arbitrary face flux at a given design,
/// `1/2 sum_f kappa_f^{-1} q_f^2 vol_f` (half-cell volumes on the boundary).
pub fn face_complementary_energy(
    face_flux: &[Vec<f64>],
    kappa: &DesignField,
    mesh: &Mesh,
) -> f64 {
    let lat = LocalLattice::new(mesh);
    let kap: Vec<f64> = mesh.interior_ids.iter().map(|&id| kappa.kappa[id as usize]).collect();
    let hn = mesh.measure();
    let mut total = 0.0;
    let mut coord = vec![0usize; lat.dim];
    for rank in 0..lat.n_cells() {
        coord.copy_from_slice(&lat.coord_of(rank));
        for d in 0..lat.dim {
            let q = face_flux[d][lat.face_rank(d, &coord)];
            if coord[d] == 0 {
                total += 0.5 * (q * q / kap[rank]) * (hn / 2.0);
            } else {
                let mut left = coord.clone();
                left[d] -= 1;
                let kf = harmonic(kap[lat.cell_rank(&left)], kap[rank]);
                total += 0.5 * (q * q / kf) * hn;
            }
            if coord[d] == lat.dims[d] - 1 {
                let mut fc = coord.clone();
                fc[d] += 1;
                let q = face_flux[d][lat.face_rank(d, &fc)];
                total += 0.5 * (q * q / kap[rank]) * (hn / 2.0);
            }
        }
    }
    total
}

/// Per-cell dual-energy weights of a face flux: `m_k = 1/2 sum_{f of k} q_f^2`,
/// so that the complementary energy is `1/2 sum_k kappa_k^{-1} m_k h^n`.
pub fn local_energy_weights(face_flux: &[Vec<f64>], mesh: &Mesh) -> Vec<f64> {
    let lat = LocalLattice::new(mesh);
    let n = lat.n_cells();
    let mut m = vec![0.0; n];
    let mut coord = vec![0usize; lat.dim];
    for rank in 0..n {
        coord.copy_from_slice(&lat.coord_of(rank));
        for d in 0..lat.dim {
            let mut right = coord.clone();
            right[d] += 1;
            let ql = face_flux[d][lat.face_rank(d, &coord)];
            let qr = face_flux[d][lat.face_rank(d, &right)];
            m[rank] += 0.5 * (ql * ql + qr * qr);
        }
    }
    m
}

#[derive(Debug, Clone)]
pub struct LocalDesignResult {
    pub kappa: DesignField,
    pub d_star: f64,
    pub iterations: usize,
    pub descent_history: Vec<f64>,
    pub converged: bool,
    pub volume_slack: f64,
}

/// Local design optimization by the same alternating scheme as the nonlocal
/// problem: flux step = Dirichlet solve (its face flux is the exact Kelvin
/// minimizer by discrete duality), design step = water-filling clamp.
pub fn optimize_local_design(
    f: &SourceField,
    bounds: Bounds,
    mesh: &Mesh,
    opts: &crate::design_opt::OptimizeOptions,
    solve: &SolveOptions,
) -> Result<LocalDesignResult> {
    let mut kappa = DesignField::gamma_uniform(mesh, bounds);
    let f_is_zero = cell_norm(&f.values, mesh) == 0.0;
    let mut history = Vec::new();
    let mut prev = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.max_iters {
        iterations = it;
        let sol = solve_local(&kappa, f, mesh, solve)?;
        let d = sol.i_loc_dual;
        if d > prev + 1e-12 {
            return Err(Error::Structural(format!(
                "optimize_local_design: objective increased from {prev:.15e} to {d:.15e}"
            )));
        }
        history.push(d);
        let done = f_is_zero || (prev - d).abs() <= opts.rel_tol * d.abs().max(f64::MIN_POSITIVE);
        prev = d;
        if done {
            converged = true;
            break;
        }
        let weights = local_energy_weights(&sol.face_flux, mesh);
        kappa = crate::design_opt::kappa_subproblem(&weights, bounds, mesh)?;
    }
    let report = check_admissible(&kappa, mesh);
    Ok(LocalDesignResult {
        kappa,
        d_star: *history.last().unwrap(),
        iterations,
        descent_history: history,
        converged,
        volume_slack: report.volume_slack,
    })
}

/// `||div_h q - f||_{L2(Omega)}` with centered differences where both lattice
/// neighbors exist and one-sided differences at the boundary of the field's
/// support.
pub fn divergence_residual(q: &VectorCellField, f: &SourceField, mesh: &Mesh) -> f64 {
    let dim = mesh.domain.dim;
    let h = mesh.h;
    let value_at = |cell: u32, d: usize| -> Option<f64> {
        match q.support {
            Support::AllCells => Some(q.values[cell as usize * dim + d]),
            Support::Interior => {
                let r = mesh.interior_rank[cell as usize];
                if r == crate::geometry::NO_RANK {
                    None
                } else {
                    Some(q.values[r as usize * dim + d])
                }
            }
        }
    };
    let mut total = 0.0;
    for (rank, &cell) in mesh.interior_ids.iter().enumerate() {
        let coord = mesh.coords(cell);
        let mut div = 0.0;
        for d in 0..dim {
            let mut plus = coord.clone();
            plus[d] += 1;
            let mut minus = coord.clone();
            minus[d] -= 1;
            let vp = mesh.cell_at(&plus).and_then(|c| value_at(c, d));
            let vm = mesh.cell_at(&minus).and_then(|c| value_at(c, d));
            let here = value_at(cell, d).unwrap_or(0.0);
            div += match (vp, vm) {
                (Some(p), Some(m)) => (p - m) / (2.0 * h),
                (Some(p), None) => (p - here) / h,
                (None, Some(m)) => (here - m) / h,
                (None, None) => 0.0,
            };
        }
        let diff = div - f.values.values[rank];
        total += diff * diff;
    }
    (total * mesh.measure()).sqrt()
}
