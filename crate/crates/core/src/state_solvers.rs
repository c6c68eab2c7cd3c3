//! State problems: the nonlocal Dirichlet (primal) solve, the nonlocal
//! Kelvin (dual, mixed) solve, and the inf-sup / stability diagnostics.
//!
//! The dual problem is solved by reduction: the mixed optimality system is
//! equivalent to the primal equation with `qdd = -kdd * G u`, and the solver
//! exploits that while independently checking the divergence constraint
//! residual afterwards, so the equivalence is verified on every solve rather
//! than assumed. A dense direct KKT path for cross-checking lives in
//! [`crate::dense`].

use crate::error::{Error, Result};
use crate::geometry::{Mesh, PairList, NO_RANK};
use crate::linalg::{cg, dot, smallest_pencil_eigenvalue};
use crate::material::{pair_conductivity, AveragingScheme, DesignField};
use crate::operators::{
    apply_divergence, apply_gradient, cell_inner, cell_norm, pair_inner, CellField, PairFlux,
    Support, SymPairField,
};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Volumetric heat source presets; all are evaluated at cell centers.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "preset")]
pub enum SourcePreset {
    Constant { amplitude: f64 },
    GaussianBump { amplitude: f64, sigma: f64 },
    Checkerboard { amplitude: f64, blocks: usize },
    Custom,
}

#[derive(Debug, Clone)]
pub struct SourceField {
    pub preset: SourcePreset,
    /// Values on interior cells.
    pub values: CellField,
}

impl SourceField {
    pub fn from_preset(mesh: &Mesh, preset: &SourcePreset) -> Self {
        let domain = &mesh.domain;
        let values = match preset {
            SourcePreset::Constant { amplitude } => {
                CellField::from_fn_interior(mesh, |_| *amplitude)
            }
            SourcePreset::GaussianBump { amplitude, sigma } => {
                let center: Vec<f64> =
                    (0..domain.dim).map(|d| 0.5 * (domain.lo[d] + domain.hi[d])).collect();
                CellField::from_fn_interior(mesh, |x| {
                    let r2: f64 = (0..domain.dim).map(|d| (x[d] - center[d]).powi(2)).sum();
                    amplitude * (-r2 / (2.0 * sigma * sigma)).exp()
                })
            }
            SourcePreset::Checkerboard { amplitude, blocks } => {
                CellField::from_fn_interior(mesh, |x| {
                    let mut parity = 0usize;
                    for d in 0..domain.dim {
                        let len = domain.hi[d] - domain.lo[d];
                        let k = (((x[d] - domain.lo[d]) / (len / *blocks as f64)) as usize)
                            .min(blocks - 1);
                        parity += k;
                    }
                    if parity % 2 == 0 {
                        *amplitude
                    } else {
                        -*amplitude
                    }
                })
            }
            SourcePreset::Custom => CellField::zeros_interior(mesh),
        };
        SourceField { preset: preset.clone(), values }
    }

    pub fn from_values(values: CellField) -> Self {
        SourceField { preset: SourcePreset::Custom, values }
    }
}

/// Sparse SPD stiffness over interior unknowns; the quadratic form is
/// `a(kdd; u, u) = 2 sum_{i<j} kdd_{ij} omega_{ij}^2 (u_i - u_j)^2 h^{2n}`
/// with the collar eliminated by the zero extension.
#[derive(Debug, Clone)]
pub struct Stiffness {
    pub n: usize,
    pub diag: Vec<f64>,
    row_offsets: Vec<u32>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl Stiffness {
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(r, yr)| {
            let mut acc = self.diag[r] * x[r];
            let lo = self.row_offsets[r] as usize;
            let hi = self.row_offsets[r + 1] as usize;
            for k in lo..hi {
                acc += self.vals[k] * x[self.cols[k] as usize];
            }
            *yr = acc;
        });
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut y = vec![0.0; self.n];
        self.apply(x, &mut y);
        dot(x, &y)
    }
}

pub fn assemble_stiffness(kdd: &SymPairField, pairs: &PairList, mesh: &Mesh) -> Stiffness {
    let n = mesh.n_interior();
    let h2n = mesh.measure() * mesh.measure();
    let mut diag = vec![0.0; n];
    let mut row_offsets = vec![0u32; n + 1];
    // first pass: diagonal and interior-neighbor counts
    for (r, &cell) in mesh.interior_ids.iter().enumerate() {
        let mut d = 0.0;
        let mut count = 0u32;
        for e in pairs.neighbors(cell) {
            let c = 2.0 * h2n * kdd.values[e.pair as usize] * pairs.omega[e.pair as usize].powi(2);
            d += c;
            if mesh.interior_rank[e.other as usize] != NO_RANK {
                count += 1;
            }
        }
        diag[r] = d;
        row_offsets[r + 1] = row_offsets[r] + count;
    }
    let nnz = row_offsets[n] as usize;
    let mut cols = vec![0u32; nnz];
    let mut vals = vec![0.0; nnz];
    for (r, &cell) in mesh.interior_ids.iter().enumerate() {
        let mut k = row_offsets[r] as usize;
        for e in pairs.neighbors(cell) {
            let other_rank = mesh.interior_rank[e.other as usize];
            if other_rank != NO_RANK {
                cols[k] = other_rank;
                vals[k] = -2.0
                    * h2n
                    * kdd.values[e.pair as usize]
                    * pairs.omega[e.pair as usize].powi(2);
                k += 1;
            }
        }
    }
    Stiffness { n, diag, row_offsets, cols, vals }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Relative residual target for the linear solve.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-10, max_iters: 100_000 }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Residuals {
    /// Relative residual of the linear solve.
    pub linear_solve: f64,
    /// Relative residual of the divergence constraint (dual solves only).
    pub constraint: Option<f64>,
}

/// Solution of a state problem at a fixed design.
#[derive(Debug, Clone)]
pub struct StateSolution {
    pub u: CellField,
    pub q: Option<PairFlux>,
    /// Primal energy (Dirichlet value).
    pub energy_primal: f64,
    /// Dual energy (Kelvin value), present after a dual solve.
    pub energy_dual: Option<f64>,
    pub residuals: Residuals,
    pub cg_iterations: usize,
}

fn check_connectivity(mesh: &Mesh, pairs: &PairList) -> Result<()> {
    for &cell in &mesh.interior_ids {
        if pairs.neighbors(cell).is_empty() {
            return Err(Error::Structural(format!(
                "interior cell {cell} has no interaction partners; the divergence cannot be surjective"
            )));
        }
    }
    Ok(())
}

/// Solve the nonlocal Dirichlet problem `a(kdd; u, v) = l(v)`.
pub fn solve_primal(
    kappa: &DesignField,
    f: &SourceField,
    scheme: AveragingScheme,
    mesh: &Mesh,
    pairs: &PairList,
    opts: &SolveOptions,
) -> Result<StateSolution> {
    kappa.validate_bounds(mesh)?;
    check_connectivity(mesh, pairs)?;
    let kdd = pair_conductivity(kappa, scheme, pairs);
    solve_primal_assembled(&kdd, f, mesh, pairs, opts)
}

fn solve_primal_assembled(
    kdd: &SymPairField,
    f: &SourceField,
    mesh: &Mesh,
    pairs: &PairList,
    opts: &SolveOptions,
) -> Result<StateSolution> {
    let a = assemble_stiffness(kdd, pairs, mesh);
    let hn = mesh.measure();
    let b: Vec<f64> = f.values.values.iter().map(|&v| v * hn).collect();
    let (u, stats) = cg(|x, y| a.apply(x, y), &b, opts.tol, opts.max_iters, Some(&a.diag))?;
    if !stats.converged {
        return Err(Error::Solver(format!(
            "primal cg stalled after {} iterations at relative residual {:.3e}",
            stats.iterations, stats.rel_residual
        )));
    }
    let quad = a.quadratic_form(&u);
    let ell = dot(&b, &u);
    let energy = 0.5 * quad - ell;
    Ok(StateSolution {
        u: CellField { support: Support::Interior, values: u },
        q: None,
        energy_primal: energy,
        energy_dual: None,
        residuals: Residuals { linear_solve: stats.rel_residual, constraint: None },
        cg_iterations: stats.iterations,
    })
}

/// Optimal two-point flux at a solved temperature: `qdd = -kdd * G u`.
pub fn optimal_flux(
    u: &CellField,
    kdd: &SymPairField,
    pairs: &PairList,
    mesh: &Mesh,
) -> PairFlux {
    let gu = apply_gradient(u, pairs, mesh);
    PairFlux {
        values: (0..pairs.len())
            .into_par_iter()
            .map(|p| -kdd.values[p] * gu.values[p])
            .collect(),
    }
}

/// Dual (Kelvin) energy `Ihat = 1/2 int kdd^{-1} qdd^2`.
pub fn dual_energy(q: &PairFlux, kdd: &SymPairField, pairs: &PairList, mesh: &Mesh) -> f64 {
    let weighted = PairFlux {
        values: (0..pairs.len()).map(|p| q.values[p] / kdd.values[p]).collect(),
    };
    0.5 * pair_inner(&weighted, q, pairs, mesh).expect("same pair list")
}

/// Solve the nonlocal Kelvin problem (mixed system) for the flux and the
/// temperature multiplier. The divergence constraint residual is measured
/// explicitly: a failure of `||D q - f|| <= 100 tol ||f||` means the
/// primal/dual equivalence broke and is reported as a solver error.
pub fn solve_kelvin(
    kappa: &DesignField,
    f: &SourceField,
    scheme: AveragingScheme,
    mesh: &Mesh,
    pairs: &PairList,
    opts: &SolveOptions,
) -> Result<StateSolution> {
    kappa.validate_bounds(mesh)?;
    check_connectivity(mesh, pairs)?;
    let kdd = pair_conductivity(kappa, scheme, pairs);
    let mut sol = solve_primal_assembled(&kdd, f, mesh, pairs, opts)?;
    let q = optimal_flux(&sol.u, &kdd, pairs, mesh);
    let div = apply_divergence(&q, pairs, mesh);
    let mut diff = div.clone();
    for (dv, fv) in diff.values.iter_mut().zip(&f.values.values) {
        *dv -= fv;
    }
    let f_norm = cell_norm(&f.values, mesh);
    let constraint = if f_norm > 0.0 { cell_norm(&diff, mesh) / f_norm } else { 0.0 };
    if constraint > 100.0 * opts.tol {
        return Err(Error::Solver(format!(
            "kelvin solve: divergence constraint residual {constraint:.3e} exceeds 100 * tol"
        )));
    }
    sol.energy_dual = Some(dual_energy(&q, &kdd, pairs, mesh));
    sol.q = Some(q);
    sol.residuals.constraint = Some(constraint);
    Ok(sol)
}

/// Relative duality gap `|Ihat + Icheck| / max(1, |Icheck|)`.
pub fn duality_gap(sol: &StateSolution) -> Option<f64> {
    sol.energy_dual
        .map(|ihat| (ihat + sol.energy_primal).abs() / sol.energy_primal.abs().max(1.0))
}

/// Smallest eigenvalue of the unit-conductivity gradient pencil,
/// `||G u||^2_pairs = nu ||u||^2_{L2(Omega)}`. Positive exactly when the
/// discrete gradient has trivial kernel.
pub fn smallest_gradient_eigenvalue(mesh: &Mesh, pairs: &PairList) -> Result<f64> {
    let ones = SymPairField { values: vec![1.0; pairs.len()] };
    let a1 = assemble_stiffness(&ones, pairs, mesh);
    smallest_pencil_eigenvalue(
        |x, y| a1.apply(x, y),
        a1.n,
        mesh.measure(),
        &a1.diag,
        1e-11,
    )
}

/// Discrete Poincare constant: `||u|| <= C ||G u||` with `C = nu_min^{-1/2}`.
pub fn poincare_constant(mesh: &Mesh, pairs: &PairList) -> Result<f64> {
    let nu = smallest_gradient_eigenvalue(mesh, pairs)?;
    if nu <= 0.0 {
        return Err(Error::Structural(format!(
            "gradient kernel is not trivial on this mesh (nu_min = {nu:.3e})"
        )));
    }
    Ok(1.0 / nu.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfsupMethod {
    /// Dense Schur complement for small meshes, reduced route otherwise.
    Auto,
    /// Assemble `B M_Q^{-1} B^T` column by column and take the smallest
    /// eigenvalue against the domain mass matrix.
    DenseSchur,
    /// Evaluate through the gradient pencil: with `nu = nu_min` the Schur
    /// operator's smallest eigenvalue equals `nu / (1 + nu)`.
    Reduced,
}

const DENSE_SCHUR_LIMIT: usize = 700;

/// Discrete inf-sup (LBB) constant of the mixed form,
/// `inf_v sup_q b(q, v) / (||v|| ||q||_Q)`, as the square root of the
/// smallest eigenvalue of the Schur operator relative to the domain mass.
pub fn infsup_constant(mesh: &Mesh, pairs: &PairList) -> Result<f64> {
    infsup_constant_with(mesh, pairs, InfsupMethod::Auto)
}

pub fn infsup_constant_with(mesh: &Mesh, pairs: &PairList, method: InfsupMethod) -> Result<f64> {
    let method = match method {
        InfsupMethod::Auto => {
            if mesh.n_interior() <= DENSE_SCHUR_LIMIT {
                InfsupMethod::DenseSchur
            } else {
                InfsupMethod::Reduced
            }
        }
        m => m,
    };
    match method {
        InfsupMethod::Reduced => {
            let nu = smallest_gradient_eigenvalue(mesh, pairs)?;
            if nu <= 0.0 {
                return Err(Error::Structural("gradient pencil is singular".into()));
            }
            Ok((nu / (1.0 + nu)).sqrt())
        }
        InfsupMethod::DenseSchur => infsup_dense_schur(mesh, pairs),
        InfsupMethod::Auto => unreachable!(),
    }
}

fn infsup_dense_schur(mesh: &Mesh, pairs: &PairList) -> Result<f64> {
    let ni = mesh.n_interior();
    let np = pairs.len();
    let hn = mesh.measure();
    let h2n = hn * hn;
    let h3n = h2n * hn;
    // G: pairs x interior, entries +/- omega
    let apply_g = |x: &[f64], out: &mut [f64]| {
        out.par_iter_mut().enumerate().for_each(|(p, o)| {
            let ri = mesh.interior_rank[pairs.i[p] as usize];
            let rj = mesh.interior_rank[pairs.j[p] as usize];
            let mut v = 0.0;
            if ri != NO_RANK {
                v += x[ri as usize];
            }
            if rj != NO_RANK {
                v -= x[rj as usize];
            }
            *o = v * pairs.omega[p];
        });
    };
    let apply_gt = |q: &[f64], out: &mut [f64]| {
        out.par_iter_mut().enumerate().for_each(|(r, o)| {
            let cell = mesh.interior_ids[r];
            let mut acc = 0.0;
            for e in pairs.neighbors(cell) {
                acc += e.sign as f64 * q[e.pair as usize] * pairs.omega[e.pair as usize];
            }
            *o = acc;
        });
    };
    // M_Q = 2 h^{2n} I + 4 h^{3n} G G^T, SPD on the pair space
    let mq_diag: Vec<f64> = (0..np)
        .map(|p| {
            let mut cnt = 0.0;
            if mesh.interior_rank[pairs.i[p] as usize] != NO_RANK {
                cnt += 1.0;
            }
            if mesh.interior_rank[pairs.j[p] as usize] != NO_RANK {
                cnt += 1.0;
            }
            2.0 * h2n + 4.0 * h3n * cnt * pairs.omega[p].powi(2)
        })
        .collect();
    let mut scratch_int = vec![0.0; ni];
    let mut s = DMatrix::<f64>::zeros(ni, ni);
    let mut gk = vec![0.0; np];
    let mut col = vec![0.0; ni];
    for k in 0..ni {
        scratch_int.iter_mut().for_each(|v| *v = 0.0);
        scratch_int[k] = 1.0;
        apply_g(&scratch_int, &mut gk);
        let apply_mq = |q: &[f64], out: &mut [f64]| {
            let mut tmp_int = vec![0.0; ni];
            apply_gt(q, &mut tmp_int);
            let mut tmp_pair = vec![0.0; np];
            apply_g(&tmp_int, &mut tmp_pair);
            for p in 0..np {
                out[p] = 2.0 * h2n * q[p] + 4.0 * h3n * tmp_pair[p];
            }
        };
        let (z, st) = cg(apply_mq, &gk, 1e-12, 100_000, Some(&mq_diag))?;
        if !st.converged {
            return Err(Error::Solver(format!(
                "inf-sup: M_Q solve stalled at relative residual {:.3e}",
                st.rel_residual
            )));
        }
        apply_gt(&z, &mut col);
        for r in 0..ni {
            s[(r, k)] = 4.0 * h2n * h2n * col[r] / hn;
        }
    }
    // enforce symmetry lost to solver tolerance
    let st = (&s + s.transpose()) * 0.5;
    let eig = st.symmetric_eigenvalues();
    let lambda_min = eig.iter().fold(f64::INFINITY, |a, &b| a.min(b)).max(0.0);
    Ok(lambda_min.sqrt())
}

/// Stability ratio `(||q||_Q + ||u||) / ||f||`, reported as 0 for `f = 0`.
pub fn stability_check(
    sol: &StateSolution,
    f: &SourceField,
    mesh: &Mesh,
    pairs: &PairList,
) -> Result<f64> {
    let q = sol
        .q
        .as_ref()
        .ok_or_else(|| Error::Structural("stability_check requires a dual solve".into()))?;
    let f_norm = cell_norm(&f.values, mesh);
    if f_norm == 0.0 {
        return Ok(0.0);
    }
    let qn2 = pair_inner(q, q, pairs, mesh)?;
    let div = apply_divergence(q, pairs, mesh);
    let dn2 = cell_inner(&div, &div, mesh);
    let un = cell_norm(&sol.u, mesh);
    Ok(((qn2 + dn2).sqrt() + un) / f_norm)
}
