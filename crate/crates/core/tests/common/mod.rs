//! Shared fixtures and independent reference optimizers for the integration
//! suite. The oracles here deliberately avoid the library's alternating
//! minimization and water-filling code paths: the joint problems are solved
//! by projected accelerated gradient descent on the raw variables, and the
//! design subproblem by a Lagrangian search over a dense kappa grid.

#![allow(dead_code)]

use nalgebra::{Cholesky, DMatrix, DVector};
use nlkelvin::dense::gradient_matrix;
use nlkelvin::geometry::{build_mesh, build_pairs, Domain, Mesh, PairList};
use nlkelvin::kernel::{KernelFamily, KernelSpec};
use nlkelvin::material::Bounds;
use nlkelvin::state_solvers::{SourceField, SourcePreset};

pub fn unit_square_setup(
    h: f64,
    delta: f64,
    family: KernelFamily,
) -> (Mesh, PairList) {
    let mesh = build_mesh(&Domain::unit_square(), h, delta).unwrap();
    let kernel = KernelSpec::new(family, delta, 2).unwrap();
    let pairs = build_pairs(&mesh, &kernel).unwrap();
    (mesh, pairs)
}

pub fn constant_source(mesh: &Mesh, amplitude: f64) -> SourceField {
    SourceField::from_preset(mesh, &SourcePreset::Constant { amplitude })
}

/// Euclidean projection onto `{l <= x <= u, sum(x) * hn <= budget}`: the
/// projection is `clamp(x - mu)` of the *raw* point with the shift found by
/// bisection (clamping first and shifting after is not a projection and has
/// spurious fixed points).
fn project_box_budget(x: &mut [f64], lo: f64, hi: f64, hn: f64, budget: f64) {
    let clamped_vol: f64 = x.iter().map(|&v| v.clamp(lo, hi)).sum::<f64>() * hn;
    if clamped_vol <= budget {
        for v in x.iter_mut() {
            *v = v.clamp(lo, hi);
        }
        return;
    }
    let mut a = 0.0;
    let mut b = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - lo;
    for _ in 0..200 {
        let mu = 0.5 * (a + b);
        let v: f64 = x.iter().map(|&v| (v - mu).clamp(lo, hi)).sum::<f64>() * hn;
        if v > budget {
            a = mu;
        } else {
            b = mu;
        }
    }
    for v in x.iter_mut() {
        *v = (*v - b).clamp(lo, hi);
    }
}

/// Joint projected-FISTA solve of the nonlocal dual design problem
/// `min_{kappa in A_delta, q: Dq = f} Ihat(kdd(kappa); q)` with harmonic
/// averaging. Returns the best objective value found.
pub fn nonlocal_joint_oracle(
    mesh: &Mesh,
    pairs: &PairList,
    f: &SourceField,
    bounds: Bounds,
    iters: usize,
) -> f64 {
    let np = pairs.len();
    let nc = mesh.n_cells();
    let hn = mesh.measure();
    let h2n = hn * hn;
    let budget = bounds.gamma * mesh.interior_volume();
    // dense divergence D = -2 h^n G^T and the Gram factor for the affine projection
    let g = gradient_matrix(mesh, pairs);
    let d = g.transpose() * (-2.0 * hn);
    let ddt = &d * d.transpose();
    let chol: Cholesky<f64, nalgebra::Dyn> = ddt.cholesky().expect("divergence has full row rank");
    let fvec = DVector::from_column_slice(&f.values.values);

    let obj = |kappa: &[f64], q: &[f64]| -> f64 {
        let mut total = 0.0;
        for p in 0..np {
            let ki = kappa[pairs.i[p] as usize];
            let kj = kappa[pairs.j[p] as usize];
            total += (1.0 / ki + 1.0 / kj) * q[p] * q[p];
        }
        0.5 * h2n * total
    };
    let grad = |kappa: &[f64], q: &[f64], gk: &mut [f64], gq: &mut [f64]| {
        gk.iter_mut().for_each(|v| *v = 0.0);
        for p in 0..np {
            let (a, b) = (pairs.i[p] as usize, pairs.j[p] as usize);
            let q2 = q[p] * q[p];
            gk[a] -= 0.5 * h2n * q2 / (kappa[a] * kappa[a]);
            gk[b] -= 0.5 * h2n * q2 / (kappa[b] * kappa[b]);
            gq[p] = h2n * (1.0 / kappa[a] + 1.0 / kappa[b]) * q[p];
        }
    };
    let project = |kappa: &mut [f64], q: &mut [f64]| {
        // box everywhere, volume budget on interior cells only
        for v in kappa.iter_mut() {
            *v = v.clamp(bounds.kappa_min, bounds.kappa_max);
        }
        let mut interior: Vec<f64> =
            mesh.interior_ids.iter().map(|&id| kappa[id as usize]).collect();
        project_box_budget(&mut interior, bounds.kappa_min, bounds.kappa_max, hn, budget);
        for (r, &id) in mesh.interior_ids.iter().enumerate() {
            kappa[id as usize] = interior[r];
        }
        // affine projection onto D q = f
        let qv = DVector::from_column_slice(q);
        let r = &d * &qv - &fvec;
        let y = chol.solve(&r);
        let corrected = qv - d.transpose() * y;
        q.copy_from_slice(corrected.as_slice());
    };

    let mut kappa = vec![bounds.gamma; nc];
    let mut q = vec![0.0; np];
    project(&mut kappa, &mut q);
    let mut yk = kappa.clone();
    let mut yq = q.clone();
    let mut t = 1.0f64;
    let mut l = 1.0f64;
    let mut gk = vec![0.0; nc];
    let mut gq = vec![0.0; np];
    let mut best = obj(&kappa, &q);
    let mut prev_val = best;
    for _ in 0..iters {
        grad(&yk, &yq, &mut gk, &mut gq);
        let gy = obj(&yk, &yq);
        // backtracking on the proximal step
        let (mut ck, mut cq);
        loop {
            ck = yk.iter().zip(&gk).map(|(y, g)| y - g / l).collect::<Vec<f64>>();
            cq = yq.iter().zip(&gq).map(|(y, g)| y - g / l).collect::<Vec<f64>>();
            project(&mut ck, &mut cq);
            let v = obj(&ck, &cq);
            let mut lin = gy;
            let mut dist = 0.0;
            for c in 0..nc {
                let dx = ck[c] - yk[c];
                lin += gk[c] * dx;
                dist += dx * dx;
            }
            for p in 0..np {
                let dx = cq[p] - yq[p];
                lin += gq[p] * dx;
                dist += dx * dx;
            }
            if v <= lin + 0.5 * l * dist + 1e-15 {
                break;
            }
            l *= 2.0;
        }
        let val = obj(&ck, &cq);
        if val > prev_val {
            // adaptive restart
            t = 1.0;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        for c in 0..nc {
            yk[c] = ck[c] + beta * (ck[c] - kappa[c]);
        }
        for p in 0..np {
            yq[p] = cq[p] + beta * (cq[p] - q[p]);
        }
        kappa = ck;
        q = cq;
        t = t_next;
        l *= 0.97;
        best = best.min(val);
        prev_val = val;
    }
    best
}

/// 2-D face-flux structures for the local joint oracle.
struct LocalFaces {
    nx: usize,
    ny: usize,
    h: f64,
    /// x-faces then y-faces, flattened.
    n_fx: usize,
    n_fy: usize,
}

impl LocalFaces {
    fn new(nx: usize, ny: usize, h: f64) -> Self {
        LocalFaces { nx, ny, h, n_fx: (nx + 1) * ny, n_fy: nx * (ny + 1) }
    }
    fn cell(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }
    fn fx(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }
    fn fy(&self, i: usize, j: usize) -> usize {
        self.n_fx + i * (self.ny + 1) + j
    }
    fn n_faces(&self) -> usize {
        self.n_fx + self.n_fy
    }
}

/// Joint projected-FISTA solve of the local dual design problem on face
/// fluxes (2-D only). Independent of the library's local solver.
/// `start_kappa` warm-starts the design block (interior cells, lattice
/// order); the flux block always starts from the projected zero flux, so a
/// warm start still certifies joint stationarity of the supplied design.
pub fn local_joint_oracle_2d(
    mesh: &Mesh,
    f: &SourceField,
    bounds: Bounds,
    iters: usize,
    start_kappa: Option<&[f64]>,
) -> f64 {
    assert_eq!(mesh.domain.dim, 2);
    let nx = mesh.interior_dims[0];
    let ny = mesh.interior_dims[1];
    let h = mesh.h;
    let hn = h * h;
    let faces = LocalFaces::new(nx, ny, h);
    let nf = faces.n_faces();
    let ncell = nx * ny;
    let budget = bounds.gamma * mesh.interior_volume();

    // divergence matrix: (Fx[i+1,j] - Fx[i,j] + Fy[i,j+1] - Fy[i,j]) / h = f
    let mut dmat = DMatrix::<f64>::zeros(ncell, nf);
    for i in 0..nx {
        for j in 0..ny {
            let c = faces.cell(i, j);
            dmat[(c, faces.fx(i + 1, j))] += 1.0 / h;
            dmat[(c, faces.fx(i, j))] -= 1.0 / h;
            dmat[(c, faces.fy(i, j + 1))] += 1.0 / h;
            dmat[(c, faces.fy(i, j))] -= 1.0 / h;
        }
    }
    let chol = (&dmat * dmat.transpose()).cholesky().expect("local divergence full rank");
    let fvec = DVector::from_column_slice(&f.values.values);

    // per-face adjacency: cells on each side (usize::MAX = boundary) and volume
    let mut side_a = vec![usize::MAX; nf];
    let mut side_b = vec![usize::MAX; nf];
    let mut vol = vec![0.0; nf];
    for i in 0..=nx {
        for j in 0..ny {
            let fidx = faces.fx(i, j);
            if i > 0 {
                side_a[fidx] = faces.cell(i - 1, j);
            }
            if i < nx {
                side_b[fidx] = faces.cell(i, j);
            }
            vol[fidx] = if i == 0 || i == nx { hn / 2.0 } else { hn };
        }
    }
    for i in 0..nx {
        for j in 0..=ny {
            let fidx = faces.fy(i, j);
            if j > 0 {
                side_a[fidx] = faces.cell(i, j - 1);
            }
            if j < ny {
                side_b[fidx] = faces.cell(i, j);
            }
            vol[fidx] = if j == 0 || j == ny { hn / 2.0 } else { hn };
        }
    }
    let kinv_face = |kappa: &[f64], fidx: usize| -> f64 {
        match (side_a[fidx], side_b[fidx]) {
            (usize::MAX, b) => 1.0 / kappa[b],
            (a, usize::MAX) => 1.0 / kappa[a],
            (a, b) => 0.5 * (1.0 / kappa[a] + 1.0 / kappa[b]),
        }
    };
    let obj = |kappa: &[f64], q: &[f64]| -> f64 {
        (0..nf).map(|fi| 0.5 * kinv_face(kappa, fi) * q[fi] * q[fi] * vol[fi]).sum()
    };
    let grad = |kappa: &[f64], q: &[f64], gk: &mut [f64], gq: &mut [f64]| {
        gk.iter_mut().for_each(|v| *v = 0.0);
        for fi in 0..nf {
            gq[fi] = kinv_face(kappa, fi) * q[fi] * vol[fi];
            let term = 0.5 * q[fi] * q[fi] * vol[fi];
            match (side_a[fi], side_b[fi]) {
                (usize::MAX, b) => gk[b] -= term / (kappa[b] * kappa[b]),
                (a, usize::MAX) => gk[a] -= term / (kappa[a] * kappa[a]),
                (a, b) => {
                    gk[a] -= 0.5 * term / (kappa[a] * kappa[a]);
                    gk[b] -= 0.5 * term / (kappa[b] * kappa[b]);
                }
            }
        }
    };
    let project = |kappa: &mut [f64], q: &mut [f64]| {
        project_box_budget(kappa, bounds.kappa_min, bounds.kappa_max, hn, budget);
        let qv = DVector::from_column_slice(q);
        let r = &dmat * &qv - &fvec;
        let y = chol.solve(&r);
        let corrected = qv - dmat.transpose() * y;
        q.copy_from_slice(corrected.as_slice());
    };

    let mut kappa = match start_kappa {
        Some(k) => k.to_vec(),
        None => vec![bounds.gamma; ncell],
    };
    let mut q = vec![0.0; nf];
    project(&mut kappa, &mut q);
    let mut yk = kappa.clone();
    let mut yq = q.clone();
    let mut t = 1.0f64;
    let mut l = 1.0f64;
    let mut gk = vec![0.0; ncell];
    let mut gq = vec![0.0; nf];
    let mut best = obj(&kappa, &q);
    let mut prev_val = best;
    for _ in 0..iters {
        grad(&yk, &yq, &mut gk, &mut gq);
        let gy = obj(&yk, &yq);
        let (mut ck, mut cq);
        loop {
            ck = yk.iter().zip(&gk).map(|(y, g)| y - g / l).collect::<Vec<f64>>();
            cq = yq.iter().zip(&gq).map(|(y, g)| y - g / l).collect::<Vec<f64>>();
            project(&mut ck, &mut cq);
            let v = obj(&ck, &cq);
            let mut lin = gy;
            let mut dist = 0.0;
            for c in 0..ncell {
                let dx = ck[c] - yk[c];
                lin += gk[c] * dx;
                dist += dx * dx;
            }
            for fi in 0..nf {
                let dx = cq[fi] - yq[fi];
                lin += gq[fi] * dx;
                dist += dx * dx;
            }
            if v <= lin + 0.5 * l * dist + 1e-15 {
                break;
            }
            l *= 2.0;
        }
        let val = obj(&ck, &cq);
        if val > prev_val {
            t = 1.0;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        for c in 0..ncell {
            yk[c] = ck[c] + beta * (ck[c] - kappa[c]);
        }
        for fi in 0..nf {
            yq[fi] = cq[fi] + beta * (cq[fi] - q[fi]);
        }
        kappa = ck;
        q = cq;
        t = t_next;
        l *= 0.97;
        best = best.min(val);
        prev_val = val;
    }
    best
}

/// Lagrangian exhaustive-grid reference for the design subproblem: minimize
/// `sum_i m_i h^n / kappa_i` over the grid `kappa in {kmin + 0.001 k}` subject
/// to the volume budget, via bisection on the multiplier with a full grid
/// scan as the inner minimizer. Returns (kappa, objective value).
pub fn kappa_grid_oracle(
    weights: &[f64],
    bounds: Bounds,
    hn: f64,
    budget: f64,
) -> (Vec<f64>, f64) {
    let step = 0.001;
    let nk = ((bounds.kappa_max - bounds.kappa_min) / step).round() as usize;
    let grid: Vec<f64> = (0..=nk).map(|k| bounds.kappa_min + step * k as f64).collect();
    let inner = |lambda: f64, out: &mut Vec<f64>| -> f64 {
        out.clear();
        let mut vol = 0.0;
        for &m in weights {
            let mut best_k = grid[0];
            let mut best_phi = f64::INFINITY;
            for &k in &grid {
                let phi = m / k + lambda * k;
                if phi < best_phi - 1e-15 {
                    best_phi = phi;
                    best_k = k;
                }
            }
            out.push(best_k);
            vol += best_k * hn;
        }
        vol
    };
    let mut kappa = Vec::new();
    let vol0 = inner(0.0, &mut kappa);
    if vol0 <= budget + 1e-12 {
        let value = weights.iter().zip(&kappa).map(|(&m, &k)| m * hn / k).sum();
        return (kappa, value);
    }
    let mmax = weights.iter().cloned().fold(0.0f64, f64::max);
    let mut lo = 0.0;
    let mut hi = mmax / (bounds.kappa_min * bounds.kappa_min) + 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if inner(mid, &mut kappa) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let _ = inner(hi, &mut kappa);
    let value = weights.iter().zip(&kappa).map(|(&m, &k)| m * hn / k).sum();
    (kappa, value)
}
