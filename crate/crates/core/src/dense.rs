//! Dense direct solvers for small problems.
//!
//! These build the discrete operators as explicit matrices and solve them by
//! factorization, with no shared code path with the iterative solvers. The
//! test suite uses them as independent references; they are practical up to a
//! few thousand unknowns.

use crate::error::{Error, Result};
use crate::geometry::{Mesh, PairList, NO_RANK};
use crate::operators::{PairFlux, SymPairField};
use crate::state_solvers::SourceField;
use nalgebra::{DMatrix, DVector};

/// Dense nonlocal gradient matrix, pairs by interior cells.
pub fn gradient_matrix(mesh: &Mesh, pairs: &PairList) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(pairs.len(), mesh.n_interior());
    for p in 0..pairs.len() {
        let ri = mesh.interior_rank[pairs.i[p] as usize];
        let rj = mesh.interior_rank[pairs.j[p] as usize];
        if ri != NO_RANK {
            g[(p, ri as usize)] += pairs.omega[p];
        }
        if rj != NO_RANK {
            g[(p, rj as usize)] -= pairs.omega[p];
        }
    }
    g
}

/// Dense primal solve by LU on the assembled stiffness.
pub fn primal_dense(
    mesh: &Mesh,
    pairs: &PairList,
    kdd: &SymPairField,
    f: &SourceField,
) -> Result<Vec<f64>> {
    let ni = mesh.n_interior();
    let h2n = mesh.measure() * mesh.measure();
    let mut a = DMatrix::<f64>::zeros(ni, ni);
    for p in 0..pairs.len() {
        let c = 2.0 * h2n * kdd.values[p] * pairs.omega[p].powi(2);
        let ri = mesh.interior_rank[pairs.i[p] as usize];
        let rj = mesh.interior_rank[pairs.j[p] as usize];
        if ri != NO_RANK {
            a[(ri as usize, ri as usize)] += c;
        }
        if rj != NO_RANK {
            a[(rj as usize, rj as usize)] += c;
        }
        if ri != NO_RANK && rj != NO_RANK {
            a[(ri as usize, rj as usize)] -= c;
            a[(rj as usize, ri as usize)] -= c;
        }
    }
    let b = DVector::from_iterator(ni, f.values.values.iter().map(|&v| v * mesh.measure()));
    a.lu()
        .solve(&b)
        .map(|u| u.as_slice().to_vec())
        .ok_or_else(|| Error::Solver("dense primal: singular stiffness".into()))
}

/// Direct solve of the mixed KKT system
/// `[W C; C' 0] [q; u] = [0; -h^n f]` with `W = diag(2 kdd^{-1} h^{2n})` and
/// `C = 2 h^{2n} G`. Returns the flux and the temperature multiplier.
pub fn kelvin_kkt_dense(
    mesh: &Mesh,
    pairs: &PairList,
    kdd: &SymPairField,
    f: &SourceField,
) -> Result<(PairFlux, Vec<f64>)> {
    let np = pairs.len();
    let ni = mesh.n_interior();
    let n = np + ni;
    let h2n = mesh.measure() * mesh.measure();
    let g = gradient_matrix(mesh, pairs);
    let mut kkt = DMatrix::<f64>::zeros(n, n);
    for p in 0..np {
        kkt[(p, p)] = 2.0 * h2n / kdd.values[p];
        for r in 0..ni {
            let c = 2.0 * h2n * g[(p, r)];
            kkt[(p, np + r)] = c;
            kkt[(np + r, p)] = c;
        }
    }
    let mut rhs = DVector::zeros(n);
    for r in 0..ni {
        rhs[np + r] = -mesh.measure() * f.values.values[r];
    }
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Solver("dense KKT: singular saddle system (rank-deficient divergence?)".into()))?;
    let q = PairFlux { values: sol.as_slice()[..np].to_vec() };
    let u = sol.as_slice()[np..].to_vec();
    Ok((q, u))
}

/// Null-space quadratic-programming solve of the Kelvin problem: a minimum
/// norm particular flux plus a correction in the kernel of the divergence,
/// obtained from the eigen-decomposition of `B' B`. Never forms the primal
/// system.
pub fn kelvin_nullspace_dense(
    mesh: &Mesh,
    pairs: &PairList,
    kdd: &SymPairField,
    f: &SourceField,
) -> Result<PairFlux> {
    let np = pairs.len();
    let ni = mesh.n_interior();
    let hn = mesh.measure();
    // constraint matrix B = D (interior cells by pairs), D = -2 h^n G'
    let g = gradient_matrix(mesh, pairs);
    let b = g.transpose() * (-2.0 * hn);
    let fvec = DVector::from_column_slice(&f.values.values);
    // minimum-norm particular solution q0 = B' (B B')^{-1} f
    let bbt = &b * b.transpose();
    let y = bbt
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Structural("nullspace QP: divergence is rank deficient".into()))?
        .solve(&fvec);
    let q0 = b.transpose() * y;
    // null basis from eigenvectors of B'B with (numerically) zero eigenvalue
    let btb = b.transpose() * &b;
    let eig = nalgebra::SymmetricEigen::new(btb);
    let lam_max = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let cut = lam_max * 1e-10;
    let null_cols: Vec<usize> =
        (0..np).filter(|&k| eig.eigenvalues[k].abs() <= cut).collect();
    if null_cols.len() != np - ni {
        return Err(Error::Structural(format!(
            "nullspace QP: kernel dimension {} does not match pairs - interior = {}",
            null_cols.len(),
            np - ni
        )));
    }
    let mut z = DMatrix::<f64>::zeros(np, null_cols.len());
    for (c, &k) in null_cols.iter().enumerate() {
        z.set_column(c, &eig.eigenvectors.column(k));
    }
    let h2n = hn * hn;
    let w = DVector::from_iterator(np, kdd.values.iter().map(|&k| 2.0 * h2n / k));
    let wz = {
        let mut m = z.clone();
        for c in 0..m.ncols() {
            for r in 0..np {
                m[(r, c)] *= w[r];
            }
        }
        m
    };
    let zwz = z.transpose() * &wz;
    let mut wq0 = q0.clone();
    for r in 0..np {
        wq0[r] *= w[r];
    }
    let rhs = -(z.transpose() * wq0);
    let yy = zwz
        .cholesky()
        .ok_or_else(|| Error::Solver("nullspace QP: reduced Hessian not SPD".into()))?
        .solve(&rhs);
    let q = q0 + z * yy;
    Ok(PairFlux { values: q.as_slice().to_vec() })
}

/// Kelvin solve with unconstrained (ordered-pair) storage: both orientations
/// of every pair are independent unknowns and no antisymmetry is imposed.
/// Returns the ordered values, laid out as `[2p] = q(x_i, x_j)` and
/// `[2p+1] = q(x_j, x_i)` for pair `p = (i, j)`.
pub fn kelvin_ordered_dense(
    mesh: &Mesh,
    pairs: &PairList,
    kdd: &SymPairField,
    f: &SourceField,
) -> Result<Vec<f64>> {
    let np = pairs.len();
    let ni = mesh.n_interior();
    let n = 2 * np + ni;
    let hn = mesh.measure();
    let h2n = hn * hn;
    let mut kkt = DMatrix::<f64>::zeros(n, n);
    // energy: sum over ordered pairs kdd^{-1} q^2 h^{2n} (no antisymmetry assumed)
    for p in 0..np {
        kkt[(2 * p, 2 * p)] = 2.0 * h2n / kdd.values[p];
        kkt[(2 * p + 1, 2 * p + 1)] = 2.0 * h2n / kdd.values[p];
    }
    // constraint per interior cell k: sum_j [q(x_j,x_k) - q(x_k,x_j)] omega h^n = f_k
    for p in 0..np {
        let w = pairs.omega[p] * hn;
        let ri = mesh.interior_rank[pairs.i[p] as usize];
        let rj = mesh.interior_rank[pairs.j[p] as usize];
        if ri != NO_RANK {
            let row = 2 * np + ri as usize;
            kkt[(row, 2 * p + 1)] += w; // q(x_j, x_i) seen from i
            kkt[(row, 2 * p)] -= w;
            kkt[(2 * p + 1, row)] += w;
            kkt[(2 * p, row)] -= w;
        }
        if rj != NO_RANK {
            let row = 2 * np + rj as usize;
            kkt[(row, 2 * p)] += w; // q(x_i, x_j) seen from j
            kkt[(row, 2 * p + 1)] -= w;
            kkt[(2 * p, row)] += w;
            kkt[(2 * p + 1, row)] -= w;
        }
    }
    let mut rhs = DVector::zeros(n);
    for r in 0..ni {
        rhs[2 * np + r] = f.values.values[r];
    }
    let sol = kkt
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Solver("ordered KKT: singular saddle system".into()))?;
    Ok(sol.as_slice()[..2 * np].to_vec())
}
