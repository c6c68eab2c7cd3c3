//! Small linear-algebra utilities: deterministic reductions, a Jacobi
//! preconditioned conjugate gradient solver, inverse iteration for the
//! smallest eigenvalue of an SPD pencil, and Gauss-Legendre quadrature.
//!
//! All reductions run over fixed-size chunks whose partial sums are combined
//! in chunk order, so results are bit-identical for any worker thread count.

use crate::error::{Error, Result};
use rayon::prelude::*;

const CHUNK: usize = 4096;

/// Deterministic (chunk-ordered) dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let partials: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(ca, cb)| ca.iter().zip(cb).map(|(x, y)| x * y).sum::<f64>())
        .collect();
    partials.iter().sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// y += alpha * x
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.par_chunks_mut(CHUNK).zip(x.par_chunks(CHUNK)).for_each(|(cy, cx)| {
        for (yi, xi) in cy.iter_mut().zip(cx) {
            *yi += alpha * xi;
        }
    });
}

#[derive(Debug, Clone)]
pub struct CgStats {
    pub iterations: usize,
    pub rel_residual: f64,
    pub converged: bool,
}

/// Conjugate gradients for an SPD operator given as a matvec closure.
///
/// `precond_diag`, when given, applies Jacobi preconditioning with the
/// reciprocal of the supplied diagonal. Convergence is declared when
/// `||b - Ax|| <= tol * ||b||`. A non-positive curvature `p'Ap` aborts with a
/// structural error since it contradicts the SPD assumption.
pub fn cg<F>(
    apply: F,
    b: &[f64],
    tol: f64,
    max_iters: usize,
    precond_diag: Option<&[f64]>,
) -> Result<(Vec<f64>, CgStats)>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let norm_b = norm2(b);
    if norm_b == 0.0 {
        return Ok((vec![0.0; n], CgStats { iterations: 0, rel_residual: 0.0, converged: true }));
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    let apply_precond = |r: &[f64], z: &mut [f64]| match precond_diag {
        Some(d) => {
            for i in 0..r.len() {
                z[i] = r[i] / d[i];
            }
        }
        None => z.copy_from_slice(r),
    };
    apply_precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut stats = CgStats { iterations: 0, rel_residual: 1.0, converged: false };
    for it in 1..=max_iters {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Structural(format!(
                "cg: non-positive curvature p'Ap = {pap:.3e} at iteration {it}; operator is not SPD"
            )));
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rnorm = norm2(&r);
        stats.iterations = it;
        stats.rel_residual = rnorm / norm_b;
        if stats.rel_residual <= tol {
            stats.converged = true;
            break;
        }
        apply_precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok((x, stats))
}

/// Smallest eigenvalue of the pencil `A x = lambda * mass * x` (mass a positive
/// scalar) for SPD `A`, by inverse power iteration with CG inner solves.
///
/// Starts from the all-ones vector (the ground state of these operators is
/// sign-definite, so the overlap is never zero) and stops when the Rayleigh
/// quotient is stationary to `tol` relative.
pub fn smallest_pencil_eigenvalue<F>(
    apply: F,
    dim: usize,
    mass: f64,
    diag: &[f64],
    tol: f64,
) -> Result<f64>
where
    F: Fn(&[f64], &mut [f64]) + Copy,
{
    let mut x = vec![1.0; dim];
    let nx = norm2(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut lambda_prev = f64::INFINITY;
    let mut ax = vec![0.0; dim];
    for _ in 0..500 {
        let rhs: Vec<f64> = x.iter().map(|v| v * mass).collect();
        let (y, st) = cg(apply, &rhs, 1e-12, 50_000, Some(diag))?;
        if !st.converged {
            return Err(Error::Solver(format!(
                "inverse iteration: inner cg stalled at relative residual {:.3e}",
                st.rel_residual
            )));
        }
        let ny = norm2(&y);
        x = y;
        x.iter_mut().for_each(|v| *v /= ny);
        apply(&x, &mut ax);
        let lambda = dot(&x, &ax) / (mass * dot(&x, &x));
        if (lambda - lambda_prev).abs() <= tol * lambda.abs() {
            return Ok(lambda);
        }
        lambda_prev = lambda;
    }
    Ok(lambda_prev)
}

/// Gauss-Legendre nodes and weights on [0, 1].
pub fn gauss_legendre(npoints: usize) -> (Vec<f64>, Vec<f64>) {
    let n = npoints;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // initial guess on [-1, 1], Newton on P_n
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x); // map to [0,1], ascending in i is not required
        weights[i] = 0.5 * w;
    }
    (nodes, weights)
}

/// Legendre polynomial P_n and derivative at x, by recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Least-squares slope of y against x.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        num += (xi - mx) * (yi - my);
        den += (xi - mx) * (xi - mx);
    }
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (nodes, weights) = gauss_legendre(8);
        // int_0^1 x^k dx = 1/(k+1), exact up to degree 15
        for k in 0..=15u32 {
            let s: f64 = nodes.iter().zip(&weights).map(|(&x, &w)| w * x.powi(k as i32)).sum();
            assert_relative_eq!(s, 1.0 / (k as f64 + 1.0), max_relative = 1e-13);
        }
    }

    #[test]
    fn cg_solves_small_spd_system() {
        // A = tridiag(-1, 2, -1), n = 50
        let n = 50;
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                let mut v = 2.0 * x[i];
                if i > 0 {
                    v -= x[i - 1];
                }
                if i + 1 < n {
                    v -= x[i + 1];
                }
                y[i] = v;
            }
        };
        let b = vec![1.0; n];
        let diag = vec![2.0; n];
        let (x, st) = cg(apply, &b, 1e-12, 10_000, Some(&diag)).unwrap();
        assert!(st.converged);
        let mut ax = vec![0.0; n];
        apply(&x, &mut ax);
        for i in 0..n {
            assert!((ax[i] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn inverse_iteration_finds_smallest_eigenvalue() {
        // 1-D Laplacian tridiag(-1,2,-1): lambda_min = 2(1 - cos(pi/(n+1)))
        let n = 40;
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                let mut v = 2.0 * x[i];
                if i > 0 {
                    v -= x[i - 1];
                }
                if i + 1 < n {
                    v -= x[i + 1];
                }
                y[i] = v;
            }
        };
        let diag = vec![2.0; n];
        let lam = smallest_pencil_eigenvalue(&apply, n, 1.0, &diag, 1e-12).unwrap();
        let exact = 2.0 * (1.0 - (std::f64::consts::PI / (n as f64 + 1.0)).cos());
        assert_relative_eq!(lam, exact, max_relative = 1e-8);
    }

    #[test]
    fn fit_slope_recovers_exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 3.5 * v - 2.0).collect();
        assert_relative_eq!(fit_slope(&x, &y), 3.5, max_relative = 1e-13);
    }
}
