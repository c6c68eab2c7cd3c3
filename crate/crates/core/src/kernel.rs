//! Radial interaction kernels and their second-moment normalization.
//!
//! A kernel is a radial function supported in the open ball of radius
//! `delta`, scaled so that the second moment of its *square* satisfies
//! `int |z|^2 omega^2(z) dz = K_{2,n}^{-1} = n`. Note that the condition is
//! on `omega^2`, not on `omega`; getting this wrong silently rescales every
//! energy in the model.

use crate::error::{Error, Result};
use crate::linalg::gauss_legendre;

/// Sphere surface measure |S^{n-1}| for n = 1, 2, 3.
fn sphere_area(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        _ => unreachable!("dimension checked at construction"),
    }
}

/// Averaged p-th directional moment over the unit sphere,
/// `K_{p,n} = |S^{n-1}|^{-1} int_{S^{n-1}} |s.e|^p ds`.
///
/// Only p = 2 is needed here, where the closed form is `K_{2,n} = 1/n`.
pub fn sphere_moment(p: u32, n: usize) -> Result<f64> {
    if p != 2 {
        return Err(Error::Config(format!(
            "sphere_moment: unsupported moment order p = {p} (only p = 2)"
        )));
    }
    if !(1..=3).contains(&n) {
        return Err(Error::Config(format!(
            "sphere_moment: unsupported dimension n = {n} (need 1, 2 or 3)"
        )));
    }
    Ok(1.0 / n as f64)
}

/// Shipped kernel families. Both satisfy the blanket assumptions (radial,
/// nonnegative, compactly supported, square-integrable); they differ in how
/// the cutoff at `|z| = delta` is approached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// Constant on the ball: `omega(z) = c` for `|z| < delta`.
    ConstantBall,
    /// Linear decay to zero: `omega(z) = c (1 - |z|/delta)` for `|z| < delta`.
    TruncatedTent,
}

impl KernelFamily {
    /// Radial profile g(s) on s = r/delta in [0, 1), before scaling.
    fn profile(self, s: f64) -> f64 {
        match self {
            KernelFamily::ConstantBall => 1.0,
            KernelFamily::TruncatedTent => 1.0 - s,
        }
    }

    /// `int_0^1 s^{n+1} g(s)^2 ds`, the radial factor of the second moment.
    fn radial_moment(self, n: usize) -> f64 {
        let nf = n as f64;
        match self {
            KernelFamily::ConstantBall => 1.0 / (nf + 2.0),
            // int s^{n+1}(1-s)^2 ds = B(n+2, 3) = 2 / ((n+2)(n+3)(n+4))
            KernelFamily::TruncatedTent => 2.0 / ((nf + 2.0) * (nf + 3.0) * (nf + 4.0)),
        }
    }
}

impl std::fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelFamily::ConstantBall => write!(f, "constant_ball"),
            KernelFamily::TruncatedTent => write!(f, "truncated_tent"),
        }
    }
}

/// A normalized interaction kernel `omega_delta`.
#[derive(Debug, Clone, Copy)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub delta: f64,
    pub dim: usize,
    /// Normalization constant c; derived at construction and cached.
    pub scale: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, delta: f64, dim: usize) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::Config(format!("kernel: delta must be positive, got {delta}")));
        }
        if !(1..=3).contains(&dim) {
            return Err(Error::Config(format!("kernel: dimension {dim} not in {{1,2,3}}")));
        }
        // c^2 * |S^{n-1}| * delta^{n+2} * int s^{n+1} g^2 ds = K_{2,n}^{-1} = n
        let target = 1.0 / sphere_moment(2, dim)?;
        let c2 = target / (sphere_area(dim) * delta.powi(dim as i32 + 2) * family.radial_moment(dim));
        Ok(KernelSpec { family, delta, dim, scale: c2.sqrt() })
    }

    /// Kernel value at radius r >= 0; zero for r >= delta.
    pub fn value_at_radius(&self, r: f64) -> f64 {
        if r >= self.delta {
            0.0
        } else {
            self.scale * self.family.profile(r / self.delta)
        }
    }
}

/// Kernel value at an offset z in R^n. Returns 0 outside the support.
pub fn kernel_value(z: &[f64], spec: &KernelSpec) -> f64 {
    debug_assert_eq!(z.len(), spec.dim);
    let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    spec.value_at_radius(r)
}

/// Relative residual of the second-moment condition,
/// `|int |z|^2 omega^2 dz - K_{2,n}^{-1}| / K_{2,n}^{-1}`,
/// evaluated by Gauss-Legendre quadrature with `quad_resolution` radial nodes.
pub fn check_normalization(spec: &KernelSpec, quad_resolution: usize) -> f64 {
    let n = spec.dim;
    let (nodes, weights) = gauss_legendre(quad_resolution.max(32));
    // int_0^delta r^{n+1} omega^2(r) dr, r = delta * s
    let mut radial = 0.0;
    for (&s, &w) in nodes.iter().zip(&weights) {
        let r = spec.delta * s;
        let om = spec.value_at_radius(r);
        radial += w * r.powi(n as i32 + 1) * om * om;
    }
    radial *= spec.delta;
    let integral = sphere_area(n) * radial;
    let target = n as f64;
    (integral - target).abs() / target
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Independent quadrature oracle for K_{2,n}: average of |s.e|^2 over the
    /// sphere, computed as a 1-D integral in the polar angle (n = 2, 3).
    fn sphere_moment_oracle(n: usize) -> f64 {
        match n {
            1 => 1.0,
            2 => {
                // (1/2pi) int_0^{2pi} cos^2 t dt
                let m = 4096;
                let mut s = 0.0;
                for k in 0..m {
                    let t = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / m as f64;
                    s += t.cos().powi(2);
                }
                s / m as f64
            }
            3 => {
                // with e = z-axis: (1/4pi) int |cos t|^2 sin t dt dphi = (1/2) int_0^pi cos^2 t sin t dt
                let (nodes, weights) = gauss_legendre(64);
                let mut s = 0.0;
                for (&x, &w) in nodes.iter().zip(&weights) {
                    let t = std::f64::consts::PI * x;
                    s += w * t.cos().powi(2) * t.sin();
                }
                0.5 * s * std::f64::consts::PI
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn sphere_moment_matches_closed_forms_and_oracle() {
        assert_eq!(sphere_moment(2, 1).unwrap(), 1.0);
        assert_relative_eq!(sphere_moment(2, 2).unwrap(), 0.5, max_relative = 1e-14);
        assert_relative_eq!(sphere_moment(2, 3).unwrap(), 1.0 / 3.0, max_relative = 1e-14);
        for n in 1..=3 {
            assert_relative_eq!(
                sphere_moment(2, n).unwrap(),
                sphere_moment_oracle(n),
                max_relative = 1e-6
            );
        }
    }

    #[test]
    fn sphere_moment_rejects_unsupported_orders() {
        assert!(sphere_moment(4, 2).is_err());
        assert!(sphere_moment(2, 4).is_err());
        assert!(sphere_moment(2, 0).is_err());
    }

    #[test]
    fn constant_ball_scale_closed_form_2d() {
        // c^2 * 2 pi delta^4 / 4 = 2  =>  c = 2 / (sqrt(pi) delta^2)
        let spec = KernelSpec::new(KernelFamily::ConstantBall, 1.0, 2).unwrap();
        let expected = 2.0 / std::f64::consts::PI.sqrt();
        assert_relative_eq!(spec.scale, expected, max_relative = 1e-14);
        assert_relative_eq!(kernel_value(&[0.3, 0.0], &spec), expected, max_relative = 1e-14);
        assert_eq!(kernel_value(&[2.0, 0.0], &spec), 0.0);
    }

    #[test]
    fn truncated_tent_value_from_moment_oracle() {
        // Solve for c numerically from the quadrature of int |z|^2 omega^2 = 2
        // and compare the implementation's value at |z| = delta/2 against c/2.
        let spec = KernelSpec::new(KernelFamily::TruncatedTent, 1.0, 2).unwrap();
        let (nodes, weights) = gauss_legendre(128);
        let mut radial = 0.0;
        for (&s, &w) in nodes.iter().zip(&weights) {
            radial += w * s.powi(3) * (1.0 - s).powi(2);
        }
        let c_oracle = (2.0 / (2.0 * std::f64::consts::PI * radial)).sqrt();
        assert_relative_eq!(kernel_value(&[0.5, 0.0], &spec), c_oracle / 2.0, max_relative = 1e-10);
    }

    #[test]
    fn normalization_residuals() {
        for n in 1..=3 {
            let ball = KernelSpec::new(KernelFamily::ConstantBall, 0.37, n).unwrap();
            assert!(check_normalization(&ball, 64) < 1e-12);
            let tent = KernelSpec::new(KernelFamily::TruncatedTent, 0.25, n).unwrap();
            assert!(check_normalization(&tent, 64) < 1e-6);
        }
    }

    #[test]
    fn doubled_scale_triples_relative_residual() {
        let mut spec = KernelSpec::new(KernelFamily::ConstantBall, 0.5, 2).unwrap();
        spec.scale *= 2.0;
        let res = check_normalization(&spec, 64);
        assert_relative_eq!(res, 3.0, max_relative = 1e-10);
    }

    #[test]
    fn normalization_holds_across_delta_sweep() {
        // log-spaced deltas in [1e-2, 1]
        for k in 0..=8 {
            let delta = 1e-2 * (100.0f64).powf(k as f64 / 8.0);
            for family in [KernelFamily::ConstantBall, KernelFamily::TruncatedTent] {
                for n in 1..=3 {
                    let spec = KernelSpec::new(family, delta, n).unwrap();
                    assert!(
                        check_normalization(&spec, 64) < 1e-6,
                        "family {family:?} delta {delta} n {n}"
                    );
                }
            }
        }
    }

    #[test]
    fn constant_ball_scale_power_law() {
        for n in 1..=3usize {
            let s1 = KernelSpec::new(KernelFamily::ConstantBall, 1.0, n).unwrap().scale;
            for delta in [0.01, 0.1, 0.9] {
                let s = KernelSpec::new(KernelFamily::ConstantBall, delta, n).unwrap().scale;
                let expected = s1 / delta.powf((n as f64 + 2.0) / 2.0);
                assert_relative_eq!(s, expected, max_relative = 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn radiality_under_axis_symmetries(x in -1.5f64..1.5, y in -1.5f64..1.5, tent in any::<bool>()) {
            let family = if tent { KernelFamily::TruncatedTent } else { KernelFamily::ConstantBall };
            let spec = KernelSpec::new(family, 1.0, 2).unwrap();
            let v = kernel_value(&[x, y], &spec);
            prop_assert_eq!(v, kernel_value(&[y, x], &spec));
            prop_assert_eq!(v, kernel_value(&[-x, y], &spec));
            prop_assert_eq!(v, kernel_value(&[x, -y], &spec));
            prop_assert_eq!(v, kernel_value(&[-y, -x], &spec));
        }

        #[test]
        fn support_is_exact(r in 0.0f64..3.0, tent in any::<bool>()) {
            let family = if tent { KernelFamily::TruncatedTent } else { KernelFamily::ConstantBall };
            let spec = KernelSpec::new(family, 1.0, 3).unwrap();
            let v = kernel_value(&[r, 0.0, 0.0], &spec);
            if r >= 1.0 {
                prop_assert_eq!(v, 0.0);
            } else {
                prop_assert!(v > 0.0);
            }
        }
    }
}
