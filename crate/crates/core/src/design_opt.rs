//! Design optimization: alternating minimization of the dual (flux) energy
//! over the admissible conductivities and divergence-feasible fluxes.
//!
//! Both blocks have exact minimizers: the flux block is the Kelvin solve, and
//! under harmonic averaging the design block separates per cell into a
//! water-filling clamp with one scalar bisection for the volume multiplier.
//! The objective is jointly convex, so the iteration descends monotonically
//! and the value is start-independent.

use crate::error::{Error, Result};
use crate::geometry::{Mesh, PairList};
use crate::material::{check_admissible, AveragingScheme, Bounds, DesignField};
use crate::operators::{cell_norm, PairFlux};
use crate::state_solvers::{solve_kelvin, solve_primal, SolveOptions, SourceField};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OptimizeOptions {
    pub max_iters: usize,
    /// Stop when the relative objective change over one outer iteration
    /// drops below this.
    pub rel_tol: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions { max_iters: 200, rel_tol: 1e-7 }
    }
}

/// Outcome of a design optimization run.
#[derive(Debug, Clone)]
pub struct DesignResult {
    pub kappa_opt: DesignField,
    pub flux_opt: PairFlux,
    /// Optimal dual value.
    pub d_value: f64,
    /// Primal design value, `p = -d` by duality.
    pub p_value: f64,
    pub iterations: usize,
    /// Dual energy after each flux step; non-increasing.
    pub descent_history: Vec<f64>,
    pub converged: bool,
    pub volume_slack: f64,
}

/// Per-cell dual-energy weights of a flux: `m_k = h^n sum_j qdd(x_k, x_j)^2`.
/// Under harmonic averaging `Ihat = 1/2 sum_k kappa_k^{-1} m_k h^n` exactly.
pub fn energy_weights(q: &PairFlux, pairs: &PairList, mesh: &Mesh) -> Vec<f64> {
    let hn = mesh.measure();
    let mut m = vec![0.0; mesh.n_cells()];
    for p in 0..pairs.len() {
        let contrib = q.values[p] * q.values[p] * hn;
        m[pairs.i[p] as usize] += contrib;
        m[pairs.j[p] as usize] += contrib;
    }
    m
}

/// Exact design step: minimize `sum_k kappa_k^{-1} m_k h^n` over the
/// admissible set. Interior cells get `clamp(sqrt(m_k / lambda))` with the
/// multiplier found by bisection until the volume constraint is active to
/// `1e-10 |Omega|` (or slack if already feasible at `lambda = 0`); collar
/// cells take the pointwise optimum `kappa_max`.
pub fn kappa_subproblem(
    weights: &[f64],
    bounds: Bounds,
    mesh: &Mesh,
) -> Result<DesignField> {
    let ni = mesh.n_interior();
    if weights.len() != ni {
        return Err(Error::Structural(format!(
            "kappa_subproblem: {} weights for {} interior cells",
            weights.len(),
            ni
        )));
    }
    if weights.iter().any(|&m| m < 0.0 || !m.is_finite()) {
        return Err(Error::Structural("kappa_subproblem: weights must be finite and nonnegative".into()));
    }
    let hn = mesh.measure();
    let budget = bounds.gamma * mesh.interior_volume();
    let eval = |lambda: f64, out: &mut [f64]| -> f64 {
        let mut vol = 0.0;
        for (k, &m) in weights.iter().enumerate() {
            let v = if m == 0.0 {
                bounds.kappa_min
            } else if lambda <= 0.0 {
                bounds.kappa_max
            } else {
                (m / lambda).sqrt().clamp(bounds.kappa_min, bounds.kappa_max)
            };
            out[k] = v;
            vol += v * hn;
        }
        vol
    };
    let mut interior = vec![0.0; ni];
    let vol0 = eval(0.0, &mut interior);
    if vol0 > budget + 1e-12 * budget.max(1.0) {
        let tol = 1e-10 * mesh.interior_volume();
        let mut lo = 0.0;
        let mmax = weights.iter().cloned().fold(0.0f64, f64::max);
        let mut hi = mmax / (bounds.kappa_min * bounds.kappa_min);
        if eval(hi, &mut interior) > budget {
            return Err(Error::Structural(
                "kappa_subproblem: bisection bracket failed (volume above budget at all kappa_min)".into(),
            ));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if eval(mid, &mut interior) > budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let vol = eval(hi, &mut interior);
        if (vol - budget).abs() > 10.0 * tol {
            return Err(Error::Structural(format!(
                "kappa_subproblem: bisection left the volume {:.3e} away from the active budget",
                vol - budget
            )));
        }
    }
    let mut kappa = vec![bounds.kappa_max; mesh.n_cells()];
    for (r, &cell) in mesh.interior_ids.iter().enumerate() {
        kappa[cell as usize] = interior[r];
    }
    Ok(DesignField { kappa, bounds })
}

/// Alternating minimization for the dual design problem (harmonic averaging).
pub fn optimize_design(
    f: &SourceField,
    bounds: Bounds,
    mesh: &Mesh,
    pairs: &PairList,
    opts: &OptimizeOptions,
    solve: &SolveOptions,
    initial: Option<&DesignField>,
) -> Result<DesignResult> {
    let mut kappa = match initial {
        Some(k) => {
            k.validate(mesh)?;
            k.clone()
        }
        None => DesignField::gamma_uniform(mesh, bounds),
    };
    let f_is_zero = cell_norm(&f.values, mesh) == 0.0;
    let mut history = Vec::new();
    let mut prev = f64::INFINITY;
    let mut flux = None;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.max_iters {
        iterations = it;
        let sol = solve_kelvin(&kappa, f, AveragingScheme::Harmonic, mesh, pairs, solve)?;
        let ihat = sol.energy_dual.expect("kelvin solve carries the dual energy");
        if ihat > prev + 1e-12 {
            return Err(Error::Structural(format!(
                "optimize_design: objective increased from {prev:.15e} to {ihat:.15e}; subproblem bug"
            )));
        }
        history.push(ihat);
        let q = sol.q.expect("kelvin solve carries the flux");
        let done = f_is_zero || (prev - ihat).abs() <= opts.rel_tol * ihat.abs().max(f64::MIN_POSITIVE);
        prev = ihat;
        flux = Some(q);
        if done {
            converged = true;
            break;
        }
        let weights_all = energy_weights(flux.as_ref().unwrap(), pairs, mesh);
        let interior: Vec<f64> =
            mesh.interior_ids.iter().map(|&id| weights_all[id as usize]).collect();
        kappa = kappa_subproblem(&interior, bounds, mesh)?;
    }
    let flux_opt = flux.expect("at least one iteration ran");
    let d_value = *history.last().unwrap();
    let report = check_admissible(&kappa, mesh);
    Ok(DesignResult {
        kappa_opt: kappa,
        flux_opt,
        d_value,
        p_value: -d_value,
        iterations,
        descent_history: history,
        converged,
        volume_slack: report.volume_slack,
    })
}

/// Saddle-point consistency report for a finished optimization.
#[derive(Debug, Clone, Serialize)]
pub struct SaddleReport {
    /// |Icheck(kappa_opt) + d| relative to max(1, |d|).
    pub primal_gap: f64,
    pub primal_consistent: bool,
    /// Largest primal-value improvement found over the probes (positive
    /// values mean an ascent direction exists and the optimizer failed).
    pub max_probe_excess: f64,
    pub probes_failed: usize,
    pub n_probes: usize,
}

/// Check the reported optimum: (i) an independent primal solve at the optimal
/// design must reproduce `-d`; (ii) random admissible perturbations must not
/// improve the primal design objective.
pub fn verify_saddle(
    result: &DesignResult,
    n_probes: usize,
    seed: u64,
    f: &SourceField,
    mesh: &Mesh,
    pairs: &PairList,
    solve: &SolveOptions,
) -> Result<SaddleReport> {
    let tol = 1e-7;
    let base =
        solve_primal(&result.kappa_opt, f, AveragingScheme::Harmonic, mesh, pairs, solve)?;
    let primal_gap =
        (base.energy_primal + result.d_value).abs() / result.d_value.abs().max(1.0);
    let bounds = result.kappa_opt.bounds;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_excess = f64::NEG_INFINITY;
    let mut failed = 0;
    for _ in 0..n_probes {
        let mut probe = result.kappa_opt.clone();
        let eps = 0.1 * (bounds.kappa_max - bounds.kappa_min);
        for k in probe.kappa.iter_mut() {
            *k = (*k + eps * rng.random_range(-1.0..1.0))
                .clamp(bounds.kappa_min, bounds.kappa_max);
        }
        project_volume(&mut probe, mesh);
        let sol = solve_primal(&probe, f, AveragingScheme::Harmonic, mesh, pairs, solve)?;
        let excess = sol.energy_primal - base.energy_primal;
        max_excess = max_excess.max(excess);
        if excess > tol {
            failed += 1;
        }
    }
    Ok(SaddleReport {
        primal_gap,
        primal_consistent: primal_gap <= tol,
        max_probe_excess: if n_probes == 0 { 0.0 } else { max_excess },
        probes_failed: failed,
        n_probes,
    })
}

/// Pull an out-of-budget design back into the admissible set by blending
/// toward the lower bound (a convex combination, so box bounds survive).
fn project_volume(design: &mut DesignField, mesh: &Mesh) {
    let b = design.bounds;
    let hn = mesh.measure();
    let budget = b.gamma * mesh.interior_volume();
    let used: f64 = mesh.interior_ids.iter().map(|&id| design.kappa[id as usize] * hn).sum();
    if used <= budget {
        return;
    }
    let floor = b.kappa_min * mesh.interior_volume();
    let t = (budget - floor) / (used - floor);
    for &id in &mesh.interior_ids {
        let k = &mut design.kappa[id as usize];
        *k = b.kappa_min + t * (*k - b.kappa_min);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, build_pairs, Domain, Mesh, PairList};
    use crate::kernel::{KernelFamily, KernelSpec};
    use crate::state_solvers::SourcePreset;
    use approx::assert_relative_eq;

    fn setup(h: f64, delta: f64) -> (Mesh, PairList) {
        let mesh = build_mesh(&Domain::unit_square(), h, delta).unwrap();
        let kernel = KernelSpec::new(KernelFamily::ConstantBall, delta, 2).unwrap();
        let pairs = build_pairs(&mesh, &kernel).unwrap();
        (mesh, pairs)
    }

    #[test]
    fn kappa_subproblem_uniform_weights_saturate_budget() {
        let (mesh, _) = setup(0.125, 0.25);
        let bounds = Bounds::default();
        let weights = vec![3.0; mesh.n_interior()];
        let design = kappa_subproblem(&weights, bounds, &mesh).unwrap();
        for &id in &mesh.interior_ids {
            assert_relative_eq!(design.kappa[id as usize], bounds.gamma, max_relative = 1e-9);
        }
        let report = check_admissible(&design, &mesh);
        assert!(report.volume_slack.abs() <= 1e-9 * mesh.interior_volume());
    }

    #[test]
    fn kappa_subproblem_zero_weight_cells_get_lower_bound() {
        let (mesh, _) = setup(0.125, 0.25);
        let bounds = Bounds::default();
        let mut weights = vec![1.0; mesh.n_interior()];
        weights[3] = 0.0;
        weights[10] = 0.0;
        let design = kappa_subproblem(&weights, bounds, &mesh).unwrap();
        assert_eq!(design.kappa[mesh.interior_ids[3] as usize], bounds.kappa_min);
        assert_eq!(design.kappa[mesh.interior_ids[10] as usize], bounds.kappa_min);
        // collar cells sit at the pointwise optimum
        for (id, label) in mesh.labels.iter().enumerate() {
            if *label == crate::geometry::CellLabel::Collar {
                assert_eq!(design.kappa[id], bounds.kappa_max);
            }
        }
    }

    #[test]
    fn optimize_zero_source_terminates_immediately() {
        let (mesh, pairs) = setup(0.25, 0.5);
        let f = SourceField::from_preset(&mesh, &SourcePreset::Constant { amplitude: 0.0 });
        let result = optimize_design(
            &f,
            Bounds::default(),
            &mesh,
            &pairs,
            &OptimizeOptions::default(),
            &SolveOptions::default(),
            None,
        )
        .unwrap();
        assert_eq!(result.d_value, 0.0);
        assert_eq!(result.iterations, 1);
        assert!(result.converged);
    }

    #[test]
    fn optimize_descends_and_activates_volume() {
        let (mesh, pairs) = setup(0.125, 0.25);
        let f = SourceField::from_preset(&mesh, &SourcePreset::Constant { amplitude: 1.0 });
        let result = optimize_design(
            &f,
            Bounds::default(),
            &mesh,
            &pairs,
            &OptimizeOptions::default(),
            &SolveOptions::default(),
            None,
        )
        .unwrap();
        assert!(result.converged);
        for w in result.descent_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!(result.volume_slack.abs() <= 1e-8 * mesh.interior_volume());
        let b = result.kappa_opt.bounds;
        assert!(result
            .kappa_opt
            .kappa
            .iter()
            .all(|&k| k >= b.kappa_min && k <= b.kappa_max));
        assert_eq!(result.p_value, -result.d_value);
    }

    #[test]
    fn optimal_design_inherits_source_symmetry() {
        let (mesh, pairs) = setup(0.125, 0.25);
        let f = SourceField::from_preset(
            &mesh,
            &SourcePreset::GaussianBump { amplitude: 1.0, sigma: 0.18 },
        );
        let result = optimize_design(
            &f,
            Bounds::default(),
            &mesh,
            &pairs,
            &OptimizeOptions::default(),
            &SolveOptions::default(),
            None,
        )
        .unwrap();
        let dims = &mesh.interior_dims;
        for ix in 0..dims[0] {
            for iy in 0..dims[1] {
                let a = mesh.interior_ids[ix * dims[1] + iy] as usize;
                let b = mesh.interior_ids[(dims[0] - 1 - ix) * dims[1] + iy] as usize;
                assert!(
                    (result.kappa_opt.kappa[a] - result.kappa_opt.kappa[b]).abs() <= 1e-6,
                    "design asymmetry at ({ix},{iy})"
                );
            }
        }
    }

    #[test]
    fn saddle_report_accepts_optimum_and_flags_suboptimal_designs() {
        let (mesh, pairs) = setup(0.125, 0.375);
        let f = SourceField::from_preset(&mesh, &SourcePreset::Constant { amplitude: 1.0 });
        let bounds = Bounds::default();
        let opts = OptimizeOptions { max_iters: 400, rel_tol: 1e-10 };
        let result = optimize_design(
            &f,
            bounds,
            &mesh,
            &pairs,
            &opts,
            &SolveOptions::default(),
            None,
        )
        .unwrap();
        let report =
            verify_saddle(&result, 12, 42, &f, &mesh, &pairs, &SolveOptions::default()).unwrap();
        assert!(report.primal_consistent, "primal gap {}", report.primal_gap);
        assert_eq!(report.probes_failed, 0, "excess {}", report.max_probe_excess);

        // a deliberately suboptimal "result" must be flagged by the probes
        let bad_kappa = DesignField::uniform(&mesh, bounds, bounds.kappa_min);
        let bad_sol = solve_kelvin(
            &bad_kappa,
            &f,
            AveragingScheme::Harmonic,
            &mesh,
            &pairs,
            &SolveOptions::default(),
        )
        .unwrap();
        let bad = DesignResult {
            kappa_opt: bad_kappa,
            flux_opt: bad_sol.q.unwrap(),
            d_value: bad_sol.energy_dual.unwrap(),
            p_value: -bad_sol.energy_dual.unwrap(),
            iterations: 1,
            descent_history: vec![bad_sol.energy_dual.unwrap()],
            converged: true,
            volume_slack: 0.0,
        };
        let report =
            verify_saddle(&bad, 12, 43, &f, &mesh, &pairs, &SolveOptions::default()).unwrap();
        assert!(report.probes_failed > 0);
    }

    #[test]
    fn two_starts_reach_the_same_value() {
        let (mesh, pairs) = setup(0.125, 0.25);
        let f = SourceField::from_preset(
            &mesh,
            &SourcePreset::Checkerboard { amplitude: 1.0, blocks: 2 },
        );
        let bounds = Bounds::default();
        let opts = OptimizeOptions { max_iters: 500, rel_tol: 1e-9 };
        let solve = SolveOptions { tol: 1e-12, ..Default::default() };
        let a = optimize_design(&f, bounds, &mesh, &pairs, &opts, &solve, None).unwrap();
        let mut other = DesignField::uniform(&mesh, bounds, bounds.kappa_min);
        // admissible non-uniform start
        for (k, v) in other.kappa.iter_mut().enumerate() {
            *v = if k % 3 == 0 { 1.05 } else { 1.3 };
        }
        let b = optimize_design(&f, bounds, &mesh, &pairs, &opts, &solve, Some(&other)).unwrap();
        assert_relative_eq!(a.d_value, b.d_value, max_relative = 1e-6);
    }
}
