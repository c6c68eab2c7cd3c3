//! Horizon-to-zero convergence studies: the design-value sweep, recovery
//! consistency of the two-point calculus against smooth fields, and the
//! one-sided complementary-energy bound.

use crate::design_opt::{optimize_design, OptimizeOptions};
use crate::error::{Error, Result};
use crate::geometry::{build_mesh, build_pairs, Domain, Mesh, PairList};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::linalg::fit_slope;
use crate::local_ref::optimize_local_design;
use crate::material::{AveragingScheme, Bounds, DesignField};
use crate::operators::{
    adjoint_recovery, apply_divergence, cell_norm, flux_recovery, PairFlux, VectorCellField,
};
use crate::state_solvers::{
    dual_energy, infsup_constant, poincare_constant, solve_kelvin, stability_check, SolveOptions,
    SourceField, SourcePreset,
};
use crate::material::pair_conductivity;
use serde::Serialize;

/// A smooth compactly supported test field with analytic divergence.
pub trait SmoothField {
    fn dim(&self) -> usize;
    /// Field value at a point.
    fn eval(&self, x: &[f64], out: &mut [f64]);
    /// Analytic divergence at a point.
    fn divergence(&self, x: &[f64]) -> f64;
}

/// Polynomial bump `psi(x) = prod_d 64 [t_d (1 - t_d)]^3` on a box shrunk
/// into the domain by `margin`, with all vector components equal to `psi`.
/// The cubic edge powers make it twice continuously differentiable on all of
/// R^n, as the recovery propositions require.
#[derive(Debug, Clone)]
pub struct PolynomialBump {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl PolynomialBump {
    pub fn shrunk(domain: &Domain, margin: f64) -> Result<Self> {
        let lo: Vec<f64> = domain.lo.iter().map(|&v| v + margin).collect();
        let hi: Vec<f64> = domain.hi.iter().map(|&v| v - margin).collect();
        for d in 0..domain.dim {
            if !(hi[d] > lo[d]) {
                return Err(Error::Config(format!(
                    "bump margin {margin} leaves no support along axis {d}"
                )));
            }
        }
        Ok(PolynomialBump { lo, hi })
    }

    fn axis_terms(&self, x: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
        let dim = self.lo.len();
        let mut val = vec![0.0; dim];
        let mut der = vec![0.0; dim];
        for d in 0..dim {
            let len = self.hi[d] - self.lo[d];
            let t = (x[d] - self.lo[d]) / len;
            if !(0.0..=1.0).contains(&t) {
                return None;
            }
            let s = t * (1.0 - t);
            val[d] = 64.0 * s * s * s;
            der[d] = 64.0 * 3.0 * s * s * (1.0 - 2.0 * t) / len;
        }
        Some((val, der))
    }

    pub fn scalar(&self, x: &[f64]) -> f64 {
        match self.axis_terms(x) {
            Some((val, _)) => val.iter().product(),
            None => 0.0,
        }
    }
}

impl SmoothField for PolynomialBump {
    fn dim(&self) -> usize {
        self.lo.len()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let psi = self.scalar(x);
        out.iter_mut().for_each(|v| *v = psi);
    }

    fn divergence(&self, x: &[f64]) -> f64 {
        match self.axis_terms(x) {
            Some((val, der)) => {
                let dim = self.lo.len();
                let mut div = 0.0;
                for d in 0..dim {
                    let mut term = der[d];
                    for e in 0..dim {
                        if e != d {
                            term *= val[e];
                        }
                    }
                    div += term;
                }
                div
            }
            None => 0.0,
        }
    }
}

/// Constant vector field (divergence-free).
#[derive(Debug, Clone)]
pub struct ConstantField(pub Vec<f64>);

impl SmoothField for ConstantField {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn eval(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
    fn divergence(&self, _x: &[f64]) -> f64 {
        0.0
    }
}

fn sample_field(field: &dyn SmoothField, mesh: &Mesh) -> VectorCellField {
    VectorCellField::from_fn_all(mesh, |x, out| field.eval(x, out))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConvergencePoint {
    pub delta: f64,
    pub error: f64,
}

/// Fitted log-log rate of a decreasing error sequence.
pub fn fitted_rate(points: &[ConvergencePoint]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|p| p.delta.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.error.max(1e-300).ln()).collect();
    fit_slope(&xs, &ys)
}

/// `e(delta) = ||D_delta R*_delta q - div q||_{L2(Omega)}` along a horizon
/// sweep with `h = delta / m`.
pub fn recovery_convergence(
    field: &dyn SmoothField,
    delta_list: &[f64],
    m: usize,
    family: KernelFamily,
    domain: &Domain,
) -> Result<Vec<ConvergencePoint>> {
    delta_list
        .iter()
        .map(|&delta| {
            let mesh = build_mesh(domain, delta / m as f64, delta)?;
            let kernel = KernelSpec::new(family, delta, domain.dim)?;
            let pairs = build_pairs(&mesh, &kernel)?;
            Ok(ConvergencePoint { delta, error: recovery_divergence_error(field, &mesh, &pairs) })
        })
        .collect()
}

/// Single-mesh divergence recovery error of a smooth field.
pub fn recovery_divergence_error(field: &dyn SmoothField, mesh: &Mesh, pairs: &PairList) -> f64 {
    let v = sample_field(field, mesh);
    let lifted = adjoint_recovery(&v, pairs, mesh);
    let div = apply_divergence(&lifted, pairs, mesh);
    let mut diff = div;
    for (r, &id) in mesh.interior_ids.iter().enumerate() {
        diff.values[r] -= field.divergence(mesh.center(id));
    }
    cell_norm(&diff, mesh)
}

/// `|Ihat(kdd; R* q) - I_loc(kappa; q)|` along a horizon sweep. `kappa_fn`
/// supplies the conductivity at cell centers (harmonic pair averaging).
pub fn energy_convergence(
    field: &dyn SmoothField,
    kappa_fn: &dyn Fn(&[f64]) -> f64,
    delta_list: &[f64],
    m: usize,
    family: KernelFamily,
    domain: &Domain,
) -> Result<Vec<ConvergencePoint>> {
    delta_list
        .iter()
        .map(|&delta| {
            let mesh = build_mesh(domain, delta / m as f64, delta)?;
            let kernel = KernelSpec::new(family, delta, domain.dim)?;
            let pairs = build_pairs(&mesh, &kernel)?;
            let (ihat, iloc) = recovery_energies(field, kappa_fn, &mesh, &pairs);
            Ok(ConvergencePoint { delta, error: (ihat - iloc).abs() })
        })
        .collect()
}

/// Nonlocal complementary energy of the lifted field and the midpoint local
/// complementary energy it should approach.
pub fn recovery_energies(
    field: &dyn SmoothField,
    kappa_fn: &dyn Fn(&[f64]) -> f64,
    mesh: &Mesh,
    pairs: &PairList,
) -> (f64, f64) {
    let kappa_values: Vec<f64> = (0..mesh.n_cells() as u32).map(|c| kappa_fn(mesh.center(c))).collect();
    let design = DesignField {
        kappa: kappa_values.clone(),
        bounds: Bounds { kappa_min: f64::MIN_POSITIVE, kappa_max: f64::MAX, gamma: 1.0 },
    };
    let kdd = pair_conductivity(&design, AveragingScheme::Harmonic, pairs);
    let v = sample_field(field, mesh);
    let lifted = adjoint_recovery(&v, pairs, mesh);
    let ihat = dual_energy(&lifted, &kdd, pairs, mesh);
    let dim = mesh.domain.dim;
    let mut iloc = 0.0;
    let mut val = vec![0.0; dim];
    for &id in &mesh.interior_ids {
        field.eval(mesh.center(id), &mut val);
        let q2: f64 = val.iter().map(|v| v * v).sum();
        iloc += 0.5 * q2 / kappa_values[id as usize] * mesh.measure();
    }
    (ihat, iloc)
}

/// One-sided bound slack `Ihat(kdd; qdd) - I_loc(kappa; R qdd)` under
/// harmonic averaging; nonnegative up to rounding.
pub fn one_sided_bound(
    q: &PairFlux,
    kappa: &DesignField,
    mesh: &Mesh,
    pairs: &PairList,
) -> f64 {
    let kdd = pair_conductivity(kappa, AveragingScheme::Harmonic, pairs);
    let ihat = dual_energy(q, &kdd, pairs, mesh);
    let recovered = flux_recovery(q, pairs, mesh);
    let dim = mesh.domain.dim;
    let mut iloc = 0.0;
    for &id in &mesh.interior_ids {
        let v = recovered.at_cell(mesh, id);
        let q2: f64 = v.iter().take(dim).map(|v| v * v).sum();
        iloc += 0.5 * q2 / kappa.kappa[id as usize] * mesh.measure();
    }
    ihat - iloc
}

/// One row of the horizon sweep.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SweepRecord {
    pub delta: f64,
    pub h: f64,
    pub d_delta: f64,
    pub p_delta: f64,
    pub d_star_local: f64,
    pub infsup: f64,
    pub stability_ratio: f64,
    pub recovery_div_err: f64,
    pub recovery_energy_err: f64,
    pub poincare_const: f64,
}

impl SweepRecord {
    pub const CSV_HEADER: &'static str = "delta,h,d_delta,p_delta,d_star_local,infsup,stability_ratio,recovery_div_err,recovery_energy_err,poincare_const";

    pub fn csv_row(&self) -> String {
        let f = |v: f64| format!("{v:.16e}");
        [
            f(self.delta),
            f(self.h),
            f(self.d_delta),
            f(self.p_delta),
            f(self.d_star_local),
            f(self.infsup),
            f(self.stability_ratio),
            f(self.recovery_div_err),
            f(self.recovery_energy_err),
            f(self.poincare_const),
        ]
        .join(",")
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub domain: Domain,
    pub delta_list: Vec<f64>,
    /// Horizon-to-mesh ratio; `h = delta / m` per entry.
    pub m: usize,
    pub family: KernelFamily,
    pub bounds: Bounds,
    pub source: SourcePreset,
    pub optimizer: OptimizeOptions,
    pub solver: SolveOptions,
    /// Support margin of the smooth recovery test field.
    pub bump_margin: f64,
}

impl SweepConfig {
    pub fn new(domain: Domain, delta_list: Vec<f64>) -> Self {
        SweepConfig {
            domain,
            delta_list,
            m: 4,
            family: KernelFamily::TruncatedTent,
            bounds: Bounds::default(),
            source: SourcePreset::Constant { amplitude: 1.0 },
            optimizer: OptimizeOptions::default(),
            solver: SolveOptions::default(),
            bump_margin: 0.1,
        }
    }
}

/// A sweep failure carrying the rows finished before the abort.
#[derive(Debug)]
pub struct SweepAborted {
    pub partial: Vec<SweepRecord>,
    pub failed_delta: f64,
    pub source: Error,
}

impl std::fmt::Display for SweepAborted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "sweep aborted at delta = {} after {} rows: {}",
            self.failed_delta,
            self.partial.len(),
            self.source
        )
    }
}

/// Run the full per-horizon study: design optimization, inf-sup, stability,
/// the matching local design value, and the recovery errors.
pub fn delta_sweep(cfg: &SweepConfig) -> std::result::Result<Vec<SweepRecord>, SweepAborted> {
    let validate = || -> Result<()> {
        if cfg.m < 4 {
            return Err(Error::Config(format!(
                "sweep: m = {} is too coarse for convergence studies (need m >= 4)",
                cfg.m
            )));
        }
        if cfg.delta_list.is_empty() {
            return Err(Error::Config("sweep: empty delta list".into()));
        }
        if cfg.delta_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("sweep: delta list must be strictly decreasing".into()));
        }
        Ok(())
    };
    if let Err(e) = validate() {
        return Err(SweepAborted { partial: Vec::new(), failed_delta: f64::NAN, source: e });
    }
    let mut records = Vec::new();
    for &delta in &cfg.delta_list {
        match sweep_entry(cfg, delta) {
            Ok(rec) => records.push(rec),
            Err(e) => {
                return Err(SweepAborted { partial: records, failed_delta: delta, source: e })
            }
        }
    }
    Ok(records)
}

fn sweep_entry(cfg: &SweepConfig, delta: f64) -> Result<SweepRecord> {
    let h = delta / cfg.m as f64;
    let mesh = build_mesh(&cfg.domain, h, delta)?;
    let kernel = KernelSpec::new(cfg.family, delta, cfg.domain.dim)?;
    let pairs = build_pairs(&mesh, &kernel)?;
    let f = SourceField::from_preset(&mesh, &cfg.source);

    let design = optimize_design(
        &f,
        cfg.bounds,
        &mesh,
        &pairs,
        &cfg.optimizer,
        &cfg.solver,
        None,
    )?;
    let state = solve_kelvin(
        &design.kappa_opt,
        &f,
        AveragingScheme::Harmonic,
        &mesh,
        &pairs,
        &cfg.solver,
    )?;
    let stability = stability_check(&state, &f, &mesh, &pairs)?;
    let infsup = infsup_constant(&mesh, &pairs)?;
    let poincare = poincare_constant(&mesh, &pairs)?;
    let local = optimize_local_design(&f, cfg.bounds, &mesh, &cfg.optimizer, &cfg.solver)?;

    let bump = PolynomialBump::shrunk(&cfg.domain, cfg.bump_margin)?;
    let recovery_div_err = recovery_divergence_error(&bump, &mesh, &pairs);
    let gamma = cfg.bounds.gamma;
    let (ihat, iloc) = recovery_energies(&bump, &|_| gamma, &mesh, &pairs);

    Ok(SweepRecord {
        delta,
        h,
        d_delta: design.d_value,
        p_delta: design.p_value,
        d_star_local: local.d_star,
        infsup,
        stability_ratio: stability,
        recovery_div_err,
        recovery_energy_err: (ihat - iloc).abs(),
        poincare_const: poincare,
    })
}

/// Fitted rates reported beside the sweep table.
#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    /// |d_delta - d_star_local| / |d_star_local| per row.
    pub design_gap_rel: Vec<f64>,
    /// Fitted log-log rate of the design gap (observational; no threshold).
    pub design_gap_rate: f64,
    pub recovery_div_rate: f64,
    pub recovery_energy_rate: f64,
    pub infsup_min: f64,
    pub infsup_max: f64,
    pub stability_min: f64,
    pub stability_max: f64,
}

pub fn summarize(records: &[SweepRecord]) -> SweepSummary {
    let gap: Vec<f64> = records
        .iter()
        .map(|r| (r.d_delta - r.d_star_local).abs() / r.d_star_local.abs().max(1e-300))
        .collect();
    let rate = |sel: &dyn Fn(&SweepRecord) -> f64| -> f64 {
        if records.len() < 2 {
            return f64::NAN;
        }
        let pts: Vec<ConvergencePoint> = records
            .iter()
            .map(|r| ConvergencePoint { delta: r.delta, error: sel(r) })
            .collect();
        fitted_rate(&pts)
    };
    let gap_pts: Vec<ConvergencePoint> = records
        .iter()
        .zip(&gap)
        .map(|(r, &g)| ConvergencePoint { delta: r.delta, error: g })
        .collect();
    SweepSummary {
        design_gap_rel: gap,
        design_gap_rate: if records.len() < 2 { f64::NAN } else { fitted_rate(&gap_pts) },
        recovery_div_rate: rate(&|r| r.recovery_div_err),
        recovery_energy_rate: rate(&|r| r.recovery_energy_err),
        infsup_min: records.iter().map(|r| r.infsup).fold(f64::INFINITY, f64::min),
        infsup_max: records.iter().map(|r| r.infsup).fold(f64::NEG_INFINITY, f64::max),
        stability_min: records.iter().map(|r| r.stability_ratio).fold(f64::INFINITY, f64::min),
        stability_max: records.iter().map(|r| r.stability_ratio).fold(f64::NEG_INFINITY, f64::max),
    }
}
