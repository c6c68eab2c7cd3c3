//! Design fields, the admissible set, and cell-pair conductivity averaging.

use crate::error::{Error, Result};
use crate::geometry::{Mesh, PairList};
use crate::operators::SymPairField;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// How the two-point conductivity is formed from the endpoint values.
/// Harmonic averaging equals arithmetic averaging of the resistivities and is
/// the scheme the design optimizer relies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AveragingScheme {
    Harmonic,
    Arithmetic,
    Geometric,
}

impl std::fmt::Display for AveragingScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AveragingScheme::Harmonic => write!(f, "harmonic"),
            AveragingScheme::Arithmetic => write!(f, "arithmetic"),
            AveragingScheme::Geometric => write!(f, "geometric"),
        }
    }
}

impl AveragingScheme {
    pub fn mean(self, a: f64, b: f64) -> f64 {
        match self {
            AveragingScheme::Harmonic => 2.0 * a * b / (a + b),
            AveragingScheme::Arithmetic => 0.5 * (a + b),
            AveragingScheme::Geometric => (a * b).sqrt(),
        }
    }
}

/// Box bounds and volume budget of the admissible set.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Bounds {
    pub kappa_min: f64,
    pub kappa_max: f64,
    /// Volume fraction target; the interior average of kappa may not exceed it.
    pub gamma: f64,
}

impl Bounds {
    pub fn new(kappa_min: f64, kappa_max: f64, gamma: f64) -> Result<Self> {
        if !(kappa_min > 0.0) || !(kappa_max > kappa_min) {
            return Err(Error::Config(format!(
                "material: need 0 < kappa_min < kappa_max, got [{kappa_min}, {kappa_max}]"
            )));
        }
        if !(gamma > kappa_min && gamma < kappa_max) {
            return Err(Error::Config(format!(
                "material: gamma must lie strictly inside ({kappa_min}, {kappa_max}), got {gamma}"
            )));
        }
        Ok(Bounds { kappa_min, kappa_max, gamma })
    }
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds { kappa_min: 1.0, kappa_max: 2.0, gamma: 1.4 }
    }
}

/// Per-cell conductivity on the padded mesh. Collar cells carry design values
/// bounded in the same box but are excluded from the volume budget.
#[derive(Debug, Clone)]
pub struct DesignField {
    /// One value per mesh cell.
    pub kappa: Vec<f64>,
    pub bounds: Bounds,
}

impl DesignField {
    pub fn uniform(mesh: &Mesh, bounds: Bounds, value: f64) -> Self {
        DesignField { kappa: vec![value; mesh.n_cells()], bounds }
    }

    /// The default admissible start: kappa = gamma everywhere.
    pub fn gamma_uniform(mesh: &Mesh, bounds: Bounds) -> Self {
        Self::uniform(mesh, bounds, bounds.gamma)
    }

    /// Box-bound check; enough for state solves, which are well posed for any
    /// bounded positive conductivity regardless of the volume budget.
    pub fn validate_bounds(&self, mesh: &Mesh) -> Result<()> {
        if self.kappa.len() != mesh.n_cells() {
            return Err(Error::Structural(format!(
                "design field has {} values for a mesh with {} cells",
                self.kappa.len(),
                mesh.n_cells()
            )));
        }
        if !check_admissible(self, mesh).bounds_ok {
            return Err(Error::Config("design field violates the box bounds".into()));
        }
        Ok(())
    }

    /// Full admissibility (box bounds and volume budget); required of design
    /// iterates and optimizer inputs.
    pub fn validate(&self, mesh: &Mesh) -> Result<()> {
        self.validate_bounds(mesh)?;
        let report = check_admissible(self, mesh);
        if report.volume_slack < -1e-9 * mesh.interior_volume() {
            return Err(Error::Config(format!(
                "design field violates the volume budget (slack {:.3e})",
                report.volume_slack
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct AdmissibilityReport {
    pub bounds_ok: bool,
    /// Signed slack `gamma |Omega| - sum_interior kappa h^n`; nonnegative when
    /// the volume constraint holds.
    pub volume_slack: f64,
}

pub fn check_admissible(design: &DesignField, mesh: &Mesh) -> AdmissibilityReport {
    let b = design.bounds;
    let eps = 1e-12 * (b.kappa_max - b.kappa_min);
    let bounds_ok = design
        .kappa
        .iter()
        .all(|&k| k >= b.kappa_min - eps && k <= b.kappa_max + eps && k.is_finite());
    let hn = mesh.measure();
    let used: f64 = mesh.interior_ids.iter().map(|&id| design.kappa[id as usize] * hn).sum();
    AdmissibilityReport { bounds_ok, volume_slack: b.gamma * mesh.interior_volume() - used }
}

/// Two-point conductivity per pair under the selected averaging scheme.
pub fn pair_conductivity(
    design: &DesignField,
    scheme: AveragingScheme,
    pairs: &PairList,
) -> SymPairField {
    let values: Vec<f64> = (0..pairs.len())
        .into_par_iter()
        .map(|p| {
            scheme.mean(design.kappa[pairs.i[p] as usize], design.kappa[pairs.j[p] as usize])
        })
        .collect();
    SymPairField { values }
}
