//! Flat-section key/value run configuration.
//!
//! The format is deliberately minimal: `[section]` headers, `key = value`
//! lines, `#` comments. Unknown sections or keys are rejected so that a typo
//! cannot silently fall back to a default.

use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::kernel::KernelFamily;
use crate::material::{AveragingScheme, Bounds};
use crate::state_solvers::{SolveOptions, SourcePreset};
use std::collections::BTreeMap;
use std::fmt::Write as _;

#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
    /// Random admissible probes run by the saddle verification after an
    /// optimization (0 disables it).
    pub probes: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { max_iters: 200, rel_tol: 1e-7, seed: 0, probes: 0 }
    }
}

/// Fully resolved run configuration (defaults filled in).
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub domain: Domain,
    pub mesh_h: Option<f64>,
    pub mesh_m: Option<usize>,
    pub kernel_family: KernelFamily,
    pub delta: Option<f64>,
    pub delta_list: Option<Vec<f64>>,
    pub bounds: Bounds,
    pub scheme: AveragingScheme,
    /// Optional CSV with a per-cell design to solve at (defaults to the
    /// uniform admissible design kappa = gamma).
    pub kappa_csv: Option<String>,
    pub source: SourcePreset,
    pub solver: SolveOptions,
    pub optimizer: OptimizerConfig,
    pub output_dir: String,
}

impl RunConfig {
    /// Horizon for single-horizon commands.
    pub fn single_delta(&self) -> Result<f64> {
        match (self.delta, &self.delta_list) {
            (Some(d), _) => Ok(d),
            (None, Some(list)) if list.len() == 1 => Ok(list[0]),
            (None, Some(_)) => Err(Error::Config(
                "kernel.delta_list given; this command needs a single kernel.delta".into(),
            )),
            (None, None) => unreachable!("validated at parse time"),
        }
    }

    /// Horizons for the sweep command.
    pub fn sweep_deltas(&self) -> Vec<f64> {
        match &self.delta_list {
            Some(list) => list.clone(),
            None => vec![self.delta.expect("validated at parse time")],
        }
    }

    /// Cell width for a given horizon: `mesh.h` verbatim, or `delta / m`.
    pub fn resolve_h(&self, delta: f64) -> f64 {
        match (self.mesh_h, self.mesh_m) {
            (Some(h), _) => h,
            (None, Some(m)) => delta / m as f64,
            (None, None) => delta / 4.0,
        }
    }

    /// Canonical echo of the resolved configuration, written next to outputs.
    pub fn echo(&self) -> String {
        let fmt = |v: f64| format!("{v:.16e}");
        let mut s = String::new();
        let _ = writeln!(s, "[domain]");
        let mut box_spec = String::new();
        for d in 0..self.domain.dim {
            let _ = write!(box_spec, "{} {} ", fmt(self.domain.lo[d]), fmt(self.domain.hi[d]));
        }
        let _ = writeln!(s, "box = {}", box_spec.trim_end());
        let _ = writeln!(s, "\n[mesh]");
        if let Some(h) = self.mesh_h {
            let _ = writeln!(s, "h = {}", fmt(h));
        }
        if let Some(m) = self.mesh_m {
            let _ = writeln!(s, "m = {m}");
        }
        if self.mesh_h.is_none() && self.mesh_m.is_none() {
            let _ = writeln!(s, "m = 4");
        }
        let _ = writeln!(s, "\n[kernel]");
        let _ = writeln!(s, "family = {}", self.kernel_family);
        if let Some(d) = self.delta {
            let _ = writeln!(s, "delta = {}", fmt(d));
        }
        if let Some(list) = &self.delta_list {
            let joined: Vec<String> = list.iter().map(|&d| fmt(d)).collect();
            let _ = writeln!(s, "delta_list = {}", joined.join(" "));
        }
        let _ = writeln!(s, "\n[material]");
        let _ = writeln!(s, "kappa_min = {}", fmt(self.bounds.kappa_min));
        let _ = writeln!(s, "kappa_max = {}", fmt(self.bounds.kappa_max));
        let _ = writeln!(s, "gamma = {}", fmt(self.bounds.gamma));
        let _ = writeln!(s, "scheme = {}", self.scheme);
        if let Some(p) = &self.kappa_csv {
            let _ = writeln!(s, "kappa_csv = {p}");
        }
        let _ = writeln!(s, "\n[source]");
        match &self.source {
            SourcePreset::Constant { amplitude } => {
                let _ = writeln!(s, "preset = constant");
                let _ = writeln!(s, "amplitude = {}", fmt(*amplitude));
            }
            SourcePreset::GaussianBump { amplitude, sigma } => {
                let _ = writeln!(s, "preset = gaussian_bump");
                let _ = writeln!(s, "amplitude = {}", fmt(*amplitude));
                let _ = writeln!(s, "sigma = {}", fmt(*sigma));
            }
            SourcePreset::Checkerboard { amplitude, blocks } => {
                let _ = writeln!(s, "preset = checkerboard");
                let _ = writeln!(s, "amplitude = {}", fmt(*amplitude));
                let _ = writeln!(s, "blocks = {blocks}");
            }
            SourcePreset::Custom => {
                let _ = writeln!(s, "preset = custom");
            }
        }
        let _ = writeln!(s, "\n[solver]");
        let _ = writeln!(s, "tol = {}", fmt(self.solver.tol));
        let _ = writeln!(s, "max_iters = {}", self.solver.max_iters);
        let _ = writeln!(s, "\n[optimizer]");
        let _ = writeln!(s, "max_iters = {}", self.optimizer.max_iters);
        let _ = writeln!(s, "rel_tol = {}", fmt(self.optimizer.rel_tol));
        let _ = writeln!(s, "seed = {}", self.optimizer.seed);
        let _ = writeln!(s, "probes = {}", self.optimizer.probes);
        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "dir = {}", self.output_dir);
        s
    }
}

const SECTIONS: &[&str] =
    &["domain", "mesh", "kernel", "material", "source", "solver", "optimizer", "output"];

fn known_keys(section: &str) -> &'static [&'static str] {
    match section {
        "domain" => &["box"],
        "mesh" => &["h", "m"],
        "kernel" => &["family", "delta", "delta_list"],
        "material" => &["kappa_min", "kappa_max", "gamma", "scheme", "kappa_csv"],
        "source" => &["preset", "amplitude", "sigma", "blocks"],
        "solver" => &["tol", "max_iters"],
        "optimizer" => &["max_iters", "rel_tol", "seed", "probes"],
        "output" => &["dir"],
        _ => &[],
    }
}

fn parse_f64(path: &str, v: &str) -> Result<f64> {
    v.parse::<f64>().map_err(|_| Error::Config(format!("{path}: not a number: '{v}'")))
}

fn parse_usize(path: &str, v: &str) -> Result<usize> {
    v.parse::<usize>().map_err(|_| Error::Config(format!("{path}: not an integer: '{v}'")))
}

/// Parse and validate a configuration text into a resolved [`RunConfig`].
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut entries: BTreeMap<(String, String), String> = BTreeMap::new();
    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(k) => &raw[..k],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            let name = name.trim().to_lowercase();
            if !SECTIONS.contains(&name.as_str()) {
                return Err(Error::Config(format!("line {}: unknown section [{name}]", lineno + 1)));
            }
            section = name;
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected 'key = value', got '{line}'", lineno + 1)));
        };
        if section.is_empty() {
            return Err(Error::Config(format!("line {}: key outside of any [section]", lineno + 1)));
        }
        let key = key.trim().to_lowercase();
        if !known_keys(&section).contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown key {section}.{key}")));
        }
        if entries.insert((section.clone(), key.clone()), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!("duplicate key {section}.{key}")));
        }
    }
    let get = |sec: &str, key: &str| entries.get(&(sec.to_string(), key.to_string()));

    // domain
    let box_spec = get("domain", "box")
        .ok_or_else(|| Error::Config("missing required key domain.box".into()))?;
    let nums: Vec<f64> = box_spec
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| parse_f64("domain.box", t))
        .collect::<Result<_>>()?;
    if nums.len() % 2 != 0 || nums.is_empty() || nums.len() > 6 {
        return Err(Error::Config(format!(
            "domain.box: need lo/hi per axis (2, 4 or 6 numbers), got {}",
            nums.len()
        )));
    }
    let dim = nums.len() / 2;
    let lo: Vec<f64> = (0..dim).map(|d| nums[2 * d]).collect();
    let hi: Vec<f64> = (0..dim).map(|d| nums[2 * d + 1]).collect();
    let domain = Domain::new(lo, hi)?;

    // mesh
    let mesh_h = get("mesh", "h").map(|v| parse_f64("mesh.h", v)).transpose()?;
    let mesh_m = get("mesh", "m").map(|v| parse_usize("mesh.m", v)).transpose()?;
    if mesh_h.is_some() && mesh_m.is_some() {
        return Err(Error::Config("mesh.h and mesh.m are mutually exclusive".into()));
    }
    if let Some(h) = mesh_h {
        if !(h > 0.0) {
            return Err(Error::Config(format!("mesh.h must be positive, got {h}")));
        }
    }
    if let Some(m) = mesh_m {
        if m < 2 {
            return Err(Error::Resolution(format!("mesh.m = {m} under-resolves the kernel (need m >= 2)")));
        }
    }

    // kernel
    let kernel_family = match get("kernel", "family").map(String::as_str) {
        None | Some("constant_ball") => KernelFamily::ConstantBall,
        Some("truncated_tent") => KernelFamily::TruncatedTent,
        Some(other) => {
            return Err(Error::Config(format!(
                "kernel.family: unknown family '{other}' (constant_ball | truncated_tent)"
            )))
        }
    };
    let delta = get("kernel", "delta").map(|v| parse_f64("kernel.delta", v)).transpose()?;
    let delta_list = get("kernel", "delta_list")
        .map(|v| -> Result<Vec<f64>> {
            v.split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|t| parse_f64("kernel.delta_list", t))
                .collect()
        })
        .transpose()?;
    if delta.is_none() && delta_list.is_none() {
        return Err(Error::Config("missing required key kernel.delta (or kernel.delta_list)".into()));
    }
    if delta.is_some() && delta_list.is_some() {
        return Err(Error::Config("kernel.delta and kernel.delta_list are mutually exclusive".into()));
    }
    for &d in delta.iter().chain(delta_list.iter().flatten()) {
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Config(format!("kernel horizon must be positive, got {d}")));
        }
        if let Some(h) = mesh_h {
            if d / h < 2.0 - 1e-12 {
                return Err(Error::Resolution(format!(
                    "delta/h = {:.4} under-resolves the kernel (need >= 2)",
                    d / h
                )));
            }
        }
    }
    if let Some(list) = &delta_list {
        if list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("kernel.delta_list must be strictly decreasing".into()));
        }
    }

    // material
    let kappa_min =
        get("material", "kappa_min").map(|v| parse_f64("material.kappa_min", v)).transpose()?.unwrap_or(1.0);
    let kappa_max =
        get("material", "kappa_max").map(|v| parse_f64("material.kappa_max", v)).transpose()?.unwrap_or(2.0);
    let gamma =
        get("material", "gamma").map(|v| parse_f64("material.gamma", v)).transpose()?.unwrap_or(1.4);
    let bounds = Bounds::new(kappa_min, kappa_max, gamma)?;
    let scheme = match get("material", "scheme").map(String::as_str) {
        None | Some("harmonic") => AveragingScheme::Harmonic,
        Some("arithmetic") => AveragingScheme::Arithmetic,
        Some("geometric") => AveragingScheme::Geometric,
        Some(other) => {
            return Err(Error::Config(format!(
                "material.scheme: unknown scheme '{other}' (harmonic | arithmetic | geometric)"
            )))
        }
    };
    let kappa_csv = get("material", "kappa_csv").cloned();

    // source
    let amplitude =
        get("source", "amplitude").map(|v| parse_f64("source.amplitude", v)).transpose()?.unwrap_or(1.0);
    let min_extent =
        (0..domain.dim).map(|d| domain.hi[d] - domain.lo[d]).fold(f64::INFINITY, f64::min);
    let sigma = get("source", "sigma")
        .map(|v| parse_f64("source.sigma", v))
        .transpose()?
        .unwrap_or(min_extent / 6.0);
    let blocks =
        get("source", "blocks").map(|v| parse_usize("source.blocks", v)).transpose()?.unwrap_or(2);
    if blocks == 0 {
        return Err(Error::Config("source.blocks must be at least 1".into()));
    }
    let source = match get("source", "preset").map(String::as_str) {
        None | Some("constant") => SourcePreset::Constant { amplitude },
        Some("gaussian_bump") => {
            if !(sigma > 0.0) {
                return Err(Error::Config(format!("source.sigma must be positive, got {sigma}")));
            }
            SourcePreset::GaussianBump { amplitude, sigma }
        }
        Some("checkerboard") => SourcePreset::Checkerboard { amplitude, blocks },
        Some(other) => {
            return Err(Error::Config(format!(
                "source.preset: unknown preset '{other}' (constant | gaussian_bump | checkerboard)"
            )))
        }
    };

    // solver
    let tol = get("solver", "tol").map(|v| parse_f64("solver.tol", v)).transpose()?.unwrap_or(1e-10);
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::Config(format!("solver.tol must be in (0, 1), got {tol}")));
    }
    let solver_max =
        get("solver", "max_iters").map(|v| parse_usize("solver.max_iters", v)).transpose()?.unwrap_or(100_000);
    let solver = SolveOptions { tol, max_iters: solver_max };

    // optimizer
    let optimizer = OptimizerConfig {
        max_iters: get("optimizer", "max_iters")
            .map(|v| parse_usize("optimizer.max_iters", v))
            .transpose()?
            .unwrap_or(200),
        rel_tol: get("optimizer", "rel_tol")
            .map(|v| parse_f64("optimizer.rel_tol", v))
            .transpose()?
            .unwrap_or(1e-7),
        seed: get("optimizer", "seed")
            .map(|v| parse_usize("optimizer.seed", v))
            .transpose()?
            .unwrap_or(0) as u64,
        probes: get("optimizer", "probes")
            .map(|v| parse_usize("optimizer.probes", v))
            .transpose()?
            .unwrap_or(0),
    };

    let output_dir = get("output", "dir").cloned().unwrap_or_else(|| "out".to_string());

    Ok(RunConfig {
        domain,
        mesh_h,
        mesh_m,
        kernel_family,
        delta,
        delta_list,
        bounds,
        scheme,
        kappa_csv,
        source,
        solver,
        optimizer,
        output_dir,
    })
}
