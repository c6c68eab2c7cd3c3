//! Command dispatch and run output serialization.
//!
//! Every run writes its fully resolved configuration (`resolved.cfg`) next to
//! its outputs, a JSON summary, and CSV field dumps in deterministic
//! row-major cell order, so identical configurations produce byte-identical
//! artifacts.

pub mod config;
pub mod csv;

pub use config::{parse_config, OptimizerConfig, RunConfig};
pub use csv::{read_design_csv, read_field_csv, write_field_csv, write_mesh_csv, FieldView};

use crate::design_opt::{optimize_design, verify_saddle, OptimizeOptions};
use crate::error::{Error, Result};
use crate::experiments::{delta_sweep, summarize, SweepConfig};
use crate::geometry::{build_mesh, build_pairs, Mesh, PairList};
use crate::kernel::KernelSpec;
use crate::local_ref::{optimize_local_design, solve_local};
use crate::material::{check_admissible, DesignField};
use crate::operators::flux_recovery;
use crate::state_solvers::{
    duality_gap, infsup_constant, poincare_constant, solve_kelvin, solve_primal, stability_check,
    SourceField,
};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(
    name = "nlkelvin",
    about = "Nonlocal optimal design of scalar diffusion: state solves, design optimization, and horizon sweeps",
    disable_version_flag = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the nonlocal Dirichlet problem (add --dual for the Kelvin solve).
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dual: bool,
    },
    /// Solve the nonlocal Kelvin (mixed) problem.
    SolveDual {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the local finite-difference reference problem.
    SolveLocal {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimize the nonlocal design (dual alternating minimization).
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimize the local reference design.
    OptimizeLocal {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the horizon sweep with per-delta diagnostics.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute the inf-sup and Poincare constants for the configured mesh.
    Infsup {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a configuration without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Entry point used by the binary: returns the process exit code
/// (0 success, 1 validation failure, 2 solver failure, 64 usage).
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            eprint!("{e}");
            return 64;
        }
    };
    let result = match cli.command {
        Command::Solve { config, out, dual } => run_solve(&config, out.as_deref(), dual),
        Command::SolveDual { config, out } => run_solve(&config, out.as_deref(), true),
        Command::SolveLocal { config, out } => run_solve_local(&config, out.as_deref()),
        Command::Optimize { config, out } => run_optimize(&config, out.as_deref()),
        Command::OptimizeLocal { config, out } => run_optimize_local(&config, out.as_deref()),
        Command::Sweep { config, out } => run_sweep(&config, out.as_deref()),
        Command::Infsup { config, out } => run_infsup(&config, out.as_deref()),
        Command::Validate { config } => run_validate(&config),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    parse_config(&text)
}

fn prepare_outdir(cfg: &RunConfig, out_override: Option<&Path>) -> Result<PathBuf> {
    let dir = out_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::Io { path: dir.display().to_string(), source: e })?;
    std::fs::write(dir.join("resolved.cfg"), cfg.echo())
        .map_err(|e| Error::Io { path: dir.display().to_string(), source: e })?;
    Ok(dir)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Structural(format!("json serialization failed: {e}")))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

struct Setup {
    mesh: Mesh,
    pairs: PairList,
    kappa: DesignField,
    source: SourceField,
}

fn build_setup(cfg: &RunConfig, delta: f64) -> Result<Setup> {
    let h = cfg.resolve_h(delta);
    let mesh = build_mesh(&cfg.domain, h, delta)?;
    let kernel = KernelSpec::new(cfg.kernel_family, delta, cfg.domain.dim)?;
    let pairs = build_pairs(&mesh, &kernel)?;
    let kappa = match &cfg.kappa_csv {
        Some(path) => {
            let design = read_design_csv(Path::new(path), &mesh, cfg.bounds)?;
            design.validate(&mesh)?;
            design
        }
        None => DesignField::gamma_uniform(&mesh, cfg.bounds),
    };
    let source = SourceField::from_preset(&mesh, &cfg.source);
    Ok(Setup { mesh, pairs, kappa, source })
}

#[derive(Serialize)]
struct SolveSummary {
    #[serde(rename = "I_primal")]
    i_primal: f64,
    #[serde(rename = "I_dual")]
    i_dual: Option<f64>,
    gap: Option<f64>,
    residuals: crate::state_solvers::Residuals,
    infsup: f64,
    stability_ratio: Option<f64>,
}

fn run_solve(config: &Path, out: Option<&Path>, dual: bool) -> Result<()> {
    let cfg = load_config(config)?;
    let dir = prepare_outdir(&cfg, out)?;
    let delta = cfg.single_delta()?;
    let setup = build_setup(&cfg, delta)?;
    let Setup { mesh, pairs, kappa, source } = &setup;
    let sol = if dual {
        solve_kelvin(kappa, source, cfg.scheme, mesh, pairs, &cfg.solver)?
    } else {
        solve_primal(kappa, source, cfg.scheme, mesh, pairs, &cfg.solver)?
    };
    let stability = if dual { Some(stability_check(&sol, source, mesh, pairs)?) } else { None };
    let summary = SolveSummary {
        i_primal: sol.energy_primal,
        i_dual: sol.energy_dual,
        gap: duality_gap(&sol),
        residuals: sol.residuals,
        infsup: infsup_constant(mesh, pairs)?,
        stability_ratio: stability,
    };
    write_json(&dir, "summary.json", &summary)?;
    write_mesh_csv(mesh, &dir.join("mesh.csv"))?;
    write_field_csv(&FieldView::Cell(&sol.u), mesh, &dir.join("u.csv"))?;
    // recovered flux: from the dual flux when present, else from the optimal
    // flux relation at the primal solution
    let q = match &sol.q {
        Some(q) => q.clone(),
        None => {
            let kdd = crate::material::pair_conductivity(kappa, cfg.scheme, pairs);
            crate::state_solvers::optimal_flux(&sol.u, &kdd, pairs, mesh)
        }
    };
    let recovered = flux_recovery(&q, pairs, mesh);
    write_field_csv(&FieldView::Vector(&recovered), mesh, &dir.join("flux.csv"))?;
    Ok(())
}

#[derive(Serialize)]
struct LocalSummary {
    #[serde(rename = "I_loc_primal")]
    i_loc_primal: f64,
    #[serde(rename = "I_loc_dual")]
    i_loc_dual: f64,
    residual: f64,
}

fn run_solve_local(config: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let dir = prepare_outdir(&cfg, out)?;
    let delta = cfg.single_delta()?;
    let setup = build_setup(&cfg, delta)?;
    let Setup { mesh, kappa, source, .. } = &setup;
    let sol = solve_local(kappa, source, mesh, &cfg.solver)?;
    write_json(
        &dir,
        "summary.json",
        &LocalSummary {
            i_loc_primal: sol.i_loc_primal,
            i_loc_dual: sol.i_loc_dual,
            residual: sol.residual,
        },
    )?;
    write_field_csv(&FieldView::Cell(&sol.u), mesh, &dir.join("u.csv"))?;
    write_field_csv(&FieldView::Vector(&sol.flux), mesh, &dir.join("flux.csv"))?;
    Ok(())
}

#[derive(Serialize)]
struct OptimizeSummary {
    d_delta: f64,
    p_delta: f64,
    iters: usize,
    volume_slack: f64,
    converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    saddle: Option<crate::design_opt::SaddleReport>,
}

fn run_optimize(config: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let dir = prepare_outdir(&cfg, out)?;
    let delta = cfg.single_delta()?;
    let setup = build_setup(&cfg, delta)?;
    let Setup { mesh, pairs, source, .. } = &setup;
    let opts = OptimizeOptions { max_iters: cfg.optimizer.max_iters, rel_tol: cfg.optimizer.rel_tol };
    let result = optimize_design(source, cfg.bounds, mesh, pairs, &opts, &cfg.solver, None)?;
    let saddle = if cfg.optimizer.probes > 0 {
        Some(verify_saddle(
            &result,
            cfg.optimizer.probes,
            cfg.optimizer.seed,
            source,
            mesh,
            pairs,
            &cfg.solver,
        )?)
    } else {
        None
    };
    write_json(
        &dir,
        "summary.json",
        &OptimizeSummary {
            d_delta: result.d_value,
            p_delta: result.p_value,
            iters: result.iterations,
            volume_slack: result.volume_slack,
            converged: result.converged,
            saddle,
        },
    )?;
    write_field_csv(&FieldView::Design(&result.kappa_opt), mesh, &dir.join("kappa.csv"))?;
    let recovered = flux_recovery(&result.flux_opt, pairs, mesh);
    write_field_csv(&FieldView::Vector(&recovered), mesh, &dir.join("flux.csv"))?;
    Ok(())
}

#[derive(Serialize)]
struct OptimizeLocalSummary {
    d_star: f64,
    iters: usize,
    volume_slack: f64,
    converged: bool,
}

fn run_optimize_local(config: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let dir = prepare_outdir(&cfg, out)?;
    let delta = cfg.single_delta()?;
    let setup = build_setup(&cfg, delta)?;
    let Setup { mesh, source, .. } = &setup;
    let opts = OptimizeOptions { max_iters: cfg.optimizer.max_iters, rel_tol: cfg.optimizer.rel_tol };
    let result = optimize_local_design(source, cfg.bounds, mesh, &opts, &cfg.solver)?;
    write_json(
        &dir,
        "summary.json",
        &OptimizeLocalSummary {
            d_star: result.d_star,
            iters: result.iterations,
            volume_slack: result.volume_slack,
            converged: result.converged,
        },
    )?;
    write_field_csv(&FieldView::Design(&result.kappa), mesh, &dir.join("kappa.csv"))?;
    Ok(())
}

#[derive(Serialize)]
struct SweepOutput {
    rows: usize,
    aborted_at_delta: Option<f64>,
    #[serde(flatten)]
    summary: crate::experiments::SweepSummary,
}

fn run_sweep(config: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let dir = prepare_outdir(&cfg, out)?;
    let sweep_cfg = SweepConfig {
        domain: cfg.domain.clone(),
        delta_list: cfg.sweep_deltas(),
        m: cfg.mesh_m.unwrap_or(4),
        family: cfg.kernel_family,
        bounds: cfg.bounds,
        source: cfg.source.clone(),
        optimizer: OptimizeOptions { max_iters: cfg.optimizer.max_iters, rel_tol: cfg.optimizer.rel_tol },
        solver: cfg.solver,
        bump_margin: 0.1,
    };
    if cfg.mesh_h.is_some() {
        return Err(Error::Config(
            "sweep couples h = delta/m; set mesh.m instead of mesh.h".into(),
        ));
    }
    let records = match delta_sweep(&sweep_cfg) {
        Ok(records) => records,
        Err(ab) => {
            eprintln!("warning: {ab}");
            let delta = ab.failed_delta;
            let partial = ab.partial;
            let source = ab.source;
            write_sweep_csv(&dir, &partial)?;
            write_json(
                &dir,
                "summary.json",
                &SweepOutput {
                    rows: partial.len(),
                    aborted_at_delta: Some(delta),
                    summary: summarize(&partial),
                },
            )?;
            return Err(source);
        }
    };
    write_sweep_csv(&dir, &records)?;
    write_json(
        &dir,
        "summary.json",
        &SweepOutput { rows: records.len(), aborted_at_delta: None, summary: summarize(&records) },
    )?;
    Ok(())
}

fn write_sweep_csv(dir: &Path, records: &[crate::experiments::SweepRecord]) -> Result<()> {
    let mut text = String::from(crate::experiments::SweepRecord::CSV_HEADER);
    text.push('\n');
    for r in records {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    let path = dir.join("sweep.csv");
    std::fs::write(&path, text).map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

#[derive(Serialize)]
struct InfsupSummary {
    infsup: f64,
    poincare_const: f64,
}

fn run_infsup(config: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let dir = prepare_outdir(&cfg, out)?;
    let delta = cfg.single_delta()?;
    let setup = build_setup(&cfg, delta)?;
    let Setup { mesh, pairs, .. } = &setup;
    write_json(
        &dir,
        "summary.json",
        &InfsupSummary {
            infsup: infsup_constant(mesh, pairs)?,
            poincare_const: poincare_constant(mesh, pairs)?,
        },
    )?;
    Ok(())
}

fn run_validate(config: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    // re-check the runtime guards by building every configured discretization
    for delta in cfg.sweep_deltas() {
        let h = cfg.resolve_h(delta);
        let mesh = build_mesh(&cfg.domain, h, delta)?;
        let kernel = KernelSpec::new(cfg.kernel_family, delta, cfg.domain.dim)?;
        let pairs = build_pairs(&mesh, &kernel)?;
        if let Some(path) = &cfg.kappa_csv {
            let design = read_design_csv(Path::new(path), &mesh, cfg.bounds)?;
            design.validate(&mesh)?;
            let _ = check_admissible(&design, &mesh);
        }
        let _ = pairs.len();
    }
    Ok(())
}
