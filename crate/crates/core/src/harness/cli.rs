use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use super::checks::kernel_report;
use super::config::{ExperimentConfig, SchemeKind};
use super::fields::{fingerprint, initial_field};
use super::io::{write_kappa, write_nodal};
use super::run::{
    build_problem, build_space, run_comparison_with, run_trajectory, stability_report, stability_samples,
    write_comparison, write_stability, write_trajectory,
};
use crate::error::{Error, Result};
use crate::msbasis::export_basis;

#[derive(Debug, Parser)]
#[command(name = "fracstep", version, about = "Multiscale time stepping for time-fractional diffusion-reaction problems")]
pub struct Cli {
    /// JSON experiment configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory (overrides the configuration).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Use the full-size mesh and step count.
    #[arg(long, global = true)]
    pub paper_scale: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the coefficient and source grids.
    GenField,
    /// Build the multiscale basis and export it.
    BuildBasis,
    /// Run one scheme and write its trajectory.
    Run {
        #[arg(long, default_value = "partially-explicit")]
        scheme: String,
    },
    /// Run the fine reference and the configured schemes and write error series.
    Compare {
        /// Comma-separated scheme names (overrides the configuration).
        #[arg(long, value_delimiter = ',')]
        schemes: Option<Vec<String>>,
    },
    /// Evaluate the step-size condition of the partially explicit scheme.
    CheckStability {
        /// Step size to test instead of `final_time / steps`.
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Check the fractional difference kernel.
    KernelTest {
        #[arg(long)]
        alpha: f64,
    },
}

pub fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if cli.paper_scale {
        cfg = cfg.paper_scale();
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs a parsed command; `Ok(false)` means checks ran but did not all pass.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<bool> {
    super::configure_threads();
    if let Command::KernelTest { alpha } = cli.command {
        let r = kernel_report(alpha)?;
        writeln!(out, "alpha={alpha}")?;
        writeln!(
            out,
            "exactness max_rel_error={:.3e} {}",
            r.exactness_error,
            if r.exact_ok() { "PASS" } else { "FAIL" }
        )?;
        let orders: Vec<String> = r.orders.iter().map(|o| format!("{o:.4}")).collect();
        writeln!(
            out,
            "order observed=[{}] expected={:.4} {}",
            orders.join(", "),
            2.0 - alpha,
            if r.order_ok() { "PASS" } else { "FAIL" }
        )?;
        return Ok(r.passed());
    }

    let mut cfg = load_config(cli)?;
    let dir = cfg.output.dir.clone();
    match &cli.command {
        Command::KernelTest { .. } => unreachable!(),
        Command::GenField => {
            let problem = build_problem(&cfg)?;
            write_kappa(&problem.mesh, &problem.kappa, &dir.join("kappa.txt"))?;
            write_nodal(&problem.mesh, &problem.source, &dir.join("source.txt"))?;
            writeln!(out, "fingerprint={}", fingerprint(&problem.mesh, &problem.kappa))?;
            writeln!(out, "kappa_min={:e} kappa_max={:e}", problem.kappa.min(), problem.kappa.max())?;
        }
        Command::BuildBasis => {
            let problem = build_problem(&cfg)?;
            let space = build_space(&cfg, &problem)?;
            export_basis(&space, &dir.join("basis"))?;
            let d = &space.diagnostics;
            writeln!(out, "dim1={} dim2={}", space.dim1(), space.dim2())?;
            writeln!(out, "cem_residual={:.3e} aux2_residual={:.3e}", d.cem_residual, d.aux2_residual)?;
        }
        Command::Run { scheme } => {
            let kind = SchemeKind::parse(scheme)?;
            let problem = build_problem(&cfg)?;
            let space = if kind.needs_basis() { Some(build_space(&cfg, &problem)?) } else { None };
            let traj = run_trajectory(kind, &cfg, &problem, space.as_ref())?;
            write_trajectory(&problem.mesh, &traj, &dir)?;
            writeln!(
                out,
                "scheme={} steps_completed={} diverged_at={} seconds={:.3}",
                kind.as_str(),
                traj.steps_completed(),
                traj.diverged_at.map(|k| k.to_string()).unwrap_or_else(|| "none".into()),
                traj.seconds
            )?;
        }
        Command::Compare { schemes } => {
            if let Some(list) = schemes {
                cfg.schemes = list.iter().map(|s| SchemeKind::parse(s)).collect::<Result<_>>()?;
            }
            let problem = build_problem(&cfg)?;
            let start = std::time::Instant::now();
            let space = if cfg.schemes.iter().any(|k| k.needs_basis()) {
                Some(build_space(&cfg, &problem)?)
            } else {
                None
            };
            let report = run_comparison_with(&cfg, &problem, space.as_ref(), start.elapsed().as_secs_f64())?;
            write_comparison(&problem.mesh, &report, &dir)?;
            writeln!(out, "basis seconds={:.3}", report.basis_seconds)?;
            writeln!(out, "implicit-fine seconds={:.3}", report.reference.seconds)?;
            for s in &report.series {
                let last = s.errors.last();
                writeln!(
                    out,
                    "{} seconds={:.3} final_rel_l2={} final_rel_energy={} diverged_at={}",
                    s.trajectory.scheme.as_str(),
                    s.trajectory.seconds,
                    last.map(|e| format!("{:.6e}", e.rel_l2)).unwrap_or_else(|| "-".into()),
                    last.map(|e| format!("{:.6e}", e.rel_energy)).unwrap_or_else(|| "-".into()),
                    s.trajectory.diverged_at.map(|k| k.to_string()).unwrap_or_else(|| "none".into())
                )?;
            }
            if let Some(st) = &report.stability {
                writeln!(out, "stability satisfied={} max_stable_dt={:e}", st.satisfied, st.max_stable_dt)?;
            }
        }
        Command::CheckStability { dt } => {
            if let Some(dt) = dt {
                if !(*dt > 0.0) {
                    return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
                }
                cfg.steps = ((cfg.final_time / dt).round() as usize).max(1);
                cfg.final_time = dt * cfg.steps as f64;
            }
            let problem = build_problem(&cfg)?;
            let space = build_space(&cfg, &problem)?;
            let mut samples = stability_samples(&cfg, &problem)?;
            if samples.is_empty() {
                samples.push(initial_field(&problem.mesh, &cfg));
            }
            let report = stability_report(&cfg, &problem, &space, &samples)?;
            write_stability(&report, &dir)?;
            write!(out, "{}", report.to_key_value())?;
        }
    }
    Ok(true)
}

/// One-line JSON error record for stderr.
pub fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

/// Process entry point; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{}", error_line("usage", e.to_string().lines().next().unwrap_or("invalid usage")));
            return 2;
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match execute(&cli, &mut lock) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            1
        }
    }
}
