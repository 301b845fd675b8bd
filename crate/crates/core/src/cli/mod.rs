//! Command-line front end: configuration, presets, execution and CSV output.

pub mod config;
pub mod output;
pub mod presets;

use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;

pub use config::{from_preset, parse_config_file, resolve, ExperimentConfig, Overrides};

use crate::flow::{check_energy_slack, run_flow_observed, Trajectory};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),

    #[error("unknown preset `{name}`; known presets: {known}")]
    UnknownPreset { name: String, known: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Flow(#[from] crate::error::Error),

    #[error("invariant check failed: {0}")]
    Check(String),

    #[error("{0}")]
    Usage(String),
}

#[derive(Debug, Parser)]
#[command(
    name = "varflow",
    version,
    about = "Variational time stepping for 1-D gradient flows with nonlinear mobility"
)]
pub struct Args {
    /// Built-in preset to run.
    #[arg(long, value_name = "NAME")]
    pub preset: Option<String>,

    /// TOML configuration file; repeat to run several experiments in parallel.
    #[arg(long, value_name = "PATH")]
    pub config: Vec<PathBuf>,

    /// Output directory (one subdirectory per config when several are given).
    #[arg(long, value_name = "PATH")]
    pub out_dir: Option<PathBuf>,

    /// Number of outer steps.
    #[arg(long, value_name = "K")]
    pub steps: Option<usize>,

    /// Write a snapshot every N steps.
    #[arg(long, value_name = "N")]
    pub snapshot_every: Option<usize>,

    /// Divide N_x and multiply tau by this factor.
    #[arg(long, value_name = "S")]
    pub scale: Option<f64>,

    /// Print the available presets and exit.
    #[arg(long)]
    pub list_presets: bool,

    /// Check mass conservation and energy descent on the produced trajectory.
    #[arg(long)]
    pub check: bool,
}

/// Outcome of one experiment.
#[derive(Debug)]
pub struct RunSummary {
    pub name: String,
    pub out_dir: PathBuf,
    pub snapshots: usize,
    pub trajectory: Trajectory,
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Runs one experiment, writing snapshots, `index.csv` and `diagnostics.csv`
/// into `out_dir`, and printing a line per snapshot to `log`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    check: bool,
    log: &mut dyn std::io::Write,
) -> Result<RunSummary, CliError> {
    let flow = cfg.flow_config()?;
    create_dir(out_dir)?;
    let mut index = Vec::new();
    let every = flow.snapshot_every;
    let last = flow.steps;
    let traj = run_flow_observed(&flow, &cfg.initial_profile(), |d, row| {
        if d.step % every == 0 || d.step == last {
            output::write_snapshot_csv(row, &flow.grid, out_dir, d.step).map_err(|e| {
                crate::error::Error::Precondition(format!("writing snapshot failed: {e}"))
            })?;
            index.push((d.step, d.time));
            let _ = writeln!(
                log,
                "[{}] step {:>6}  t = {:<12.6e} mass = {:.15e}  energy = {:.10e}  newton = {:>3}  |grad| = {:.2e}{}",
                cfg.name,
                d.step,
                d.time,
                d.mass,
                d.energy,
                d.newton_iters,
                d.grad_norm,
                if d.converged { "" } else { "  (not converged)" }
            );
        }
        Ok(())
    })?;
    output::write_index_csv(&index, out_dir)?;
    output::write_diagnostics_csv(&traj.diagnostics, out_dir)?;

    if check {
        let m0 = traj.diagnostics[0].mass;
        let drift = traj
            .diagnostics
            .iter()
            .map(|d| (d.mass - m0).abs() / m0.abs().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        let slack = check_energy_slack(&traj, &flow)?;
        let _ = writeln!(
            log,
            "[{}] check: relative mass drift {:.3e} (limit 1e-12), max slack violation {:.3e} (limit 1e-9)",
            cfg.name, drift, slack.max_violation
        );
        if drift > 1e-12 {
            return Err(CliError::Check(format!(
                "mass drift {drift:e} exceeds 1e-12"
            )));
        }
        if !slack.passed {
            return Err(CliError::Check(format!(
                "energy slack violated by {:e} at step {:?}",
                slack.max_violation, slack.worst_step
            )));
        }
    }
    Ok(RunSummary {
        name: cfg.name.clone(),
        out_dir: out_dir.to_path_buf(),
        snapshots: index.len(),
        trajectory: traj,
    })
}

fn overrides(args: &Args) -> Overrides {
    Overrides {
        preset: args.preset.clone(),
        steps: args.steps,
        snapshot_every: args.snapshot_every,
        scale: args.scale,
        out_dir: args.out_dir.clone(),
    }
}

/// Entry point behind the binary. Returns the process exit status.
pub fn main_with(args: Args) -> i32 {
    match dispatch(&args) {
        Ok(()) => 0,
        Err(errors) => {
            for e in errors {
                eprintln!("error: {e}");
            }
            1
        }
    }
}

fn dispatch(args: &Args) -> Result<(), Vec<CliError>> {
    if args.list_presets {
        for p in presets::presets() {
            println!(
                "{:<16} N_x={:<4} tau={:<8e} eps={:<6e} steps={:<6} {}",
                p.name, p.n_x, p.tau, p.epsilon, p.steps, p.description
            );
        }
        return Ok(());
    }
    let o = overrides(args);
    if args.config.is_empty() {
        let Some(name) = &args.preset else {
            return Err(vec![CliError::Usage(
                "nothing to run: pass --preset NAME, --config PATH or --list-presets".into(),
            )]);
        };
        let cfg = from_preset(name, &o).map_err(|e| vec![e])?;
        let dir = cfg
            .out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
        let mut out = std::io::stdout();
        return run_experiment(&cfg, &dir, args.check, &mut out)
            .map(|_| ())
            .map_err(|e| vec![e]);
    }

    let several = args.config.len() > 1;
    let mut jobs = Vec::new();
    let mut errors = Vec::new();
    for path in &args.config {
        let resolved = parse_config_file(path).and_then(|f| resolve(Some(&f), &o));
        match resolved {
            Ok(cfg) => {
                let base = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
                let dir = if several || cfg.out_dir.is_none() {
                    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned());
                    base.join(stem.unwrap_or_else(|| cfg.name.clone()))
                } else {
                    base
                };
                jobs.push((cfg, dir));
            }
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    let results: Vec<Result<(), CliError>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(cfg, dir)| {
                s.spawn(move || {
                    let mut out = std::io::stdout();
                    run_experiment(cfg, dir, args.check, &mut out).map(|_| ())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(CliError::Usage("worker thread panicked".into())))
            })
            .collect()
    });
    let errors: Vec<CliError> = results.into_iter().filter_map(|r| r.err()).collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}
