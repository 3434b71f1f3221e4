//! Command-line experiment driver.
//!
//! Subcommands: `burgers-study` (single step, k Newton iterations),
//! `integrate` (one long-time run to CSV) and `sweep` (the cartesian product
//! of `sweep.*` config lists, run concurrently). Exit codes: 0 success,
//! 1 solver failure, 2 configuration error.

pub mod config;
pub mod exact;
pub mod experiments;

use clap::{Args, Parser, Subcommand};
use config::ExperimentConfig;
use experiments::RunError;
use std::io::Write;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "entropic", about = "Entropy errors of Newton solvers and their fix by relaxation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    /// Configuration file (`key = value` lines)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--override solver.rel_tol=1e-5`
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output path (a directory for `sweep`)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Integrate to the full-scale final time instead of the desk-scale one
    #[arg(long)]
    pub full_scale: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Entropy and residual after k = 0..k_max Newton iterations of one step
    BurgersStudy(CommonArgs),
    /// Long-time integration with CSV output
    Integrate(CommonArgs),
    /// Concurrent runs over the `sweep.*` lists of the configuration
    Sweep(CommonArgs),
}

fn load(args: &CommonArgs) -> Result<ExperimentConfig, RunError> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    for o in &args.overrides {
        cfg.apply_override(o)?;
    }
    Ok(cfg)
}

fn execute(cmd: &Command) -> Result<(), RunError> {
    match cmd {
        Command::BurgersStudy(args) => {
            let cfg = load(args)?;
            let rows = experiments::run_burgers_newton_study(&cfg, cfg.study_k_max)?;
            match args.out.as_ref().or(cfg.output.as_ref()) {
                Some(path) => {
                    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
                    experiments::write_study_csv(&cfg, &rows, &mut w)?;
                    std::fs::write(experiments::meta_path(path), cfg.to_text())?;
                }
                None => experiments::write_study_csv(&cfg, &rows, &mut std::io::stdout().lock())?,
            }
        }
        Command::Integrate(args) => {
            let cfg = load(args)?;
            match args.out.as_ref().or(cfg.output.as_ref()) {
                Some(path) => {
                    let out = experiments::run_to_file(&cfg, args.full_scale, path)?;
                    eprintln!("{} steps to t = {:.6}, wrote {}", out.steps, out.final_t, path.display());
                }
                None => {
                    let mut stdout = std::io::stdout().lock();
                    experiments::run_time_integration(&cfg, args.full_scale, &mut stdout)?;
                    stdout.flush()?;
                }
            }
        }
        Command::Sweep(args) => {
            let cfg = load(args)?;
            let dir = args.out.clone().unwrap_or_else(|| PathBuf::from("sweep-output"));
            let results = experiments::run_sweep(&cfg, args.full_scale, &dir)?;
            let mut first_err = None;
            for (label, r) in results {
                match r {
                    Ok(o) => eprintln!("{label}: {} steps to t = {:.6}", o.steps, o.final_t),
                    Err(e) => {
                        eprintln!("{label}: {e}");
                        first_err.get_or_insert(e);
                    }
                }
            }
            if let Some(e) = first_err {
                return Err(e);
            }
        }
    }
    Ok(())
}

/// Runs the parsed command line and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
