//! Command-line driver: solve, sweep, diagnose and simulate from a TOML
//! configuration, writing CSV and JSON outputs.
//!
//! Exit codes: 0 success, 1 invariant failure, 2 configuration or usage
//! error, 3 solver failure.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use taumfg::{Config, MfgError};

use commands::Failure;
use report::Output;

/// Environment variable holding the worker-thread count.
const THREADS_VAR: &str = "TAUMFG_THREADS";

#[derive(Parser)]
#[command(name = "taumfg", version, about = "Discrete-time stationary mean-field games on the torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML model configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Override the configured random seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the discrete system and write u, m, V and a summary.
    Solve(Common),
    /// Compare discrete solutions over a list of tau against the continuum solution.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated time steps; defaults to the configured tau.
        #[arg(long, value_delimiter = ',')]
        tau_list: Vec<f64>,
    },
    /// Solve and run the structural diagnostics.
    Diagnose(Common),
    /// Solve and simulate the controlled chain under the solved control.
    Simulate(Common),
}

fn exit_code(e: &MfgError) -> u8 {
    match e {
        MfgError::NonConvergence { .. } | MfgError::SearchRadius { .. } | MfgError::Domain { .. } => 3,
        _ => 2,
    }
}

fn init_threads() -> Result<(), MfgError> {
    let Ok(v) = std::env::var(THREADS_VAR) else { return Ok(()) };
    let n: usize = v
        .parse()
        .map_err(|_| MfgError::Usage(format!("{THREADS_VAR} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| MfgError::Usage(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_threads()?;
    let (common, name) = match &cli.command {
        Command::Solve(c) => (c, "solve"),
        Command::Sweep { common, .. } => (common, "sweep"),
        Command::Diagnose(c) => (c, "diagnose"),
        Command::Simulate(c) => (c, "simulate"),
    };
    let mut cfg = Config::from_path(&common.config)?;
    if let Some(s) = common.seed {
        cfg.model.seed = s;
    }
    log::info!("{name}: {}", common.config.display());
    let mut out = Some(Output::create(&common.out)?);
    let path = common.config.as_path();
    match &cli.command {
        Command::Solve(_) => commands::solve(path, &cfg, &mut out),
        Command::Sweep { tau_list, .. } => {
            let taus = if tau_list.is_empty() { vec![cfg.model.tau] } else { tau_list.clone() };
            commands::sweep(path, &cfg, &taus, &mut out)
        }
        Command::Diagnose(_) => commands::diagnose(path, &cfg, &mut out),
        Command::Simulate(_) => commands::simulate_cmd(path, &cfg, &mut out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invariant) => {
            eprintln!("taumfg: invariant check failed; see the verdicts in the output directory");
            ExitCode::from(1)
        }
        Err(Failure::Solver(e)) => {
            eprintln!("taumfg: {e}");
            if let MfgError::NonConvergence { history, .. } = &e {
                if let Some(last) = history.last() {
                    eprintln!("taumfg: last recorded residual {last:e} ({} entries)", history.len());
                }
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
