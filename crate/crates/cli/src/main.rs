//! `mrl-gp`: simulate, fit, remove faults from and separate artifacts in time series.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 inference
//! failure, 4 internal invariant violation.

mod commands;
mod config;
mod data;
mod error;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Command, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(name = "mrl-gp", version, about = "Piecewise-stationary Gaussian-process tools for time series")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic scenario (t,y,f_true,e_true).
    Simulate {
        #[command(flatten)]
        opts: Opts,
    },
    /// Marginalize kernel hyperparameters and report posterior samples.
    Fit {
        /// Input CSV with columns t,y.
        input: Option<PathBuf>,
        #[command(flatten)]
        opts: Opts,
    },
    /// Separate a real process from a sensor fault.
    Remove {
        /// Input CSV with columns t,y.
        input: Option<PathBuf>,
        #[command(flatten)]
        opts: Opts,
    },
    /// Split a signal from a windowed artifact.
    Separate {
        /// Input CSV with columns t,y.
        input: Option<PathBuf>,
        #[command(flatten)]
        opts: Opts,
    },
}

#[derive(Args)]
struct Opts {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write an SVG plot.
    #[arg(long)]
    plot: bool,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn resolve(cli: Cli) -> Result<RunConfig, CliError> {
    let (command, input, opts) = match cli.command {
        Cmd::Simulate { opts } => (Command::Simulate, None, opts),
        Cmd::Fit { input, opts } => (Command::Fit, input, opts),
        Cmd::Remove { input, opts } => (Command::Remove, input, opts),
        Cmd::Separate { input, opts } => (Command::Separate, input, opts),
    };
    let mut cfg = RunConfig::defaults(command);
    if let Some(path) = &opts.config {
        cfg.apply_file(path)?;
    }
    for s in &opts.set {
        cfg.apply_assignment(s)?;
    }
    if let Some(p) = input {
        cfg.set("input", &p.to_string_lossy(), "argument")?;
    }
    if let Some(seed) = opts.seed {
        cfg.set("seed", &seed.to_string(), "--seed")?;
    }
    if let Some(out) = opts.out {
        cfg.set("out", &out.to_string_lossy(), "--out")?;
    }
    if opts.plot {
        cfg.set("plot", "true", "--plot")?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match resolve(cli).and_then(|cfg| commands::run(&cfg)) {
        Ok(paths) => {
            for p in paths {
                eprintln!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("mrl-gp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
