//! `signoise`: simulate, estimate and verify signal-plus-noise models from a
//! TOML configuration.

mod commands;
mod config;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use signoise_core::Error;

use crate::commands::Context;
use crate::config::Method;

#[derive(Parser)]
#[command(name = "signoise", version, about = "Exact likelihood inference for signal-plus-noise diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `out` in the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw increment samples on the configured grid.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of replicate samples.
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Estimate θ from a sample CSV or a directory of them.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Sample CSV file or directory.
        #[arg(long)]
        input: PathBuf,
        /// Overrides `estimate.method`.
        #[arg(long, value_enum)]
        method: Option<Method>,
    },
    /// Run the configured Monte Carlo study; exit 0 iff every check passes.
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// Dump the information bundle at θ on the configured grid.
    Fisher {
        #[command(flatten)]
        common: Common,
    },
    /// Dump the configured sampling grid.
    Grid {
        #[command(flatten)]
        common: Common,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. }
        | Error::NoiseFloorViolation { .. }
        | Error::DimensionGuard { .. }
        | Error::Unsupported(_)
        | Error::Periodicity { .. }
        | Error::Grid(_) => 2,
        _ => 1,
    }
}

fn context(common: &Common) -> signoise_core::Result<Context> {
    if let Some(w) = common.workers {
        if w == 0 {
            return Err(Error::config("--workers", "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| Error::Invalid(format!("cannot start {w} workers: {e}")))?;
    }
    let loaded = config::load(&common.config)?;
    let seed = common.seed.unwrap_or(loaded.cfg.seed);
    let out = common
        .out
        .clone()
        .or_else(|| loaded.cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok(Context { loaded, seed, out })
}

fn run(cli: Cli) -> signoise_core::Result<bool> {
    match cli.command {
        Command::Simulate { common, count } => {
            let ctx = context(&common)?;
            for p in commands::simulate(&ctx, count)? {
                println!("{}", p.display());
            }
        }
        Command::Estimate { common, input, method } => {
            let ctx = context(&common)?;
            for p in commands::estimate(&ctx, &input, method)? {
                println!("{}", p.display());
            }
        }
        Command::Verify { common } => {
            let ctx = context(&common)?;
            let report = commands::verify(&ctx)?;
            for c in &report.checks {
                println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            println!("{}: {} of {} checks passed", report.study.name(), report.checks.iter().filter(|c| c.pass).count(), report.checks.len());
            return Ok(report.passed());
        }
        Command::Fisher { common } => println!("{}", commands::fisher(&context(&common)?)?.display()),
        Command::Grid { common } => println!("{}", commands::grid(&context(&common)?)?.display()),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
