#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qtraj::trajectory::Scheme;

use crate::config::{Overrides, RunConfig};
use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "qtraj", version, about = "Quantum trajectory simulation of Lindblad master equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a trajectory ensemble and write one CSV per observable.
    Simulate(Common),
    /// Integrate the master equation directly and write exact.csv.
    Exact(Common),
    /// Score an ensemble against exact values.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Directory holding an exact.csv; computed with the oracle if absent.
        #[arg(long)]
        exact_dir: Option<PathBuf>,
    },
    /// Standard error against trajectory count on nested samples.
    Convergence {
        #[command(flatten)]
        common: Common,
        /// Comma-separated trajectory counts, overriding convergence.n_grid.
        #[arg(long, value_delimiter = ',')]
        n_grid: Option<Vec<usize>>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
#[value(rename_all = "snake_case")]
enum SchemeArg {
    FirstOrder,
    JumpTime,
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    ntraj: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "QTRAJ_WORKERS")]
    workers: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let overrides = Overrides {
            n_traj: self.ntraj,
            base_seed: self.seed,
            workers: self.workers,
            output_dir: self.output_dir.clone(),
            scheme: self.scheme.map(|s| match s {
                SchemeArg::FirstOrder => Scheme::FirstOrder,
                SchemeArg::JumpTime => Scheme::JumpTime,
            }),
        };
        RunConfig::load(&self.config, &overrides)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate(common) => {
            commands::simulate(&common.load()?)?;
        }
        Command::Exact(common) => {
            commands::exact(&common.load()?)?;
        }
        Command::Compare { common, exact_dir } => {
            commands::compare(&common.load()?, exact_dir.as_deref())?;
        }
        Command::Convergence { common, n_grid } => {
            let rows = commands::convergence(&common.load()?, n_grid)?;
            for r in rows {
                let se = r.stderr.map(|s| format!("{s:.3e}")).unwrap_or_else(|| "-".into());
                let err = r.abs_error.map(|e| format!("{e:.3e}")).unwrap_or_else(|| "-".into());
                println!("N = {:>8}: mean {:.6}, stderr {se}, |error| {err}", r.n, r.mean.re);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
