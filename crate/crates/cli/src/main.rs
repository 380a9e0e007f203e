//! `advreg` command-line driver.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use config::{ExperimentConfig, Format};
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "advreg", version, about = "Adversarially robust nonparametric regression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment config; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Omit the timestamp header line and zero the wall-time column.
    #[arg(long, global = true)]
    no_timestamp: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Fit every configured estimator once and write per-cell coefficients.
    Fit,
    /// Estimate the risk at the first value of every sweep axis.
    Evaluate,
    /// Cross-product sweep over n, r, beta and q.
    Sweep,
    /// Fit the adaptive estimator and report its selected bandwidths.
    Adapt,
    /// Deviation functional, packing statistics and risks on a hard instance.
    DemoLowerBound,
    /// Print the effective configuration.
    DumpConfig,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output = Some(out.display().to_string());
    }
    if let Some(format) = cli.format {
        cfg.format = format;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load(cli)?;
    let mut buf: Vec<u8> = Vec::new();
    let ts = !cli.no_timestamp;
    match cli.command {
        Command::Fit => output::write_fit(&mut buf, &commands::fit(&cfg)?, cfg.format, ts)?,
        Command::Evaluate => output::write_rows(&mut buf, &commands::evaluate(&cfg, ts)?, cfg.format, ts)?,
        Command::Sweep => output::write_rows(&mut buf, &commands::sweep(&cfg, ts)?, cfg.format, ts)?,
        Command::Adapt => output::write_adapt(&mut buf, &commands::adapt(&cfg)?, cfg.format, ts)?,
        Command::DemoLowerBound => output::write_demo(&mut buf, &commands::demo_lower_bound(&cfg)?, cfg.format, ts)?,
        Command::DumpConfig => {
            serde_json::to_writer_pretty(&mut buf, &cfg)?;
            buf.push(b'\n');
        }
    }
    match &cfg.output {
        Some(path) => fs::write(path, &buf).map_err(|e| CliError::Io(format!("cannot write {path}: {e}")))?,
        None => std::io::stdout().write_all(&buf)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            error!("cannot configure {jobs} worker threads: {e}");
            return ExitCode::from(4);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
