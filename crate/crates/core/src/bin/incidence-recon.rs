use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use incidence_recon::io::commands;
use incidence_recon::io::{BetaSetting, Overrides, RunConfig};
use incidence_recon::{Error, Result};

/// Disease incidence by age and year from binned mortality counts.
#[derive(Debug, Parser)]
#[command(name = "incidence-recon", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// A positive number or `lcurve`.
    #[arg(long)]
    beta: Option<String>,
    #[arg(long = "ensemble-size")]
    ensemble_size: Option<usize>,
    /// Output directory, replacing `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic data set to the configured input paths.
    Synth(Common),
    /// Calibrate the ensemble hazard against all-cause deaths.
    Calibrate(Common),
    /// Back-calculate incidence from a stored calibration.
    Backcalc {
        #[command(flatten)]
        common: Common,
        /// Directory written by `calibrate`.
        #[arg(long)]
        calibration: PathBuf,
    },
    /// Sweep the regularization weight and locate the L-curve corner.
    Lcurve(Common),
    /// Calibrate, back-calculate and report.
    Run(Common),
    /// Summarize a finished run and redraw its figures.
    Report {
        /// Directory written by `run` or `backcalc`.
        #[arg(long)]
        dir: PathBuf,
    },
}

fn load(c: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&c.config)?;
    let beta = c.beta.as_deref().map(BetaSetting::parse).transpose()?;
    cfg.apply(&Overrides {
        seed: c.seed,
        beta,
        ensemble_size: c.ensemble_size,
        out: c.out.clone(),
    })?;
    Ok(cfg)
}

fn dispatch(cmd: Command) -> Result<String> {
    match cmd {
        Command::Synth(c) => commands::synth(&load(&c)?),
        Command::Calibrate(c) => commands::calibrate_cmd(&load(&c)?),
        Command::Backcalc {
            common,
            calibration,
        } => commands::backcalc_cmd(&load(&common)?, &calibration),
        Command::Lcurve(c) => commands::lcurve_cmd(&load(&c)?),
        Command::Run(c) => commands::run_cmd(&load(&c)?),
        Command::Report { dir } => commands::report_cmd(&dir),
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(msg) => {
            // a closed pipe on stdout is not a failure of the command
            let _ = writeln!(std::io::stdout(), "{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
