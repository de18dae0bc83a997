use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use editshock_cli::pipeline::{cmd_all, cmd_changepoints, cmd_did, cmd_ingest, cmd_plot};
use editshock_cli::{Outcome, PipelineConfig, RunOptions};
use editshock_core::Variant;

/// Measure how a mobility shock changed editing activity across Wikipedia
/// language editions.
#[derive(Parser)]
#[command(name = "editshock", version)]
struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Comma-separated language codes to keep from the config.
    #[arg(long, global = true, value_delimiter = ',')]
    languages: Vec<String>,
    /// Run a single estimation variant (base, window14, cp-minus7, cp-plus7).
    #[arg(long, global = true)]
    variant: Option<Variant>,
    /// Ignore cached REST responses.
    #[arg(long, global = true)]
    refresh: bool,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Stream dumps into daily metrics.
    Ingest,
    /// Detect mobility and normality changepoints.
    Changepoints,
    /// Estimate rolling-window effects.
    Did,
    /// Draw activity and effect figures.
    Plot,
    /// Run every stage in order.
    All,
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let path = cli.config.context("--config is required")?;
    let mut cfg = PipelineConfig::load(&path)?;
    if !cli.languages.is_empty() {
        cfg.restrict_languages(&cli.languages)?;
    }
    if let Some(out) = cli.out {
        cfg.paths.output_dir = out;
    }
    let opts = RunOptions {
        variant: cli.variant,
        refresh: cli.refresh,
    };
    let outcome = match cli.command {
        Command::Ingest => cmd_ingest(&cfg, &opts)?,
        Command::Changepoints => cmd_changepoints(&cfg)?,
        Command::Did => cmd_did(&cfg, &opts)?,
        Command::Plot => cmd_plot(&cfg, &opts)?,
        Command::All => cmd_all(&cfg, &opts)?,
    };
    Ok(outcome)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // Usage errors are fatal input errors; clap's own code 2 means partial
    // failure here.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(outcome) => {
            for p in &outcome.partial {
                log::warn!("{p}");
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
