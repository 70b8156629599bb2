//! `pseudopair`: unpaired RAW-to-RGB mapping pipeline.
//!
//! Exit codes: 0 success, 2 validation error, 1 runtime error.

mod config;
mod dataset;
mod pipeline;
mod preview;
mod report;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};
use pipeline::{Pipeline, Stage, ValidationError};
use report::RunLock;

#[derive(Debug, Parser)]
#[command(
    name = "pseudopair",
    version,
    about = "Unpaired RAW-to-RGB color mapping with OT pseudo-pairs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert RAW patches to pseudo-RGB.
    Preprocess(Overrides),
    /// Infer grid layouts and assemble full images.
    Stitch(Overrides),
    /// Image-level fused Gromov-Wasserstein matching.
    MatchImages(Overrides),
    /// Patch-level pseudo-pair graph (JSON lines).
    BuildPairs(Overrides),
    /// Train the color-mapping head.
    Train(Overrides),
    /// Apply the trained head to every source patch.
    Infer(Overrides),
    /// Score predictions against reference images.
    Eval(Overrides),
    /// Write (input | prediction) montages.
    Preview(Overrides),
    /// Run every stage, skipping those that are up to date.
    Run(Overrides),
}

impl Command {
    fn split(&self) -> (Option<Stage>, &Overrides) {
        match self {
            Command::Preprocess(o) => (Some(Stage::Preprocess), o),
            Command::Stitch(o) => (Some(Stage::Stitch), o),
            Command::MatchImages(o) => (Some(Stage::MatchImages), o),
            Command::BuildPairs(o) => (Some(Stage::BuildPairs), o),
            Command::Train(o) => (Some(Stage::Train), o),
            Command::Infer(o) => (Some(Stage::Infer), o),
            Command::Eval(o) => (Some(Stage::Eval), o),
            Command::Preview(o) => (Some(Stage::Preview), o),
            Command::Run(o) => (None, o),
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (stage, overrides) = cli.command.split();
    let cfg = RunConfig::load(overrides).map_err(|e| anyhow::Error::new(ValidationError(e)))?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()?;
    }
    let pipeline = Pipeline::new(cfg)?;
    let _lock = RunLock::acquire(pipeline.run_dir())?;
    pipeline.snapshot_config()?;
    let stages = match stage {
        Some(s) => vec![s],
        None => Stage::ALL.to_vec(),
    };
    for s in stages {
        pipeline.execute(s)?;
    }
    eprintln!("run directory: {}", pipeline.run_dir().display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<ValidationError>()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
