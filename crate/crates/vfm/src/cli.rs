//! Argument parsing and dispatch for the `vfm` binary.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use vfm_core::model::ModelKind;

use crate::commands::{self, Context, WellSelection};
use crate::config::RunConfig;
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "vfm", version, about = "Mechanistic, hybrid and data-driven virtual flow meters")]
pub struct Cli {
    /// TOML run configuration; defaults apply without one.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Comma list of well numbers (1-based) or ids, or `all`.
    #[arg(long, global = true, default_value = "all")]
    pub wells: String,

    #[arg(long, global = true, value_enum, default_value = "all")]
    pub kind: KindArg,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output tree root; overrides the configured path.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    M,
    H,
    Dd,
    All,
}

impl KindArg {
    pub fn kinds(self) -> Vec<ModelKind> {
        match self {
            KindArg::M => vec![ModelKind::M],
            KindArg::H => vec![ModelKind::H],
            KindArg::Dd => vec![ModelKind::DD],
            KindArg::All => ModelKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate synthetic raw well files with ground truth.
    Synth,
    /// Steady-state compression, cleaning, fractions and split.
    Squash,
    /// Train models per well.
    Train,
    /// Test-split metrics and aggregate tables.
    Eval,
    /// Summarize an evaluated run.
    Report,
}

pub fn context(cli: &Cli) -> Result<Context> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.paths.out.clone())
        .unwrap_or_else(|| PathBuf::from("vfm-out"));
    Ok(Context::new(cfg, out, WellSelection::parse(&cli.wells)?, cli.kind.kinds()))
}

/// Run the selected command and return its console summary.
pub fn run(cli: &Cli) -> Result<String> {
    let ctx = context(cli)?;
    match cli.command {
        Command::Synth => commands::cmd_synth(&ctx),
        Command::Squash => commands::cmd_squash(&ctx),
        Command::Train => commands::cmd_train(&ctx),
        Command::Eval => commands::cmd_eval(&ctx),
        Command::Report => commands::cmd_report(&ctx),
    }
}
