//! Command-line pipeline: `simulate`, `train`, `calibrate`, `region` and
//! `coverage` stages sharing one TOML run config and one output directory.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::RunConfig;
pub use error::CliError;

pub const OUT_DIR_ENV: &str = "CCNF_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "ccnf", version, about = "Conformal prediction regions from conditional normalising flows")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate (or ingest) the dataset.
    Simulate,
    /// Fit the flow by maximum likelihood.
    Train,
    /// Score the calibration split.
    Calibrate,
    /// Build the prediction region for one test series.
    Region,
    /// Evaluate empirical coverage on the test split.
    Coverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Grid,
    Samples,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML run config; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Significance level for regions and coverage.
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    /// Grid cells per axis.
    #[arg(long, global = true)]
    pub cells: Option<usize>,
    /// Flow samples in sample mode.
    #[arg(long, global = true)]
    pub n_samples: Option<usize>,
    /// Test-split position of the series to build a region for.
    #[arg(long, global = true)]
    pub series: Option<usize>,
}

impl CommonArgs {
    /// Loads the config file (or defaults) and applies command-line overrides.
    pub fn resolve(&self) -> Result<(RunConfig, PathBuf), CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.epsilon {
            cfg.conformal.epsilons = vec![e];
            cfg.region.epsilon = e;
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(m) = self.mode {
            cfg.region.mode = match m {
                ModeArg::Grid => config::RegionModeConfig::Grid,
                ModeArg::Samples => config::RegionModeConfig::Samples,
            };
        }
        if let Some(c) = self.cells {
            cfg.region.cells = c;
        }
        if let Some(n) = self.n_samples {
            cfg.region.n_samples = n;
        }
        if let Some(s) = self.series {
            cfg.region.series = s;
        }
        cfg.validate()?;
        let out = self
            .out
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok((cfg, out))
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let (cfg, out) = cli.common.resolve()?;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg, &out),
        Command::Train => commands::train(&cfg, &out),
        Command::Calibrate => commands::calibrate(&cfg, &out),
        Command::Region => commands::region(&cfg, &out).map(|_| ()),
        Command::Coverage => commands::coverage(&cfg, &out).map(|_| ()),
    }
}
