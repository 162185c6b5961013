//! Command-line front end.
//!
//! Each subcommand reads a [`RunConfig`] (JSON file via `--config`, else
//! defaults), applies flag overrides, validates, does its work, logs to
//! stderr and returns a JSON summary that `main` prints to stdout.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    cmd_ablate, cmd_chip, cmd_evaluate, cmd_postprocess, cmd_predict, cmd_synth, cmd_train, SynthManifest,
    SYNTH_MANIFEST,
};
pub use config::{Paths, RunConfig, SplitParams};

use crate::dataset::{BandSpec, SplitName};
use crate::error::{Error, Result};

/// Environment variable capping the worker thread count (1 = single-threaded).
pub const THREADS_ENV: &str = "DUMPWATCH_THREADS";

#[derive(Debug, Parser)]
#[command(name = "dumpwatch", version, about = "Waste dump detection in multispectral rasters")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Global seed for every random substream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Probability threshold for binarizing predictions.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// Minimum detection area in squared world units.
    #[arg(long = "min-area", global = true)]
    pub min_area: Option<f64>,
    /// Comma-separated band list, e.g. R,G,B,NIR,SWIR1,NDSW.
    #[arg(long, global = true, value_name = "LIST")]
    pub bands: Option<String>,
    /// Primary output of the subcommand (directory or file).
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes and their dump annotations.
    Synth,
    /// Cut annotated scenes into a split chip catalog.
    Chip,
    /// Train a model on the chip catalog.
    Train,
    /// Score a checkpoint on one split of the catalog.
    Evaluate {
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Write a probability raster for a scene.
    Predict {
        /// Scene raster header (overrides paths.predict_input).
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
    /// Threshold, polygonize and filter a probability raster.
    Postprocess {
        /// Probability raster header (overrides paths.probability).
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
    /// Train and score one model per standard band set.
    Ablate,
}

/// Loads the config and applies flag overrides (flags > config > defaults).
pub fn resolve_config(global: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(t) = global.threshold {
        cfg.postprocess.probability_threshold = t;
    }
    if let Some(a) = global.min_area {
        cfg.postprocess.min_area = a;
    }
    if let Some(b) = &global.bands {
        cfg.bands = BandSpec::parse(b)?;
    }
    cfg.resolve();
    cfg.validate()?;
    Ok(cfg)
}

fn parse_split(name: &str) -> Result<SplitName> {
    match name {
        "train" => Ok(SplitName::Train),
        "val" => Ok(SplitName::Val),
        "test" => Ok(SplitName::Test),
        other => Err(Error::InvalidArgument(format!(
            "unknown split {other:?}; use train, val or test"
        ))),
    }
}

/// Sizes the global worker pool from [`THREADS_ENV`], if set.
pub fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::config(THREADS_ENV, format!("expected a positive integer, got {value:?}")))?;
    // A pool may already exist when called twice in one process; keep it.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs one parsed command line and returns its JSON summary.
pub fn execute(cli: &Cli) -> Result<serde_json::Value> {
    let mut cfg = resolve_config(&cli.global)?;
    let out = cli.global.out.clone();
    match &cli.command {
        Command::Synth => {
            if let Some(o) = out {
                cfg.paths.scenes_dir = o;
            }
            cmd_synth(&cfg)
        }
        Command::Chip => {
            if let Some(o) = out {
                cfg.paths.catalog_dir = o;
            }
            cmd_chip(&cfg)
        }
        Command::Train => {
            if let Some(o) = out {
                cfg.paths.checkpoint = o;
            }
            cmd_train(&cfg)
        }
        Command::Evaluate { split } => {
            if let Some(o) = out {
                cfg.paths.metrics = o;
            }
            let threshold = cli.global.threshold.unwrap_or(crate::training::VAL_THRESHOLD);
            cmd_evaluate(&cfg, parse_split(split)?, threshold)
        }
        Command::Predict { input } => {
            if let Some(i) = input {
                cfg.paths.predict_input = Some(i.clone());
            }
            if let Some(o) = out {
                cfg.paths.probability = o;
            }
            cmd_predict(&cfg)
        }
        Command::Postprocess { input } => {
            if let Some(i) = input {
                cfg.paths.probability = i.clone();
            }
            if let Some(o) = out {
                cfg.paths.detections = o;
            }
            cmd_postprocess(&cfg)
        }
        Command::Ablate => {
            if let Some(o) = out {
                cfg.paths.ablation_dir = o;
            }
            cmd_ablate(&cfg)
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, S>(args: I) -> Result<serde_json::Value>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    execute(&cli)
}
