use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{BandSpec, ChipParams, SynthConfig};
use crate::detect::{InferenceConfig, PostprocConfig};
use crate::error::{Error, Result};
use crate::training::Hyperparams;
use crate::unet::UNetConfig;
use crate::util;

/// File locations used by the subcommands. Relative paths resolve against
/// the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Written by `synth`; its `manifest.json` lists the scenes `chip` and `ablate` read
    /// when `scenes` is empty.
    pub scenes_dir: PathBuf,
    /// Explicit scene raster headers; each needs a sibling `.geojson` annotation file.
    pub scenes: Vec<PathBuf>,
    pub catalog_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub train_report: PathBuf,
    pub metrics: PathBuf,
    /// Raster fed to `predict`.
    pub predict_input: Option<PathBuf>,
    pub probability: PathBuf,
    pub detections: PathBuf,
    pub ablation_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        let w = Path::new("work");
        Paths {
            scenes_dir: w.join("scenes"),
            scenes: Vec::new(),
            catalog_dir: w.join("catalog"),
            checkpoint: w.join("model").join("ckpt.json"),
            train_report: w.join("model").join("report.json"),
            metrics: w.join("model").join("metrics.json"),
            predict_input: None,
            probability: w.join("predict").join("probability.json"),
            detections: w.join("predict").join("detections.geojson"),
            ablation_dir: w.join("ablation"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitParams {
    pub test_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SplitParams {
    fn default() -> Self {
        SplitParams {
            test_fraction: 0.1,
            val_fraction: 0.2,
        }
    }
}

/// Everything a run needs. Omitted fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random substream; `train.seed` is replaced by this value.
    pub seed: u64,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub scene_count: usize,
    pub bands: BandSpec,
    pub chip: ChipParams,
    pub split: SplitParams,
    /// `model.in_channels` follows the length of `bands`.
    pub model: UNetConfig,
    pub train: Hyperparams,
    pub inference: InferenceConfig,
    pub postprocess: PostprocConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            paths: Paths::default(),
            synth: SynthConfig::default(),
            scene_count: 1,
            bands: BandSpec::default(),
            chip: ChipParams::default(),
            split: SplitParams::default(),
            model: UNetConfig::default(),
            train: Hyperparams::default(),
            inference: InferenceConfig::default(),
            postprocess: PostprocConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = util::read_bytes(path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))
    }

    /// Makes derived fields consistent with their sources.
    pub fn resolve(&mut self) {
        self.train.seed = self.seed;
        if self.model.in_channels != self.bands.len() {
            log::debug!("model.in_channels set to {} to match bands", self.bands.len());
            self.model.in_channels = self.bands.len();
        }
    }

    /// Checks every section against its module's rules.
    pub fn validate(&self) -> Result<()> {
        if self.bands.is_empty() {
            return Err(Error::config("bands", "must list at least one band"));
        }
        self.synth.validate()?;
        if self.scene_count == 0 {
            return Err(Error::config("scene_count", "must be >= 1"));
        }
        self.chip.validate()?;
        let s = self.split;
        if !(s.test_fraction >= 0.0 && s.val_fraction >= 0.0 && s.test_fraction + s.val_fraction < 1.0) {
            return Err(Error::config(
                "split",
                "test_fraction and val_fraction must be >= 0 with a sum below 1",
            ));
        }
        self.model.validate()?;
        self.train.validate()?;
        self.inference.validate(&self.model)?;
        self.postprocess.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_keeps_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"seed": 7, "train": {"max_epochs": 3}}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.max_epochs, 3);
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.model.depth, 4);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sede": 1}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"train": {"epochs": 1}}"#).is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let mut cfg = RunConfig::default();
        cfg.synth.dump_count = -1;
        assert!(cfg.validate().unwrap_err().to_string().contains("synth.dump_count"));
        let mut cfg = RunConfig::default();
        cfg.postprocess.min_area = -5.0;
        assert!(cfg.validate().unwrap_err().to_string().contains("postprocess.min_area"));
        let mut cfg = RunConfig::default();
        cfg.inference.tile_size = 100;
        assert!(cfg.validate().unwrap_err().to_string().contains("inference.tile_size"));
    }

    #[test]
    fn resolve_tracks_band_count() {
        let mut cfg = RunConfig {
            bands: BandSpec::parse("R,G,B").unwrap(),
            seed: 9,
            ..RunConfig::default()
        };
        cfg.resolve();
        assert_eq!(cfg.model.in_channels, 3);
        assert_eq!(cfg.train.seed, 9);
    }
}
