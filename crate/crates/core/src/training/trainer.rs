use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::batch::{batch_logits, make_batch};
use super::metrics::{auto_pos_weight, evaluate, Metrics};
use crate::dataset::{Chip, DatasetSplit};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, AdamConfig, AdamState, Graph, Scalar};
use crate::rng;
use crate::unet::{ParameterSet, UNetConfig};

/// Threshold used to binarize validation predictions.
pub const VAL_THRESHOLD: f64 = 0.5;

/// Positive-class weight: a fixed value or the train-split pixel ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PosWeightRepr", into = "PosWeightRepr")]
pub enum PosWeight {
    Auto,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PosWeightRepr {
    Number(f64),
    Text(String),
}

impl TryFrom<PosWeightRepr> for PosWeight {
    type Error = String;

    fn try_from(r: PosWeightRepr) -> std::result::Result<Self, String> {
        match r {
            PosWeightRepr::Number(v) => Ok(PosWeight::Fixed(v)),
            PosWeightRepr::Text(s) if s == "auto" => Ok(PosWeight::Auto),
            PosWeightRepr::Text(s) => Err(format!("expected a number or \"auto\", got {s:?}")),
        }
    }
}

impl From<PosWeight> for PosWeightRepr {
    fn from(p: PosWeight) -> Self {
        match p {
            PosWeight::Auto => PosWeightRepr::Text("auto".into()),
            PosWeight::Fixed(v) => PosWeightRepr::Number(v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub pos_weight: PosWeight,
    pub plateau_patience: usize,
    pub plateau_min_delta: f64,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            batch_size: 16,
            max_epochs: 30,
            learning_rate: 1e-3,
            pos_weight: PosWeight::Auto,
            plateau_patience: 5,
            plateau_min_delta: 1e-4,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be >= 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("train.max_epochs", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be a positive number"));
        }
        if let PosWeight::Fixed(w) = self.pos_weight {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::config(
                    "train.pos_weight",
                    "must be \"auto\" or a positive number",
                ));
            }
        }
        if self.plateau_patience == 0 {
            return Err(Error::config("train.plateau_patience", "must be >= 1"));
        }
        if !(self.plateau_min_delta >= 0.0) {
            return Err(Error::config("train.plateau_min_delta", "must be >= 0"));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

/// Counts epochs without a `min_delta` improvement of the monitored loss.
#[derive(Debug, Clone)]
pub struct PlateauTracker {
    patience: usize,
    min_delta: f64,
    best: f64,
    stale: usize,
}

impl PlateauTracker {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        PlateauTracker {
            patience,
            min_delta,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Records one epoch's loss; returns true once training should stop.
    pub fn update(&mut self, loss: f64) -> bool {
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        self.stale >= self.patience
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mean_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Last completed epoch (1-based).
    pub stopping_epoch: usize,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub pos_weight: f64,
    pub test: Option<Metrics>,
    pub wall_time_secs: f64,
}

impl TrainReport {
    /// Copy with timing zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> TrainReport {
        TrainReport {
            wall_time_secs: 0.0,
            ..self.clone()
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:>5}  {:>10}  {:>10}  {:>8}\n",
            "epoch", "train_loss", "val_loss", "val_iou"
        );
        for e in &self.epochs {
            let mark = if e.epoch == self.best_epoch { " *" } else { "" };
            out.push_str(&format!(
                "{:>5}  {:>10.5}  {:>10.5}  {:>8.4}{mark}\n",
                e.epoch, e.train_loss, e.val_loss, e.val_mean_iou
            ));
        }
        if let Some(t) = &self.test {
            out.push_str(&format!("test loss {:.5}  mean IoU {:.4}\n", t.loss, t.mean_iou));
        }
        out
    }
}

/// One optimizer step on `chips`; returns the batch loss before the update.
pub fn train_step<T: Scalar>(
    params: &mut ParameterSet<T>,
    adam: &mut AdamState<T>,
    config: &UNetConfig,
    chips: &[&Chip],
    pos_weight: f64,
) -> Result<f64> {
    let batch = make_batch::<T>(chips, config)?;
    let mut g = Graph::new();
    let vars = params.bind(&mut g, true);
    let logits = batch_logits(&mut g, &vars, config, &batch)?;
    let loss = g.weighted_bce_with_logits(logits, &batch.target, T::from_f64_lossy(pos_weight))?;
    let value = g.value(loss)[0].to_f64().unwrap_or(f64::NAN);
    if !value.is_finite() {
        return Ok(value);
    }
    g.backward(loss)?;
    params.pull_grads(&g, &vars);
    adam_step(params.tensors_mut(), adam)?;
    params.clear_grads();
    Ok(value)
}

/// Mini-batch Adam with per-epoch validation and plateau stopping.
///
/// Returns the parameters of the epoch with the lowest validation loss.
/// When the validation split is empty the training chips stand in for it.
pub fn train(
    params: ParameterSet<f32>,
    config: &UNetConfig,
    split: &DatasetSplit,
    hyper: &Hyperparams,
) -> Result<(ParameterSet<f32>, TrainReport)> {
    hyper.validate()?;
    config.validate()?;
    params.check_schema(config)?;
    if split.train.is_empty() {
        return Err(Error::Empty("training split is empty".into()));
    }
    let start = Instant::now();
    let pos_weight = match hyper.pos_weight {
        PosWeight::Fixed(w) => w,
        PosWeight::Auto => auto_pos_weight(&split.train)?,
    };
    let val: &[Chip] = if split.val.is_empty() { &split.train } else { &split.val };
    let mut params = params;
    let mut adam = AdamState::new(hyper.adam(), params.tensors());
    let mut tracker = PlateauTracker::new(hyper.plateau_patience, hyper.plateau_min_delta);
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..split.train.len()).collect();

    for epoch in 1..=hyper.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::substream(hyper.seed, rng::SHUFFLE, epoch as u64));
        let (mut sum, mut count) = (0.0, 0usize);
        for idx in order.chunks(hyper.batch_size) {
            let chips: Vec<&Chip> = idx.iter().map(|&i| &split.train[i]).collect();
            let loss = train_step(&mut params, &mut adam, config, &chips, pos_weight)?;
            if loss.is_nan() {
                return Err(Error::Diverged { epoch });
            }
            sum += loss * chips.len() as f64;
            count += chips.len();
        }
        let train_loss = sum / count as f64;
        let m = evaluate(&params, config, val, VAL_THRESHOLD, pos_weight)?;
        if m.loss.is_nan() {
            return Err(Error::Diverged { epoch });
        }
        info!(
            "epoch {epoch}: train loss {train_loss:.5}, val loss {:.5}, val IoU {:.4}",
            m.loss, m.mean_iou
        );
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss: m.loss,
            val_mean_iou: m.mean_iou,
        });
        if m.loss < best.0 {
            best = (m.loss, epoch, params.clone());
        }
        if tracker.update(m.loss) {
            info!("validation loss plateaued; stopping after epoch {epoch}");
            break;
        }
    }

    let (_, best_epoch, best_params) = best;
    let test = if split.test.is_empty() {
        None
    } else {
        Some(evaluate(&best_params, config, &split.test, VAL_THRESHOLD, pos_weight)?)
    };
    let report = TrainReport {
        stopping_epoch: epochs.len(),
        best_epoch,
        epochs,
        pos_weight,
        test,
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok((best_params, report))
}
