use log::info;
use serde::{Deserialize, Serialize};

use super::metrics::evaluate;
use super::trainer::{train, Hyperparams, TrainReport, VAL_THRESHOLD};
use crate::dataset::{apply_normalization, fit_normalization, stack_chip, BandSpec, Chip, DatasetSplit};
use crate::error::{Error, Result};
use crate::unet::{build_unet, UNetConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub loss: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    /// Split the loss and IoU columns were measured on.
    pub evaluated_on: String,
    pub seed: u64,
}

impl AblationTable {
    pub fn to_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .max()
            .unwrap_or(0)
            .max("bands".len());
        let mut out = format!("{:<width$}  {:>8}  {:>8}\n", "bands", "loss", "iou");
        for r in &self.rows {
            out.push_str(&format!("{:<width$}  {:>8.4}  {:>8.4}\n", r.label, r.loss, r.iou));
        }
        out
    }
}

fn restack(chips: &[Chip], spec: &BandSpec) -> Result<Vec<Chip>> {
    chips.iter().map(|c| stack_chip(c, spec)).collect()
}

fn normalize_all(chips: Vec<Chip>, stats: &crate::dataset::NormalizationStats) -> Result<Vec<Chip>> {
    chips.iter().map(|c| apply_normalization(c, stats)).collect()
}

/// Trains one model per band spec on the same split, seed and hyperparameters.
///
/// `split` must hold chips with the raw source bands each spec draws on.
/// Rows come back in `specs` order, scored on the test split (validation if
/// the test split is empty).
pub fn ablate(
    split: &DatasetSplit,
    specs: &[BandSpec],
    model: &UNetConfig,
    hyper: &Hyperparams,
) -> Result<(AblationTable, Vec<TrainReport>)> {
    let first = split
        .train
        .first()
        .ok_or_else(|| Error::Empty("training split is empty".into()))?;
    for spec in specs {
        spec.validate_for(&first.band_names)?;
    }
    let (eval_chips, evaluated_on) = if !split.test.is_empty() {
        (&split.test, "test")
    } else if !split.val.is_empty() {
        (&split.val, "val")
    } else {
        (&split.train, "train")
    };
    let mut rows = Vec::with_capacity(specs.len());
    let mut reports = Vec::with_capacity(specs.len());
    for spec in specs {
        let label = spec.label();
        info!("ablation: training {label}");
        let train_raw = restack(&split.train, spec)?;
        let stats = fit_normalization(&train_raw)?;
        let stacked = DatasetSplit {
            train: normalize_all(train_raw, &stats)?,
            val: normalize_all(restack(&split.val, spec)?, &stats)?,
            test: normalize_all(restack(&split.test, spec)?, &stats)?,
            seed: split.seed,
        };
        let config = UNetConfig {
            in_channels: spec.len(),
            ..*model
        };
        let params = build_unet(&config, hyper.seed)?;
        let (params, report) = train(params, &config, &stacked, hyper)?;
        let eval = normalize_all(restack(eval_chips, spec)?, &stats)?;
        let m = evaluate(&params, &config, &eval, VAL_THRESHOLD, report.pos_weight)?;
        rows.push(AblationRow {
            label,
            loss: m.loss,
            iou: m.mean_iou,
        });
        reports.push(report);
    }
    Ok((
        AblationTable {
            rows,
            evaluated_on: evaluated_on.into(),
            seed: hyper.seed,
        },
        reports,
    ))
}
