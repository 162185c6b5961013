use serde::{Deserialize, Serialize};

use super::batch::{batch_logits, make_batch};
use crate::dataset::Chip;
use crate::error::{Error, Result};
use crate::grid::Mask;
use crate::numerics::{sigmoid_scalar, softplus, Graph};
use crate::unet::{ParameterSet, UNetConfig};

const EVAL_BATCH: usize = 16;

/// Intersection over union of two binary masks. Two empty masks score 1.0.
pub fn iou(pred: &Mask, target: &Mask) -> Result<f64> {
    if !pred.same_shape(target) {
        return Err(Error::Shape(format!(
            "prediction is {}x{}, target is {}x{}",
            pred.width(),
            pred.height(),
            target.width(),
            target.height()
        )));
    }
    Ok(iou_slices(pred.data(), target.data()))
}

pub(crate) fn iou_slices(pred: &[u8], target: &[u8]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &t) in pred.iter().zip(target) {
        let (p, t) = (p != 0, t != 0);
        inter += (p && t) as usize;
        union += (p || t) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Negative-to-positive pixel ratio over `chips`, clamped to `[1, 100]`.
pub fn auto_pos_weight(chips: &[Chip]) -> Result<f64> {
    let pos: usize = chips.iter().map(Chip::positive_pixels).sum();
    let total: usize = chips.iter().map(|c| c.mask.len()).sum();
    let neg = total - pos;
    if pos == 0 {
        return Err(Error::Empty("training split has no positive pixels".into()));
    }
    if neg == 0 {
        return Err(Error::Empty("training split has no negative pixels".into()));
    }
    Ok((neg as f64 / pos as f64).clamp(1.0, 100.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean of the per-chip weighted losses.
    pub loss: f64,
    pub mean_iou: f64,
    pub per_chip_iou: Vec<f64>,
    pub threshold: f64,
}

/// Per-chip weighted loss and IoU after binarizing `sigmoid(logit) >= threshold`.
pub fn evaluate(
    params: &ParameterSet<f32>,
    config: &UNetConfig,
    chips: &[Chip],
    threshold: f64,
    pos_weight: f64,
) -> Result<Metrics> {
    if chips.is_empty() {
        return Err(Error::Empty("no chips to evaluate".into()));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside (0, 1)")));
    }
    let mut losses = Vec::with_capacity(chips.len());
    let mut ious = Vec::with_capacity(chips.len());
    let refs: Vec<&Chip> = chips.iter().collect();
    for group in refs.chunks(EVAL_BATCH) {
        let batch = make_batch::<f32>(group, config)?;
        let mut g = Graph::new();
        let vars = params.bind(&mut g, false);
        let out = batch_logits(&mut g, &vars, config, &batch)?;
        let logits = g.value(out);
        let n = batch.size * batch.size;
        for (i, chip) in group.iter().enumerate() {
            let z = &logits[i * n..(i + 1) * n];
            let mut total = 0.0;
            let mut pred = Vec::with_capacity(n);
            for (&z, &m) in z.iter().zip(&chip.mask) {
                let z = z as f64;
                total += if m != 0 { pos_weight * softplus(-z) } else { softplus(z) };
                pred.push((sigmoid_scalar(z) >= threshold) as u8);
            }
            losses.push(total / n as f64);
            ious.push(iou_slices(&pred, &chip.mask));
        }
    }
    let k = chips.len() as f64;
    Ok(Metrics {
        loss: losses.iter().sum::<f64>() / k,
        mean_iou: ious.iter().sum::<f64>() / k,
        per_chip_iou: ious,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(w: usize, h: usize, ones: &[(usize, usize)]) -> Mask {
        let mut m = Mask::filled(w, h, 0);
        for &(r, c) in ones {
            m.set(r, c, 1);
        }
        m
    }

    #[test]
    fn iou_examples() {
        let a = mask(3, 1, &[(0, 0), (0, 1)]);
        let b = mask(3, 1, &[(0, 1), (0, 2)]);
        assert!((iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let c = mask(3, 1, &[(0, 2)]);
        assert_eq!(iou(&a, &c).unwrap(), 0.0);
        let e = mask(3, 1, &[]);
        assert_eq!(iou(&e, &e).unwrap(), 1.0);
        assert!(iou(&a, &mask(2, 1, &[])).is_err());
    }

    fn chip_with(pos: usize, total: usize) -> Chip {
        let mut mask = vec![0u8; total];
        mask[..pos].fill(1);
        Chip {
            samples: vec![0.0; total],
            band_names: vec!["R".into()],
            size: 0,
            mask,
            origin: (0, 0),
            transform: crate::geodata::GeoTransform::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            scene: String::new(),
        }
    }

    #[test]
    fn auto_pos_weight_ratio_and_clamp() {
        assert_eq!(auto_pos_weight(&[chip_with(50, 100)]).unwrap(), 1.0);
        assert_eq!(auto_pos_weight(&[chip_with(100, 10_000)]).unwrap(), 99.0);
        assert_eq!(auto_pos_weight(&[chip_with(100, 1_000_100)]).unwrap(), 100.0);
        assert_eq!(auto_pos_weight(&[chip_with(90, 100)]).unwrap(), 1.0);
        assert!(auto_pos_weight(&[chip_with(0, 100)]).is_err());
        assert!(auto_pos_weight(&[chip_with(100, 100)]).is_err());
    }
}
