use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Chip;
use crate::error::{Error, Result};
use crate::util;

/// Per-band standardization fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub band_names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.band_names.len() || self.std.len() != self.band_names.len() {
            return Err(Error::SchemaMismatch(format!(
                "{} bands but {} means and {} stds",
                self.band_names.len(),
                self.mean.len(),
                self.std.len()
            )));
        }
        if let Some(band) = self.std.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::ConstantBand { band });
        }
        Ok(())
    }

    /// Standardizes band-major samples in place; NaN stays NaN.
    pub fn apply_in_place(&self, samples: &mut [f32], pixels: usize) {
        for (b, chunk) in samples.chunks_mut(pixels).enumerate() {
            let (m, s) = (self.mean[b], self.std[b]);
            for v in chunk {
                *v = ((*v as f64 - m) / s) as f32;
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        util::write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let stats: NormalizationStats = serde_json::from_slice(&util::read_bytes(path)?)?;
        stats.validate()?;
        Ok(stats)
    }
}

/// Mean and population standard deviation per band over every training pixel.
pub fn fit_normalization(train: &[Chip]) -> Result<NormalizationStats> {
    let first = train
        .first()
        .ok_or_else(|| Error::Empty("normalization needs at least one training chip".into()))?;
    let bands = first.band_count();
    let mut sum = vec![0f64; bands];
    let mut count = vec![0u64; bands];
    for chip in train {
        if chip.band_names != first.band_names {
            return Err(Error::SchemaMismatch("training chips disagree on band names".into()));
        }
        for b in 0..bands {
            for &v in chip.band(b) {
                if v.is_nan() {
                    continue;
                }
                let v = v as f64;
                sum[b] += v;
                count[b] += 1;
            }
        }
    }
    let mut mean = Vec::with_capacity(bands);
    let mut std = Vec::with_capacity(bands);
    for b in 0..bands {
        if count[b] == 0 {
            return Err(Error::ConstantBand { band: b });
        }
        let n = count[b] as f64;
        let m = sum[b] / n;
        // second pass for a numerically clean variance
        let mut ss = 0f64;
        for chip in train {
            for &v in chip.band(b) {
                if !v.is_nan() {
                    let d = v as f64 - m;
                    ss += d * d;
                }
            }
        }
        let s = (ss / n).sqrt();
        if !(s > 0.0) {
            return Err(Error::ConstantBand { band: b });
        }
        mean.push(m);
        std.push(s);
    }
    Ok(NormalizationStats {
        band_names: first.band_names.clone(),
        mean,
        std,
    })
}

pub fn apply_normalization(chip: &Chip, stats: &NormalizationStats) -> Result<Chip> {
    if chip.band_names != stats.band_names {
        return Err(Error::SchemaMismatch(format!(
            "chip bands {:?} vs normalization bands {:?}",
            chip.band_names, stats.band_names
        )));
    }
    let mut out = chip.clone();
    stats.apply_in_place(&mut out.samples, chip.pixels());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::GeoTransform;

    fn chip(values: Vec<f32>) -> Chip {
        let size = (values.len() as f64).sqrt() as usize;
        Chip {
            mask: vec![0; size * size],
            samples: values,
            band_names: vec!["R".into()],
            size,
            origin: (0, 0),
            transform: GeoTransform::new(0.0, 0.0, 10.0, 10.0).unwrap(),
            scene: "s".into(),
        }
    }

    #[test]
    fn constant_band_is_rejected() {
        let err = fit_normalization(&[chip(vec![5.0; 4])]).unwrap_err();
        assert!(matches!(err, Error::ConstantBand { band: 0 }));
        assert!(fit_normalization(&[]).is_err());
    }

    #[test]
    fn two_valued_band() {
        let c = chip(vec![0.0, 2.0, 2.0, 0.0]);
        let stats = fit_normalization(std::slice::from_ref(&c)).unwrap();
        assert_eq!(stats.mean, vec![1.0]);
        assert_eq!(stats.std, vec![1.0]);
        let applied = apply_normalization(&c, &stats).unwrap();
        assert_eq!(applied.samples, vec![-1.0, 1.0, 1.0, -1.0]);
    }

    #[test]
    fn refit_after_apply_is_standard() {
        let chips: Vec<Chip> = (0..5)
            .map(|k| chip((0..16).map(|i| ((i * 7 + k * 3) % 11) as f32 * 0.37 + 4.0).collect()))
            .collect();
        let stats = fit_normalization(&chips).unwrap();
        let applied: Vec<Chip> = chips.iter().map(|c| apply_normalization(c, &stats).unwrap()).collect();
        let again = fit_normalization(&applied).unwrap();
        assert!(again.mean[0].abs() < 1e-6);
        assert!((again.std[0] - 1.0).abs() < 1e-6);
    }
}
