use serde::{Deserialize, Serialize};

use crate::dataset::{stack_bands, BandSpec, NormalizationStats};
use crate::error::{Error, Result};
use crate::geodata::Raster;
use crate::grid::Mask;
use crate::numerics::{sigmoid_scalar, Tensor};
use crate::unet::{predict_logits, ParameterSet, UNetConfig};
use crate::util::reflect_index;

pub const PROBABILITY_BAND: &str = "probability";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub tile_size: usize,
    pub overlap: usize,
    /// Tiles per forward pass.
    pub batch_size: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            tile_size: 256,
            overlap: 32,
            batch_size: 4,
        }
    }
}

impl InferenceConfig {
    /// Checks the tiling against a model; the tile step must keep every tile
    /// aligned with the model's pooling grid.
    pub fn validate(&self, model: &UNetConfig) -> Result<()> {
        let m = model.size_multiple();
        if self.tile_size == 0 || !self.tile_size.is_multiple_of(m) {
            return Err(Error::config(
                "inference.tile_size",
                format!("{} is not a positive multiple of {m}", self.tile_size),
            ));
        }
        if 2 * self.overlap >= self.tile_size {
            return Err(Error::config(
                "inference.overlap",
                "must be less than half the tile size",
            ));
        }
        if !(self.tile_size - self.overlap).is_multiple_of(m) {
            return Err(Error::config(
                "inference.overlap",
                format!("tile_size - overlap must be a multiple of {m}"),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::config("inference.batch_size", "must be >= 1"));
        }
        Ok(())
    }

    fn step(&self) -> usize {
        self.tile_size - self.overlap
    }
}

/// Tile start offsets along one axis; the last tile may extend past `extent`.
fn tile_starts(extent: usize, tile: usize, step: usize) -> Vec<usize> {
    let n = if extent <= tile {
        1
    } else {
        (extent - tile).div_ceil(step) + 1
    };
    (0..n).map(|i| i * step).collect()
}

/// Brings `raster` to the band order in `stats`, deriving NDSW if needed.
fn model_bands(raster: &Raster, stats: &NormalizationStats) -> Result<Raster> {
    if raster.band_names() == stats.band_names.as_slice() {
        return Ok(raster.clone());
    }
    let spec = BandSpec::parse(&stats.band_names.join(","))?;
    stack_bands(raster, &spec).map_err(|e| {
        Error::SchemaMismatch(format!(
            "band mismatch: model needs {:?}, raster has {:?} ({e})",
            stats.band_names,
            raster.band_names()
        ))
    })
}

/// Per-pixel dump probability over a raster of any size.
///
/// Tiles of `tile_size` are laid on a lattice with step `tile_size - overlap`;
/// the raster is mirrored past its right and bottom edges to fill the last
/// row and column of tiles. Overlapping tile outputs are averaged. Pixels
/// with nodata in any input band come out as NaN.
pub fn predict_raster(
    params: &ParameterSet<f32>,
    config: &UNetConfig,
    raster: &Raster,
    stats: &NormalizationStats,
    icfg: &InferenceConfig,
) -> Result<Raster> {
    icfg.validate(config)?;
    stats.validate()?;
    if stats.band_names.len() != config.in_channels {
        return Err(Error::SchemaMismatch(format!(
            "{} normalization bands for a {}-channel model",
            stats.band_names.len(),
            config.in_channels
        )));
    }
    let src = model_bands(raster, stats)?;
    let (w, h, c) = (src.width(), src.height(), src.band_count());
    let n = w * h;

    let mut nodata = vec![false; n];
    for b in 0..c {
        for (flag, &v) in nodata.iter_mut().zip(src.band(b)) {
            *flag |= src.is_nodata(v);
        }
    }
    let mut input = src.into_samples();
    for b in 0..c {
        let (mean, std) = (stats.mean[b], stats.std[b]);
        for (i, v) in input[b * n..(b + 1) * n].iter_mut().enumerate() {
            *v = if nodata[i] {
                0.0
            } else {
                ((*v as f64 - mean) / std) as f32
            };
        }
    }

    let tile = icfg.tile_size;
    let xs = tile_starts(w, tile, icfg.step());
    let ys = tile_starts(h, tile, icfg.step());
    let tiles: Vec<(usize, usize)> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| (y, x))).collect();
    let mut sum = vec![0.0f64; n];
    let mut count = vec![0u32; n];
    let tt = tile * tile;
    for group in tiles.chunks(icfg.batch_size) {
        let mut data = Vec::with_capacity(group.len() * c * tt);
        for &(y0, x0) in group {
            let cols: Vec<usize> = (0..tile).map(|j| reflect_index((x0 + j) as isize, w)).collect();
            for b in 0..c {
                let plane = &input[b * n..(b + 1) * n];
                for i in 0..tile {
                    let row = reflect_index((y0 + i) as isize, h) * w;
                    data.extend(cols.iter().map(|&col| plane[row + col]));
                }
            }
        }
        let batch = Tensor::new(vec![group.len(), c, tile, tile], data)?;
        let logits = predict_logits(params, config, batch)?;
        for (t, &(y0, x0)) in group.iter().enumerate() {
            let out = &logits[t * tt..(t + 1) * tt];
            for i in 0..tile.min(h.saturating_sub(y0)) {
                for j in 0..tile.min(w.saturating_sub(x0)) {
                    let p = (y0 + i) * w + x0 + j;
                    sum[p] += sigmoid_scalar(out[i * tile + j] as f64);
                    count[p] += 1;
                }
            }
        }
    }
    let prob: Vec<f32> = (0..n)
        .map(|p| {
            if nodata[p] {
                f32::NAN
            } else {
                ((sum[p] / count[p] as f64) as f32).clamp(f32::MIN_POSITIVE, 1.0 - f32::EPSILON / 2.0)
            }
        })
        .collect();
    Raster::new(
        w,
        h,
        vec![PROBABILITY_BAND.into()],
        prob,
        raster.transform,
        Some(f32::NAN),
    )
}

/// `1` where probability `>= t`, `0` elsewhere and on nodata.
pub fn threshold_probability(prob: &Raster, t: f64) -> Result<Mask> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {t} outside (0, 1)")));
    }
    let data = prob
        .band(0)
        .iter()
        .map(|&v| (!prob.is_nodata(v) && v as f64 >= t) as u8)
        .collect();
    Mask::from_vec(prob.width(), prob.height(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::GeoTransform;

    #[test]
    fn tile_lattice_covers_extent() {
        assert_eq!(tile_starts(256, 256, 224), vec![0]);
        assert_eq!(tile_starts(100, 256, 224), vec![0]);
        assert_eq!(tile_starts(257, 256, 224), vec![0, 224]);
        assert_eq!(tile_starts(480, 256, 224), vec![0, 224]);
        assert_eq!(tile_starts(481, 256, 224), vec![0, 224, 448]);
    }

    #[test]
    fn tiling_validation() {
        let m = UNetConfig::default();
        assert!(InferenceConfig::default().validate(&m).is_ok());
        let bad = |tile_size, overlap| InferenceConfig {
            tile_size,
            overlap,
            batch_size: 1,
        };
        assert!(bad(100, 0).validate(&m).is_err());
        assert!(bad(64, 32).validate(&m).is_err());
        assert!(bad(64, 8).validate(&m).is_err());
        assert!(bad(64, 16).validate(&m).is_ok());
    }

    #[test]
    fn threshold_rule() {
        let t = GeoTransform::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let p = Raster::new(4, 1, vec!["p".into()], vec![0.4, 0.5, 0.7, f32::NAN], t, None).unwrap();
        assert_eq!(threshold_probability(&p, 0.5).unwrap().data(), &[0, 1, 1, 0]);
        let flat = Raster::new(2, 1, vec!["p".into()], vec![0.4, 0.4], t, None).unwrap();
        assert_eq!(threshold_probability(&flat, 0.5).unwrap().count_ones(), 0);
        assert!(threshold_probability(&p, 1.0).is_err());
    }
}
