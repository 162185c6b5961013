use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{GeoTransform, Raster};
use crate::grid::Mask;
use crate::rng;

/// One square training window and its target mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Chip {
    /// `(band, row, col)` samples, band-major.
    pub samples: Vec<f32>,
    pub band_names: Vec<String>,
    pub size: usize,
    /// Row-major, values in {0, 1}.
    pub mask: Vec<u8>,
    /// `(col, row)` of the top-left cell in the source raster.
    pub origin: (i64, i64),
    pub transform: GeoTransform,
    pub scene: String,
}

impl Chip {
    pub fn band_count(&self) -> usize {
        self.band_names.len()
    }

    pub fn pixels(&self) -> usize {
        self.size * self.size
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let n = self.pixels();
        &self.samples[b * n..(b + 1) * n]
    }

    pub fn positive_pixels(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0).count()
    }

    pub fn is_positive(&self) -> bool {
        self.mask.iter().any(|&m| m != 0)
    }

    pub fn to_raster(&self) -> Result<Raster> {
        Raster::new(
            self.size,
            self.size,
            self.band_names.clone(),
            self.samples.clone(),
            self.transform,
            Some(f32::NAN),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChipParams {
    pub chip_size: usize,
    pub stride: usize,
    pub negatives_per_positive: f64,
}

impl Default for ChipParams {
    fn default() -> Self {
        ChipParams {
            chip_size: 100,
            stride: 50,
            negatives_per_positive: 1.0,
        }
    }
}

impl ChipParams {
    pub fn validate(&self) -> Result<()> {
        if self.chip_size == 0 {
            return Err(Error::config("chip_size", "must be >= 1"));
        }
        if self.stride == 0 {
            return Err(Error::config("stride", "must be >= 1"));
        }
        if !(self.negatives_per_positive >= 0.0) || !self.negatives_per_positive.is_finite() {
            return Err(Error::config("negatives_per_positive", "must be a finite value >= 0"));
        }
        Ok(())
    }
}

/// Summed-area table over a mask for O(1) window counts.
struct Integral {
    width: usize,
    sums: Vec<u64>,
}

impl Integral {
    fn new(mask: &Mask) -> Self {
        let (w, h) = (mask.width(), mask.height());
        let mut sums = vec![0u64; (w + 1) * (h + 1)];
        for r in 0..h {
            let mut row_sum = 0u64;
            for c in 0..w {
                row_sum += (mask.get(r, c) != 0) as u64;
                sums[(r + 1) * (w + 1) + c + 1] = sums[r * (w + 1) + c + 1] + row_sum;
            }
        }
        Integral { width: w + 1, sums }
    }

    fn count(&self, col: usize, row: usize, size: usize) -> u64 {
        let at = |r: usize, c: usize| self.sums[r * self.width + c];
        at(row + size, col + size) + at(row, col) - at(row, col + size) - at(row + size, col)
    }
}

fn cut_chip(image: &Raster, mask: &Mask, col: usize, row: usize, size: usize, scene: &str) -> Chip {
    let mut samples = Vec::with_capacity(size * size * image.band_count());
    for b in 0..image.band_count() {
        let band = image.band(b);
        for r in row..row + size {
            let start = r * image.width() + col;
            samples.extend_from_slice(&band[start..start + size]);
        }
    }
    let mut m = Vec::with_capacity(size * size);
    for r in row..row + size {
        for c in col..col + size {
            m.push((mask.get(r, c) != 0) as u8);
        }
    }
    Chip {
        samples,
        band_names: image.band_names().to_vec(),
        size,
        mask: m,
        origin: (col as i64, row as i64),
        transform: image.transform.window(col as i64, row as i64),
        scene: scene.to_string(),
    }
}

/// Lattice start offsets `0, stride, ...` that keep a window inside `extent`.
pub fn lattice_starts(extent: usize, size: usize, stride: usize) -> Vec<usize> {
    if size > extent {
        return Vec::new();
    }
    (0..=extent - size).step_by(stride).collect()
}

/// Slides a window over the mask and keeps every lattice window holding at
/// least one positive pixel, then adds seeded random all-background windows.
///
/// Output order: positives by `(row, col)` origin, then negatives in draw order.
pub fn extract_chips(image: &Raster, mask: &Mask, params: &ChipParams, seed: u64, scene: &str) -> Result<Vec<Chip>> {
    params.validate()?;
    let size = params.chip_size;
    if mask.width() != image.width() || mask.height() != image.height() {
        return Err(Error::DimensionMismatch(format!(
            "mask {}x{} vs raster {}x{}",
            mask.width(),
            mask.height(),
            image.width(),
            image.height()
        )));
    }
    if size > image.width() || size > image.height() {
        return Err(Error::InvalidArgument(format!(
            "chip size {} larger than raster {}x{}",
            size,
            image.width(),
            image.height()
        )));
    }
    let integral = Integral::new(mask);
    let mut chips = Vec::new();
    for row in lattice_starts(image.height(), size, params.stride) {
        for col in lattice_starts(image.width(), size, params.stride) {
            if integral.count(col, row, size) > 0 {
                chips.push(cut_chip(image, mask, col, row, size, scene));
            }
        }
    }

    let wanted = (params.negatives_per_positive * chips.len() as f64).ceil() as usize;
    if wanted == 0 {
        return Ok(chips);
    }
    let mut rng = rng::substream(seed, rng::CHIP, 0);
    let (max_col, max_row) = (image.width() - size, image.height() - size);
    let mut taken: HashSet<(usize, usize)> = HashSet::new();
    let mut attempts = 0usize;
    let budget = wanted * 200 + 1000;
    let mut negatives = 0usize;
    while negatives < wanted && attempts < budget {
        attempts += 1;
        let col = rng.random_range(0..=max_col);
        let row = rng.random_range(0..=max_row);
        if integral.count(col, row, size) != 0 || !taken.insert((col, row)) {
            continue;
        }
        chips.push(cut_chip(image, mask, col, row, size, scene));
        negatives += 1;
    }
    if negatives < wanted {
        log::warn!("scene {scene}: only found {negatives} of {wanted} background windows");
    }
    Ok(chips)
}

/// Train/val/test partition of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T = Chip> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

/// Sizes `(train, val, test)` produced by [`split_dataset`] for `n` items.
pub fn split_sizes(n: usize, test_frac: f64, val_frac: f64) -> Result<(usize, usize, usize)> {
    if !(test_frac >= 0.0 && val_frac >= 0.0 && test_frac + val_frac < 1.0) {
        return Err(Error::config(
            "test_frac/val_frac",
            format!("need fractions >= 0 with sum < 1, got {test_frac} and {val_frac}"),
        ));
    }
    let test = (test_frac * n as f64).round() as usize;
    let val = (val_frac * n as f64).round() as usize;
    let test = test.min(n);
    let val = val.min(n - test);
    Ok((n - test - val, val, test))
}

/// Seeded assignment of each item index to a split.
pub fn split_assignment(n: usize, test_frac: f64, val_frac: f64, seed: u64) -> Result<Vec<SplitName>> {
    let (_, val, test) = split_sizes(n, test_frac, val_frac)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::substream(seed, rng::SPLIT, 0));
    let mut out = vec![SplitName::Train; n];
    for (pos, &idx) in order.iter().enumerate() {
        out[idx] = if pos < test {
            SplitName::Test
        } else if pos < test + val {
            SplitName::Val
        } else {
            SplitName::Train
        };
    }
    Ok(out)
}

/// Seeded shuffle, then `round(test_frac * n)` test items, `round(val_frac * n)`
/// validation items and the rest for training.
pub fn split_dataset<T>(items: Vec<T>, test_frac: f64, val_frac: f64, seed: u64) -> Result<DatasetSplit<T>> {
    if items.is_empty() {
        return Err(Error::Empty("cannot split an empty chip list".into()));
    }
    let assignment = split_assignment(items.len(), test_frac, val_frac, seed)?;
    let mut split = DatasetSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for (item, which) in items.into_iter().zip(assignment) {
        match which {
            SplitName::Train => split.train.push(item),
            SplitName::Val => split.val.push(item),
            SplitName::Test => split.test.push(item),
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raster(w: usize, h: usize) -> Raster {
        let samples: Vec<f32> = (0..w * h).map(|i| i as f32).collect();
        Raster::new(
            w,
            h,
            vec!["R".into()],
            samples,
            GeoTransform::new(0.0, 0.0, 10.0, 10.0).unwrap(),
            None,
        )
        .unwrap()
    }

    fn params(size: usize, stride: usize, neg: f64) -> ChipParams {
        ChipParams {
            chip_size: size,
            stride,
            negatives_per_positive: neg,
        }
    }

    #[test]
    fn all_zero_mask_without_negatives_is_empty() {
        let r = raster(200, 200);
        let m = Mask::filled(200, 200, 0);
        assert!(extract_chips(&r, &m, &params(100, 50, 0.0), 1, "s").unwrap().is_empty());
    }

    #[test]
    fn all_positive_mask_gives_full_lattice() {
        let r = raster(200, 200);
        let m = Mask::filled(200, 200, 1);
        let chips = extract_chips(&r, &m, &params(100, 50, 0.0), 1, "s").unwrap();
        assert_eq!(chips.len(), 9);
        let origins: Vec<_> = chips.iter().map(|c| c.origin).collect();
        assert_eq!(origins[0], (0, 0));
        assert_eq!(origins[1], (50, 0));
        assert_eq!(origins[8], (100, 100));
    }

    #[test]
    fn single_positive_pixel_hits_only_covering_windows() {
        let r = raster(200, 200);
        let mut m = Mask::filled(200, 200, 0);
        m.set(10, 10, 1);
        let chips = extract_chips(&r, &m, &params(100, 50, 0.0), 1, "s").unwrap();
        // brute force: every lattice window containing (10, 10)
        let mut expected = Vec::new();
        for row in lattice_starts(200, 100, 50) {
            for col in lattice_starts(200, 100, 50) {
                if (row..row + 100).contains(&10) && (col..col + 100).contains(&10) {
                    expected.push((col as i64, row as i64));
                }
            }
        }
        let got: Vec<_> = chips.iter().map(|c| c.origin).collect();
        assert_eq!(got, expected);
        assert_eq!(got, vec![(0, 0)]);
    }

    #[test]
    fn chip_content_and_transform() {
        let r = raster(8, 6);
        let mut m = Mask::filled(8, 6, 0);
        m.set(3, 5, 1);
        let chips = extract_chips(&r, &m, &params(4, 2, 0.0), 1, "s").unwrap();
        let c = chips.iter().find(|c| c.origin == (4, 2)).unwrap();
        assert_eq!(c.samples[0], r.get(0, 2, 4));
        assert_eq!(c.mask[4 + 1], 1);
        assert_eq!(c.transform.origin_x, 40.0);
        assert_eq!(c.transform.origin_y, -20.0);
    }

    #[test]
    fn negatives_are_background_only_and_counted() {
        let r = raster(100, 100);
        let mut m = Mask::filled(100, 100, 0);
        m.set(5, 5, 1);
        let chips = extract_chips(&r, &m, &params(20, 10, 2.0), 3, "s").unwrap();
        let pos = chips.iter().filter(|c| c.is_positive()).count();
        assert_eq!(pos, 1);
        assert_eq!(chips.len() - pos, 2);
        assert!(!chips[1].is_positive() && !chips[2].is_positive());
    }

    #[test]
    fn oversized_chip_is_an_error() {
        let r = raster(50, 50);
        let m = Mask::filled(50, 50, 0);
        assert!(extract_chips(&r, &m, &params(64, 8, 0.0), 1, "s").is_err());
    }

    #[test]
    fn split_counts() {
        assert_eq!(split_sizes(1917, 0.1, 0.2).unwrap(), (1342, 383, 192));
        assert_eq!(split_sizes(10, 0.1, 0.2).unwrap(), (7, 2, 1));
        assert!(split_sizes(10, 0.5, 0.5).is_err());
        assert!(split_sizes(10, -0.1, 0.2).is_err());
        let s = split_dataset((0..10).collect::<Vec<_>>(), 0.1, 0.2, 9).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (7, 2, 1));
        assert!(split_dataset(Vec::<u8>::new(), 0.1, 0.2, 9).is_err());
    }

    #[test]
    fn split_is_deterministic() {
        let a = split_dataset((0..50).collect::<Vec<_>>(), 0.1, 0.2, 4).unwrap();
        let b = split_dataset((0..50).collect::<Vec<_>>(), 0.1, 0.2, 4).unwrap();
        assert_eq!(a, b);
        let c = split_dataset((0..50).collect::<Vec<_>>(), 0.1, 0.2, 5).unwrap();
        assert_ne!(a.train, c.train);
    }
}
