//! Synthetic multispectral scenes with elliptical dump sites.
//!
//! Dumps sit on a textured vegetation/soil background. The scene also holds
//! "confuser" blobs (bare construction ground) whose visible and NIR response
//! matches the dumps; only the SWIR pair tells them apart.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::bands::SOURCE_BANDS;
use super::mask::rasterize_mask;
use crate::error::{Error, Result};
use crate::geodata::{GeoTransform, PolygonAnnotation, Raster, DEFAULT_LABEL};

const ELLIPSE_VERTICES: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandStat {
    pub mean: f64,
    pub std: f64,
}

const fn bs(mean: f64, std: f64) -> BandStat {
    BandStat { mean, std }
}

/// Per-class reflectance in source band order R, G, B, NIR, SWIR1, SWIR2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralProfiles {
    pub vegetation: Vec<BandStat>,
    pub soil: Vec<BandStat>,
    pub dump: Vec<BandStat>,
    pub confuser: Vec<BandStat>,
}

impl Default for SpectralProfiles {
    fn default() -> Self {
        SpectralProfiles {
            vegetation: vec![
                bs(0.04, 0.01),
                bs(0.07, 0.01),
                bs(0.03, 0.01),
                bs(0.40, 0.02),
                bs(0.20, 0.01),
                bs(0.10, 0.01),
            ],
            soil: vec![
                bs(0.11, 0.01),
                bs(0.10, 0.01),
                bs(0.08, 0.01),
                bs(0.26, 0.02),
                bs(0.29, 0.01),
                bs(0.22, 0.01),
            ],
            dump: vec![
                bs(0.16, 0.015),
                bs(0.15, 0.015),
                bs(0.14, 0.015),
                bs(0.22, 0.02),
                bs(0.30, 0.012),
                bs(0.14, 0.012),
            ],
            confuser: vec![
                bs(0.16, 0.015),
                bs(0.15, 0.015),
                bs(0.14, 0.015),
                bs(0.22, 0.02),
                bs(0.26, 0.012),
                bs(0.24, 0.012),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub scene_size: usize,
    pub pixel_size: f64,
    pub origin_x: f64,
    pub origin_y: f64,
    /// Signed so a negative value is reported as a config error rather than a parse error.
    pub dump_count: i64,
    pub confuser_count: i64,
    /// Inclusive semi-axis range in pixels.
    pub dump_radius_range: [f64; 2],
    pub background_texture_seed: u64,
    pub spectral_profiles: SpectralProfiles,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scene_size: 256,
            pixel_size: 10.0,
            origin_x: 500_000.0,
            origin_y: 6_170_000.0,
            dump_count: 6,
            confuser_count: 6,
            dump_radius_range: [4.0, 12.0],
            background_texture_seed: 0,
            spectral_profiles: SpectralProfiles::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scene_size < 8 {
            return Err(Error::config("synth.scene_size", "must be >= 8"));
        }
        if !(self.pixel_size > 0.0) {
            return Err(Error::config("synth.pixel_size", "must be > 0"));
        }
        if self.dump_count < 0 {
            return Err(Error::config(
                "synth.dump_count",
                format!("must be >= 0, got {}", self.dump_count),
            ));
        }
        if self.confuser_count < 0 {
            return Err(Error::config(
                "synth.confuser_count",
                format!("must be >= 0, got {}", self.confuser_count),
            ));
        }
        let [lo, hi] = self.dump_radius_range;
        if !(lo > 0.0 && hi >= lo && hi < self.scene_size as f64 / 2.0) {
            return Err(Error::config(
                "synth.dump_radius_range",
                format!("need 0 < min <= max < scene_size/2, got [{lo}, {hi}]"),
            ));
        }
        let p = &self.spectral_profiles;
        for (name, prof) in [
            ("vegetation", &p.vegetation),
            ("soil", &p.soil),
            ("dump", &p.dump),
            ("confuser", &p.confuser),
        ] {
            if prof.len() != SOURCE_BANDS.len() || prof.iter().any(|b| !(b.std >= 0.0) || !b.mean.is_finite()) {
                return Err(Error::config(
                    format!("synth.spectral_profiles.{name}"),
                    "need 6 bands with finite mean and std >= 0",
                ));
            }
        }
        Ok(())
    }

    pub fn transform(&self) -> GeoTransform {
        GeoTransform {
            origin_x: self.origin_x,
            origin_y: self.origin_y,
            pixel_width: self.pixel_size,
            pixel_height: self.pixel_size,
        }
    }

    /// Smallest and largest possible annotation area in world units squared.
    pub fn area_bounds(&self) -> (f64, f64) {
        let [lo, hi] = self.dump_radius_range;
        let ps2 = self.pixel_size * self.pixel_size;
        let n = ELLIPSE_VERTICES as f64;
        (0.5 * n * (2.0 * PI / n).sin() * lo * lo * ps2, PI * hi * hi * ps2)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub raster: Raster,
    pub annotations: Vec<PolygonAnnotation>,
    pub confusers: Vec<PolygonAnnotation>,
}

struct Blob {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    phi: f64,
}

impl Blob {
    /// Ring in world coordinates; blob geometry is in pixel units.
    fn polygon(&self, t: &GeoTransform) -> Result<PolygonAnnotation> {
        let mut ring = Vec::with_capacity(ELLIPSE_VERTICES + 1);
        let (s, c) = self.phi.sin_cos();
        for k in 0..ELLIPSE_VERTICES {
            let th = 2.0 * PI * k as f64 / ELLIPSE_VERTICES as f64;
            let (ex, ey) = (self.a * th.cos(), self.b * th.sin());
            let px = self.cx + ex * c - ey * s;
            let py = self.cy + ex * s + ey * c;
            ring.push([t.origin_x + px * t.pixel_width, t.origin_y - py * t.pixel_height]);
        }
        ring.push(ring[0]);
        PolygonAnnotation::new(ring, vec![], DEFAULT_LABEL)
    }
}

fn place_blobs(cfg: &SynthConfig, rng: &mut ChaCha8Rng, count: usize, placed: &mut Vec<Blob>) -> Result<Vec<usize>> {
    let [lo, hi] = cfg.dump_radius_range;
    let size = cfg.scene_size as f64;
    let mut idx = Vec::with_capacity(count);
    for _ in 0..count {
        let mut ok = false;
        for _ in 0..10_000 {
            let a = rng.random_range(lo..=hi);
            let b = rng.random_range(lo..=hi);
            let r = a.max(b);
            let margin = r + 1.0;
            if 2.0 * margin >= size {
                break;
            }
            let cx = rng.random_range(margin..size - margin);
            let cy = rng.random_range(margin..size - margin);
            let phi = rng.random_range(0.0..PI);
            let clear = placed.iter().all(|o| {
                let d = ((o.cx - cx).powi(2) + (o.cy - cy).powi(2)).sqrt();
                d > r + o.a.max(o.b) + 3.0
            });
            if clear {
                idx.push(placed.len());
                placed.push(Blob { cx, cy, a, b, phi });
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::config(
                "synth.dump_count",
                "scene too small to place all blobs without overlap",
            ));
        }
    }
    Ok(idx)
}

/// Smooth periodic texture in [0, 1].
fn texture_field(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            let fx = rng.random_range(-3i32..=3) as f64;
            let fy = rng.random_range(-3i32..=3) as f64;
            (fx, fy, rng.random_range(0.0..2.0 * PI), rng.random_range(0.3..1.0))
        })
        .collect();
    let total: f64 = waves.iter().map(|w| w.3).sum();
    let n = size as f64;
    let mut out = Vec::with_capacity(size * size);
    for r in 0..size {
        for c in 0..size {
            let v: f64 = waves
                .iter()
                .map(|&(fx, fy, ph, amp)| amp * (2.0 * PI * (fx * c as f64 + fy * r as f64) / n + ph).cos())
                .sum();
            out.push((0.5 + 0.5 * v / total).clamp(0.0, 1.0));
        }
    }
    out
}

fn draw(rng: &mut ChaCha8Rng, s: &BandStat) -> f64 {
    if s.std == 0.0 {
        return s.mean;
    }
    Normal::new(s.mean, s.std).expect("validated std").sample(rng)
}

/// Generates one scene with bands R, G, B, NIR, SWIR1, SWIR2 plus the dump outlines.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticScene> {
    cfg.validate()?;
    let size = cfg.scene_size;
    let t = cfg.transform();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.background_texture_seed);

    let texture = texture_field(size, &mut rng);
    let mut placed = Vec::new();
    let dump_idx = place_blobs(cfg, &mut rng, cfg.dump_count as usize, &mut placed)?;
    let conf_idx = place_blobs(cfg, &mut rng, cfg.confuser_count as usize, &mut placed)?;
    let annotations = dump_idx
        .iter()
        .map(|&i| placed[i].polygon(&t))
        .collect::<Result<Vec<_>>>()?;
    let confusers = conf_idx
        .iter()
        .map(|&i| placed[i].polygon(&t))
        .collect::<Result<Vec<_>>>()?;
    let dump_mask = rasterize_mask(&annotations, &t, size, size);
    let conf_mask = rasterize_mask(&confusers, &t, size, size);

    let p = &cfg.spectral_profiles;
    let n = size * size;
    let mut samples = vec![0f32; n * SOURCE_BANDS.len()];
    for i in 0..n {
        let (r, c) = (i / size, i % size);
        let class = if dump_mask.get(r, c) != 0 {
            Some(&p.dump)
        } else if conf_mask.get(r, c) != 0 {
            Some(&p.confuser)
        } else {
            None
        };
        for b in 0..SOURCE_BANDS.len() {
            let v = match class {
                Some(prof) => draw(&mut rng, &prof[b]),
                None => {
                    let w = texture[i];
                    let mixed = BandStat {
                        mean: (1.0 - w) * p.vegetation[b].mean + w * p.soil[b].mean,
                        std: (1.0 - w) * p.vegetation[b].std + w * p.soil[b].std,
                    };
                    draw(&mut rng, &mixed)
                }
            };
            samples[b * n + i] = v.max(0.0) as f32;
        }
    }
    let raster = Raster::new(
        size,
        size,
        SOURCE_BANDS.iter().map(|s| s.to_string()).collect(),
        samples,
        t,
        Some(f32::NAN),
    )?;
    Ok(SyntheticScene {
        raster,
        annotations,
        confusers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dumps: i64, seed: u64) -> SynthConfig {
        SynthConfig {
            scene_size: 96,
            dump_count: dumps,
            confuser_count: 2,
            dump_radius_range: [3.0, 8.0],
            background_texture_seed: seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn zero_dumps_gives_empty_annotations() {
        let s = generate_synthetic(&small(0, 1)).unwrap();
        assert!(s.annotations.is_empty());
        let m = rasterize_mask(&s.annotations, &s.raster.transform, 96, 96);
        assert_eq!(m.count_ones(), 0);
    }

    #[test]
    fn dump_areas_respect_radius_bounds() {
        let cfg = small(3, 2);
        let s = generate_synthetic(&cfg).unwrap();
        assert_eq!(s.annotations.len(), 3);
        let (lo, hi) = cfg.area_bounds();
        for a in &s.annotations {
            let area = a.area();
            assert!(area >= lo - 1e-6 && area <= hi + 1e-6, "{area} not in [{lo}, {hi}]");
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic(&small(3, 5)).unwrap();
        let b = generate_synthetic(&small(3, 5)).unwrap();
        assert!(a.raster.bit_eq(&b.raster));
        assert_eq!(a.annotations, b.annotations);
        let c = generate_synthetic(&small(3, 6)).unwrap();
        assert!(!a.raster.bit_eq(&c.raster));
    }

    #[test]
    fn dumps_are_swir_distinct_from_confusers() {
        let s = generate_synthetic(&small(3, 9)).unwrap();
        let t = s.raster.transform;
        let dm = rasterize_mask(&s.annotations, &t, 96, 96);
        let cm = rasterize_mask(&s.confusers, &t, 96, 96);
        let ndsw = super::super::compute_ndsw(s.raster.band(4), s.raster.band(5), None).unwrap();
        let mean = |m: &crate::grid::Mask| {
            let (mut sum, mut n) = (0.0, 0.0);
            for (i, &v) in m.data().iter().enumerate() {
                if v != 0 {
                    sum += ndsw[i] as f64;
                    n += 1.0;
                }
            }
            sum / n
        };
        assert!(mean(&dm) - mean(&cm) > 0.2);
    }

    #[test]
    fn invalid_configs_name_their_field() {
        let err = generate_synthetic(&small(-1, 0)).unwrap_err().to_string();
        assert!(err.contains("dump_count"), "{err}");
        let mut cfg = small(1, 0);
        cfg.dump_radius_range = [0.0, 3.0];
        assert!(generate_synthetic(&cfg)
            .unwrap_err()
            .to_string()
            .contains("dump_radius_range"));
        cfg.dump_radius_range = [3.0, 60.0];
        assert!(generate_synthetic(&cfg).is_err());
    }
}
