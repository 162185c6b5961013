use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::geodata::Raster;

pub const SWIR1: &str = "SWIR1";
pub const SWIR2: &str = "SWIR2";
pub const NDSW: &str = "NDSW";

/// Source bands written by the synthetic generator, in order.
pub const SOURCE_BANDS: [&str; 6] = ["R", "G", "B", "NIR", "SWIR1", "SWIR2"];

const NDSW_EPS: f64 = 1e-12;

/// Normalized difference of the two SWIR bands.
///
/// Pixels where either input is nodata (NaN or the given sentinel) come out as
/// the sentinel (NaN when none is given). A near-zero denominator yields 0.
pub fn compute_ndsw(swir1: &[f32], swir2: &[f32], nodata: Option<f32>) -> Result<Vec<f32>> {
    if swir1.len() != swir2.len() {
        return Err(Error::DimensionMismatch(format!(
            "swir1 has {} cells, swir2 has {}",
            swir1.len(),
            swir2.len()
        )));
    }
    let missing = |v: f32| v.is_nan() || matches!(nodata, Some(nd) if v == nd);
    let fill = nodata.unwrap_or(f32::NAN);
    Ok(swir1
        .iter()
        .zip(swir2)
        .map(|(&a, &b)| {
            if missing(a) || missing(b) {
                return fill;
            }
            let (a, b) = (a as f64, b as f64);
            let sum = a + b;
            if sum.abs() < NDSW_EPS {
                0.0
            } else {
                ((a - b) / sum) as f32
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BandSource {
    Raw(String),
    Ndsw,
}

impl BandSource {
    pub fn name(&self) -> &str {
        match self {
            BandSource::Raw(n) => n,
            BandSource::Ndsw => NDSW,
        }
    }

    fn parse(s: &str) -> BandSource {
        let s = s.trim();
        if s.eq_ignore_ascii_case(NDSW) {
            BandSource::Ndsw
        } else {
            BandSource::Raw(s.to_string())
        }
    }
}

/// Ordered list of bands fed to the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandSpec(pub Vec<BandSource>);

impl Default for BandSpec {
    fn default() -> Self {
        BandSpec::parse("R,G,B,NIR,SWIR1,NDSW").expect("default band spec")
    }
}

impl BandSpec {
    pub fn parse(list: &str) -> Result<Self> {
        let sources: Vec<BandSource> = list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(BandSource::parse)
            .collect();
        if sources.is_empty() {
            return Err(Error::config("bands", "band list is empty"));
        }
        Ok(BandSpec(sources))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.0.iter().map(|s| s.name().to_string()).collect()
    }

    /// Short label in the style `RGB-NIR-SWIR-NDSW`.
    pub fn label(&self) -> String {
        let names = self.names();
        let mut parts: Vec<String> = Vec::new();
        let mut i = 0;
        while i < names.len() {
            if names[i..].starts_with(&["R".to_string(), "G".to_string(), "B".to_string()]) {
                parts.push("RGB".into());
                i += 3;
                continue;
            }
            parts.push(match names[i].as_str() {
                SWIR1 => "SWIR".to_string(),
                other => other.to_string(),
            });
            i += 1;
        }
        parts.join("-")
    }

    /// The four band combinations compared in the ablation table, in table order.
    pub fn ablation_presets() -> Vec<BandSpec> {
        ["R,G,B", "R,G,B,NIR", "R,G,B,NIR,SWIR1", "R,G,B,NIR,SWIR1,NDSW"]
            .iter()
            .map(|s| BandSpec::parse(s).expect("preset"))
            .collect()
    }

    pub fn validate_for(&self, band_names: &[String]) -> Result<()> {
        let has = |n: &str| band_names.iter().any(|b| b == n);
        for s in &self.0 {
            match s {
                BandSource::Raw(n) if !has(n) => return Err(Error::MissingBand(n.clone())),
                BandSource::Ndsw if !(has(SWIR1) && has(SWIR2)) => {
                    return Err(Error::MissingBand(format!("{SWIR1}/{SWIR2} needed for {NDSW}")))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

impl fmt::Display for BandSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.names().join(","))
    }
}

impl Serialize for BandSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.names().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BandSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        BandSpec::parse(&names.join(",")).map_err(serde::de::Error::custom)
    }
}

/// Builds a raster holding exactly the bands of `spec`, in spec order.
pub fn stack_bands(raster: &Raster, spec: &BandSpec) -> Result<Raster> {
    spec.validate_for(raster.band_names())?;
    let n = raster.width() * raster.height();
    let mut samples = Vec::with_capacity(n * spec.len());
    // Finite sentinels are carried through; NaN is used otherwise.
    let sentinel = raster.nodata.filter(|v| !v.is_nan());
    for source in &spec.0 {
        match source {
            BandSource::Raw(name) => {
                let idx = raster.band_index(name).expect("validated");
                samples.extend_from_slice(raster.band(idx));
            }
            BandSource::Ndsw => {
                let s1 = raster.band(raster.band_index(SWIR1).expect("validated"));
                let s2 = raster.band(raster.band_index(SWIR2).expect("validated"));
                samples.extend(compute_ndsw(s1, s2, sentinel)?);
            }
        }
    }
    Raster::new(
        raster.width(),
        raster.height(),
        spec.names(),
        samples,
        raster.transform,
        raster.nodata,
    )
}
