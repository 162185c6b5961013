//! On-disk chip catalog.
//!
//! Layout of a catalog directory:
//!
//! * `index.json`: catalog metadata plus one entry per chip
//!   (`id`, `file`, `scene`, `origin` as `[col, row]`, `split`, `positive`),
//! * `chip_NNNNN.json` / `chip_NNNNN.bin`: one native raster pair per chip
//!   holding the image bands followed by a final `MASK` band (0.0 or 1.0).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::chips::{Chip, DatasetSplit, SplitName};
use crate::error::{Error, Result};
use crate::geodata::{read_raster, write_raster, Raster};
use crate::util;

pub const CATALOG_FORMAT: &str = "dumpwatch-chip-catalog";
pub const CATALOG_VERSION: u32 = 1;
pub const INDEX_FILE: &str = "index.json";
pub const MASK_BAND: &str = "MASK";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub id: usize,
    pub file: String,
    pub scene: String,
    pub origin: [i64; 2],
    pub split: SplitName,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogIndex {
    pub format: String,
    pub version: u32,
    pub chip_size: usize,
    pub band_names: Vec<String>,
    pub seed: u64,
    pub chips: Vec<CatalogEntry>,
}

#[derive(Debug, Clone)]
pub struct Catalog {
    pub index: CatalogIndex,
    pub chips: Vec<Chip>,
}

impl Catalog {
    pub fn split(&self) -> DatasetSplit {
        let mut split = DatasetSplit {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
            seed: self.index.seed,
        };
        for (entry, chip) in self.index.chips.iter().zip(&self.chips) {
            let target = match entry.split {
                SplitName::Train => &mut split.train,
                SplitName::Val => &mut split.val,
                SplitName::Test => &mut split.test,
            };
            target.push(chip.clone());
        }
        split
    }

    pub fn count(&self, which: SplitName) -> usize {
        self.index.chips.iter().filter(|e| e.split == which).count()
    }
}

fn chip_to_raster(chip: &Chip) -> Result<Raster> {
    let mut names = chip.band_names.clone();
    names.push(MASK_BAND.into());
    let mut samples = chip.samples.clone();
    samples.extend(chip.mask.iter().map(|&m| m as f32));
    Raster::new(chip.size, chip.size, names, samples, chip.transform, Some(f32::NAN))
}

fn raster_to_chip(raster: Raster, entry: &CatalogEntry) -> Result<Chip> {
    if raster.width() != raster.height() {
        return Err(Error::SchemaMismatch(format!("chip {} is not square", entry.id)));
    }
    let mut names = raster.band_names().to_vec();
    if names.pop().as_deref() != Some(MASK_BAND) {
        return Err(Error::SchemaMismatch(format!(
            "chip {} lacks a trailing {MASK_BAND} band",
            entry.id
        )));
    }
    let size = raster.width();
    let transform = raster.transform;
    let mut samples = raster.into_samples();
    let mask: Vec<u8> = samples
        .split_off(names.len() * size * size)
        .iter()
        .map(|&v| (v != 0.0) as u8)
        .collect();
    Ok(Chip {
        samples,
        band_names: names,
        size,
        mask,
        origin: (entry.origin[0], entry.origin[1]),
        transform,
        scene: entry.scene.clone(),
    })
}

/// Writes `chips` with their split assignment into `dir`.
pub fn write_catalog(dir: &Path, chips: &[Chip], assignment: &[SplitName], seed: u64) -> Result<CatalogIndex> {
    if chips.len() != assignment.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} chips but {} split assignments",
            chips.len(),
            assignment.len()
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let chip_size = chips.first().map(|c| c.size).unwrap_or(0);
    let band_names = chips.first().map(|c| c.band_names.clone()).unwrap_or_default();
    let mut entries = Vec::with_capacity(chips.len());
    for (id, (chip, &split)) in chips.iter().zip(assignment).enumerate() {
        if chip.size != chip_size || chip.band_names != band_names {
            return Err(Error::SchemaMismatch("catalog chips must share size and bands".into()));
        }
        let file = format!("chip_{id:05}.json");
        write_raster(&chip_to_raster(chip)?, &dir.join(&file))?;
        entries.push(CatalogEntry {
            id,
            file,
            scene: chip.scene.clone(),
            origin: [chip.origin.0, chip.origin.1],
            split,
            positive: chip.is_positive(),
        });
    }
    let index = CatalogIndex {
        format: CATALOG_FORMAT.into(),
        version: CATALOG_VERSION,
        chip_size,
        band_names,
        seed,
        chips: entries,
    };
    let mut text = serde_json::to_string_pretty(&index)?;
    text.push('\n');
    util::write_atomic(&dir.join(INDEX_FILE), text.as_bytes())?;
    Ok(index)
}

pub fn read_catalog(dir: &Path) -> Result<Catalog> {
    let path = dir.join(INDEX_FILE);
    let index: CatalogIndex = serde_json::from_slice(&util::read_bytes(&path)?).map_err(|e| Error::Header {
        path: path.clone(),
        message: e.to_string(),
    })?;
    if index.format != CATALOG_FORMAT {
        return Err(Error::Header {
            path,
            message: format!("unknown format {:?}", index.format),
        });
    }
    if index.version != CATALOG_VERSION {
        return Err(Error::UnsupportedVersion(index.version));
    }
    let mut chips = Vec::with_capacity(index.chips.len());
    for entry in &index.chips {
        let chip = raster_to_chip(read_raster(&dir.join(&entry.file))?, entry)?;
        if chip.size != index.chip_size || chip.band_names != index.band_names {
            return Err(Error::SchemaMismatch(format!(
                "chip {} disagrees with the index",
                entry.id
            )));
        }
        if chip.is_positive() != entry.positive {
            return Err(Error::SchemaMismatch(format!(
                "chip {} positivity flag is stale",
                entry.id
            )));
        }
        chips.push(chip);
    }
    Ok(Catalog { index, chips })
}
