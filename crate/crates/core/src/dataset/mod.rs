//! Band stacking, mask rasterization, chipping, splitting, normalization and
//! synthetic scene generation.

mod bands;
mod catalog;
mod chips;
mod mask;
mod normalize;
mod synth;

pub use bands::{compute_ndsw, stack_bands, BandSource, BandSpec, NDSW, SOURCE_BANDS, SWIR1, SWIR2};
pub use catalog::{read_catalog, write_catalog, Catalog, CatalogEntry, CatalogIndex, INDEX_FILE, MASK_BAND};
pub use chips::{
    extract_chips, lattice_starts, split_assignment, split_dataset, split_sizes, Chip, ChipParams, DatasetSplit,
    SplitName,
};
pub use mask::rasterize_mask;
pub use normalize::{apply_normalization, fit_normalization, NormalizationStats};
pub use synth::{generate_synthetic, BandStat, SpectralProfiles, SynthConfig, SyntheticScene};

use crate::error::Result;

/// Re-stacks a chip's bands according to `spec`.
pub fn stack_chip(chip: &Chip, spec: &BandSpec) -> Result<Chip> {
    let stacked = stack_bands(&chip.to_raster()?, spec)?;
    Ok(Chip {
        band_names: stacked.band_names().to_vec(),
        samples: stacked.into_samples(),
        ..chip.clone()
    })
}
