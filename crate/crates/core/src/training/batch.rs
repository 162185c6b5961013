use crate::dataset::Chip;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Scalar, Tensor, Var};
use crate::unet::{forward, UNetConfig};
use crate::util::reflect_index;

/// A stack of equally sized chips, reflect-padded up to the model's size multiple.
pub(crate) struct Batch<T> {
    pub input: Tensor<T>,
    pub target: Vec<T>,
    /// Original chip side.
    pub size: usize,
    /// Offset of the original chip inside the padded one.
    pub offset: usize,
}

pub(crate) fn make_batch<T: Scalar>(chips: &[&Chip], config: &UNetConfig) -> Result<Batch<T>> {
    let first = chips.first().ok_or_else(|| Error::Empty("batch".into()))?;
    let size = first.size;
    let c = config.in_channels;
    let padded = config.padded_side(size);
    let offset = (padded - size) / 2;
    let mut input = Vec::with_capacity(chips.len() * c * padded * padded);
    let mut target = Vec::with_capacity(chips.len() * size * size);
    let map: Vec<usize> = (0..padded)
        .map(|i| reflect_index(i as isize - offset as isize, size))
        .collect();
    for chip in chips {
        if chip.size != size {
            return Err(Error::Shape(format!("chip sizes differ: {} vs {}", chip.size, size)));
        }
        if chip.band_count() != c {
            return Err(Error::Shape(format!(
                "model expects {c} bands, chip has {}",
                chip.band_count()
            )));
        }
        for b in 0..c {
            let band = chip.band(b);
            for &r in &map {
                let row = &band[r * size..(r + 1) * size];
                input.extend(map.iter().map(|&col| T::from_f64_lossy(row[col] as f64)));
            }
        }
        target.extend(chip.mask.iter().map(|&m| if m != 0 { T::one() } else { T::zero() }));
    }
    Ok(Batch {
        input: Tensor::new(vec![chips.len(), c, padded, padded], input)?,
        target,
        size,
        offset,
    })
}

/// Records the forward pass of a batch and returns logits cropped to chip size.
pub(crate) fn batch_logits<T: Scalar>(
    graph: &mut Graph<T>,
    params: &[Var],
    config: &UNetConfig,
    batch: &Batch<T>,
) -> Result<Var> {
    let x = graph.leaf(batch.input.clone());
    let logits = forward(graph, params, config, x)?;
    if batch.offset == 0 && config.padded_side(batch.size) == batch.size {
        return Ok(logits);
    }
    graph.crop(logits, batch.offset, batch.offset, batch.size, batch.size)
}
