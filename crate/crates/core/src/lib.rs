//! Waste dumping site detection in multispectral rasters with a U-Net.
//!
//! The pipeline: synthesize or load scenes ([`geodata`], [`dataset`]), train
//! a segmentation model ([`numerics`], [`unet`], [`training`]) and turn its
//! probability maps into geo-referenced polygons ([`detect`]).

// Validation uses `!(x > 0.0)` on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataset;
pub mod detect;
pub mod error;
pub mod geodata;
pub mod grid;
pub mod numerics;
pub mod rng;
pub mod training;
pub mod unet;
mod util;

pub use error::{Error, Result};
