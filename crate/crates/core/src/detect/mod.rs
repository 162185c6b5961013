//! Tiled inference and conversion of probability maps into polygons.

mod components;
mod export;
mod infer;
mod polygonize;

pub use components::{connected_components, Components, Connectivity};
pub use export::{detections_to_geojson, export_geojson, read_detections};
pub use infer::{predict_raster, threshold_probability, InferenceConfig, PROBABILITY_BAND};
pub use polygonize::{extract_detections, filter_detections, polygonize, Detection, PostprocConfig};
