use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header in {path}: {message}")]
    Header { path: PathBuf, message: String },

    #[error("band/sample mismatch: expected {expected} samples, found {found}")]
    SampleMismatch { expected: usize, found: usize },

    #[error("empty raster")]
    EmptyRaster,

    #[error("invalid geojson: {0}")]
    GeoJson(String),

    #[error("invalid ring: {0}")]
    InvalidRing(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("missing band {0}")]
    MissingBand(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config field `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("constant band {band} has zero standard deviation")]
    ConstantBand { band: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("gradient error: {0}")]
    Gradient(String),

    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("corrupt payload: {0}")]
    CorruptPayload(String),

    #[error("training diverged at epoch {epoch}: loss is NaN")]
    Diverged { epoch: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }
}
