use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sensor radius {rho:.6} exceeds the field-of-view radius {rho_max:.6}")]
    OutOfFov { rho: f64, rho_max: f64 },
    #[error("pixel ({x:.3}, {y:.3}) lies outside the {width}x{height} image")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("no sensor radius reproduces the requested ray inside the field of view")]
    NoRoot,
    #[error("ray points behind the perspective camera (z = {z:.3e})")]
    BehindCamera { z: f64 },
    #[error("invalid camera model: {0}")]
    InvalidModel(String),
    #[error("degenerate homography")]
    Degenerate,
    #[error("no homography with full field-of-view overlap after {attempts} attempts")]
    RejectionExhausted { attempts: usize },
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("image dimensions {width}x{height} are not multiples of 8")]
    DimensionNotMultipleOf8 { width: u32, height: u32 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("at least one perspective view is required")]
    EmptyViews,
    #[error("no descriptor cell centroid maps inside the perspective image")]
    EmptyOverlap,
    #[error("descriptor list is empty")]
    EmptyInput,
    #[error("missing calibration: {0}")]
    MissingCalibration(PathBuf),
    #[error("dataset at {0} contains no image pairs")]
    EmptyDataset(PathBuf),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
