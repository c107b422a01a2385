use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("face {index} is degenerate (area {area:e} mm^2)")]
    DegenerateFace { index: usize, area: f64 },

    #[error("face {face} references vertex {vertex}, but the mesh has {count} vertices")]
    FaceIndexOutOfRange { face: usize, vertex: usize, count: usize },

    #[error("facet {facet} coincides with the feed port position")]
    FacetAtPort { facet: usize },

    #[error("observation plane intersects the reflector mesh (facet {facet})")]
    PlaneIntersectsMesh { facet: usize },

    #[error("aperture node {node} and voxel {voxel} are {distance:e} mm apart (minimum {minimum} mm)")]
    SourceTooClose { node: usize, voxel: usize, distance: f64, minimum: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("roi extent {extent} mm along {axis} is not a multiple of voxel size {voxel} mm (nearest fit: {suggestion} mm)")]
    NonDivisibleExtent { axis: char, extent: f64, voxel: f64, suggestion: f64 },

    #[error("target does not fit inside the region of interest: {0}")]
    TargetOutsideRoi(String),

    #[error("volume is identically zero; nothing to normalize")]
    ZeroVolume,

    #[error("non-finite iterate at ADMM iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("sensing row (frequency {frequency_hz} Hz, tx {tx}, rx {rx}): {source}")]
    Row {
        frequency_hz: f64,
        tx: usize,
        rx: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed artifact {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
