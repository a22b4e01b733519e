use std::path::PathBuf;

use thiserror::Error;

use crate::volume::Dims;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed MVOL header: {0}")]
    MalformedHeader(String),
    #[error("MVOL payload holds {actual} bytes, header implies {expected}")]
    PayloadLength { expected: usize, actual: usize },
    #[error("mask voxel {index} has value {value}, expected 0 or 1")]
    NonBinaryMask { index: usize, value: f64 },
    #[error("invalid spacing ({0}, {1}, {2}): every component must be finite and > 0")]
    InvalidSpacing(f64, f64, f64),
    #[error("invalid dims {0}: every axis must be >= 1")]
    InvalidDims(Dims),
    #[error("voxel count {actual} does not match dims {dims}")]
    VoxelCount { dims: Dims, actual: usize },
    #[error("non-finite intensity at voxel {0}")]
    NonFiniteVoxel(usize),
    #[error("dimension mismatch: {0} vs {1}")]
    DimsMismatch(Dims, Dims),
    #[error("empty integer range [{lo}, {hi}]")]
    EmptyRange { lo: i64, hi: i64 },
    #[error("invalid phantom spec: {0}")]
    InvalidPhantom(String),
    #[error("mask is empty")]
    EmptyMask,
    #[error("annotation percentage {0} outside (0, 1]")]
    InvalidPercentage(f64),
    #[error("patch {patch} does not fit inside volume {volume}")]
    PatchTooLarge { patch: Dims, volume: Dims },
    #[error("invalid stride {0}: every axis must be >= 1")]
    InvalidStride(Dims),
    #[error("no blocks to sample from")]
    NoBlocks,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("prediction {value} at voxel {index} lies outside [0, 1]")]
    ProbabilityRange { index: usize, value: f64 },
    #[error("selection is empty (N' = 0)")]
    EmptySelection,
    #[error("expected {expected} input channels, got {actual}")]
    ChannelCount { expected: usize, actual: usize },
    #[error("activation cache does not match parameters or gradient input")]
    CacheMismatch,
    #[error("parameter/gradient shape mismatch")]
    ShapeMismatch,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
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
}

pub type Result<T> = std::result::Result<T, Error>;
