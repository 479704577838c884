use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("i/o failure on {path}: {source}")]
    IoAt {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("compressed input is not supported (gzip magic found)")]
    CompressedInput,

    #[error("mask voxel {index} has non-binary value {value}")]
    NonBinaryMask { index: usize, value: f64 },

    #[error("dtype {dtype} cannot hold the data without rounding (voxel {index} = {value})")]
    LossyDtype {
        dtype: &'static str,
        index: usize,
        value: f64,
    },

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("mask is empty")]
    EmptyMask,

    #[error("geometry mismatch: {expected:?} vs {found:?}")]
    GeometryMismatch {
        expected: [usize; 3],
        found: [usize; 3],
    },

    #[error("no prior available for patient {patient} fraction {fraction}")]
    MissingPrior { patient: String, fraction: u32 },

    #[error("invalid augmentation policy: {0}")]
    InvalidPolicy(String),

    #[error("resampled volume has no in-bounds voxels")]
    EmptyOverlap,

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("surface is empty")]
    EmptySurface,

    #[error("distance undefined: exactly one mask is empty")]
    UndefinedDistance,

    #[error("missing prompt: {0}")]
    MissingPrompt(String),

    #[error("backend failure: {message}")]
    BackendFailure { message: String, stderr: String },

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("failed to spawn adapter `{command}`: {reason}")]
    SpawnFailure { command: String, reason: String },

    #[error("adapter did not answer the handshake within {0:?}")]
    HandshakeTimeout(std::time::Duration),

    #[error("adapter version mismatch: {0}")]
    VersionMismatch(String),

    #[error("tumor out of bounds: {0}")]
    TumorOutOfBounds(String),

    #[error("invalid value for `{field}`: {reason}")]
    InvalidSpec { field: String, reason: String },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io_at(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoAt {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid_spec(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidSpec {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
