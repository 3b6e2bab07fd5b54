use thiserror::Error;

/// Errors produced anywhere in the synthesis toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("resolution mismatch: expected {expected}, got {actual}")]
    ResolutionMismatch { expected: usize, actual: usize },

    #[error("shape has no occupied voxels")]
    EmptyShape,

    #[error("grid has no iso-surface crossing")]
    EmptySurface,

    #[error("mesh has zero surface area")]
    DegenerateMesh,

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("empty set")]
    EmptySet,

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid shape spec: {0}")]
    InvalidSpec(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("model not ready: {0}")]
    ModelNotReady(String),

    #[error("wrong model kind: expected {expected}, got {actual}")]
    WrongModel { expected: String, actual: String },

    #[error("invalid model kind `{0}`")]
    InvalidKind(String),

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("diffusion step {t} outside 1..={max}")]
    StepRange { t: usize, max: usize },

    #[error("unknown node {0}")]
    UnknownNode(u64),

    #[error("no pending suggestion set for node {0}")]
    StaleSuggestions(u64),

    #[error("suggestion index {index} out of range for {len} items")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("depth limit {0} reached")]
    DepthLimit(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing prerequisite: {0}")]
    Missing(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
