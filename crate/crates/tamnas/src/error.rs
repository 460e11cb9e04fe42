//! Error taxonomy shared across the engine.
//!
//! Every failure mode that a caller can act on gets its own variant; the CLI
//! maps these onto distinct process exit codes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch on {axis_a} vs {axis_b} ({dim_a} != {dim_b})")]
    ShapeMismatch {
        op: &'static str,
        axis_a: String,
        axis_b: String,
        dim_a: usize,
        dim_b: usize,
    },

    #[error("{op}: invalid argument: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("depthwise kernel size {k} not in {{3, 5, 7}}")]
    InvalidKernel { k: usize },

    #[error("label {label} out of range for {classes} classes (batch index {index})")]
    LabelOutOfRange {
        label: usize,
        classes: usize,
        index: usize,
    },

    #[error("backward requires a scalar output, got shape {shape:?}")]
    NonScalarBackward { shape: Vec<usize> },

    #[error("non-finite value in {context}{}", batch_index.map(|i| format!(" (batch index {i})")).unwrap_or_default())]
    NonFinite {
        context: String,
        batch_index: Option<usize>,
    },

    #[error("block id {id} out of range 0..=21")]
    BlockIdOutOfRange { id: usize },

    #[error("channel id {id} out of range 0..=9")]
    ChannelIdOutOfRange { id: usize },

    #[error("block {block} is not legal at layer {layer} (stride {stride})")]
    IllegalPlacement {
        layer: usize,
        block: usize,
        stride: usize,
    },

    #[error("genome has {got} genes, preset expects {expected}")]
    GenomeLength { got: usize, expected: usize },

    #[error("malformed genome text: {msg}")]
    GenomeParse { msg: String },

    #[error(
        "constraint window [{min}, {max}] infeasible after {attempts} attempts \
         (achievable range [{achievable_min}, {achievable_max}])"
    )]
    InfeasibleWindow {
        min: u64,
        max: u64,
        attempts: usize,
        achievable_min: u64,
        achievable_max: u64,
    },

    #[error("parse error at byte offset {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("checkpoint corrupt: {msg}")]
    Checkpoint { msg: String },

    #[error("missing upstream artifact: expected {path}")]
    MissingArtifact { path: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("config hash mismatch: {found} vs expected {expected} (use --force to override)")]
    ConfigHashMismatch { found: String, expected: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 config, 3 data, 4 compute, 5 missing artifact.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::ConfigHashMismatch { .. } => 2,
            Error::Parse { .. } | Error::Io(_) | Error::Json(_) | Error::Checkpoint { .. } => 3,
            Error::MissingArtifact { .. } => 5,
            _ => 4,
        }
    }
}
