use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape {shape:?} for {len} elements")]
    InvalidShape { shape: Vec<usize>, len: usize },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("backward root must be scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("backward already ran on this graph; call reset_grads first")]
    BackwardTwice,

    #[error("poly schedule: iteration {iter} exceeds max_iter {max_iter}")]
    IterationOutOfRange { iter: usize, max_iter: usize },

    #[error("optimizer state does not match parameters: {0}")]
    StateMismatch(String),

    #[error("label {label} at (image {image}, row {row}, col {col}) is outside [0, {num_classes})")]
    LabelOutOfRange {
        image: usize,
        row: usize,
        col: usize,
        label: usize,
        num_classes: usize,
    },

    #[error("discriminator input {height}x{width} too small: needs at least {min}x{min} and multiples of {min}")]
    InputTooSmall { height: usize, width: usize, min: usize },

    #[error("non-finite {term} loss at iteration {iteration}")]
    NonFiniteLoss {
        iteration: usize,
        term: &'static str,
        source_indices: Vec<usize>,
        target_indices: Vec<usize>,
    },

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },

    #[error("missing dataset at {0}")]
    MissingDataset(PathBuf),

    #[error("{0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn format(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            what,
            msg: msg.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }
}
