use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape error: {msg}")]
    Shape { op: &'static str, msg: String },

    #[error("{op}: unsupported configuration: {msg}")]
    Unsupported { op: &'static str, msg: String },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: String },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("invalid spec at `{path}`: {msg}")]
    InvalidSpec { path: String, msg: String },

    #[error("unknown preset `{name}` (available: {})", available.join(", "))]
    UnknownPreset { name: String, available: Vec<String> },

    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("file truncated while reading {what}")]
    Truncated { what: String },

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("parameter `{name}` missing from checkpoint")]
    MissingParameter { name: String },

    #[error("checkpoint has parameter `{name}` that the architecture does not define")]
    UnexpectedParameter { name: String },

    #[error("parameter `{name}` has shape {found:?}, spec expects {expected:?}")]
    ParameterShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("impossible geometry: {0}")]
    Geometry(String),

    #[error("training diverged at epoch {epoch}, step {step} (loss = {loss})")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn shape_err(op: &'static str, msg: impl Into<String>) -> Error {
    Error::Shape { op, msg: msg.into() }
}
