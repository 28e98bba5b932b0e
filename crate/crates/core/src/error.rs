use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("shape error in layer {layer}: {msg}")]
    Shape { layer: usize, msg: String },

    #[error("invalid rate: {0}")]
    Rate(String),

    #[error("layer {layer}: target rate {target} exceeds {d_in} features per cycle; the legacy derivation handles at most one pixel per cycle")]
    UnsupportedByLegacy {
        layer: usize,
        target: String,
        d_in: u64,
    },

    #[error("inconsistent lane pattern: map width {map_w} is not a multiple of {pixels} pixels per cycle (pad the row length to {suggested})")]
    InconsistentLanePattern {
        map_w: usize,
        pixels: usize,
        suggested: usize,
    },

    #[error("window partition violated: {0}")]
    Partition(String),

    #[error("plan does not match model: {0}")]
    PlanMismatch(String),

    #[error("stream order violation in layer {layer}: {msg}")]
    StreamOrder { layer: usize, msg: String },

    #[error("deadlock in layer {layer}: {msg}")]
    Deadlock { layer: usize, msg: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
