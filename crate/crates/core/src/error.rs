use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value at index {index} ({value})")]
    NonFinite { index: usize, value: f64 },

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("softmax row {row} has no unmasked entries")]
    EmptySoftmaxRow { row: usize },

    #[error("loss node must be 1x1, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },

    #[error("tape is not topologically ordered at node {0}")]
    TapeOrder(usize),

    #[error("training split must contain both classes (positives: {positives}, negatives: {negatives})")]
    SingleClass { positives: usize, negatives: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("parse error in {path}: {detail}")]
    Parse { path: PathBuf, detail: String },

    #[error("bad weight file: {0}")]
    WeightFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Shape {
        op,
        detail: detail.into(),
    })
}
