use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("{block} block is rank-deficient (rank {rank} < {cols} columns)")]
    RankDeficient {
        block: &'static str,
        rank: usize,
        cols: usize,
    },

    #[error("{0}")]
    Metric(String),

    #[error("bad IDX magic in {path}: expected {expected}, found {found}")]
    IdxMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("truncated IDX file {path}: expected {expected} bytes, found {found}")]
    IdxTruncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("image/label count mismatch: {images} images, {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("non-numeric cell `{value}` in column `{column}` (line {line})")]
    NonNumeric {
        column: String,
        value: String,
        line: usize,
    },

    #[error("no usable rows in {0}")]
    NoRows(String),

    #[error("unknown recipe `{name}`; available: {available}")]
    UnknownRecipe { name: String, available: String },

    #[error("{failed} of {total} {what} failed")]
    TooManyFailures {
        what: &'static str,
        failed: usize,
        total: usize,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
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
