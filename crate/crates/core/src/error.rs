use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numeric error in {primitive}: non-finite value")]
    Numeric { primitive: &'static str },
    #[error("degenerate rotation: {0}")]
    DegenerateRotation(String),
    #[error("point behind camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("conditioning needs at least one modality; use the null context instead")]
    UseNullContext,
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("optimization diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("record {id}: {msg}")]
    Record { id: u64, msg: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
