use std::path::PathBuf;

/// Every failure the library reports.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {cause}")]
    Io { path: PathBuf, cause: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("{path}: malformed header: {detail}")]
    MalformedHeader { path: PathBuf, detail: String },
    #[error("unsupported format: {0}")]
    Format(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{path}:{line}: {message}")]
    Scene { path: PathBuf, line: usize, message: String },
    #[error("no parameter matches selector `{0}`")]
    SelectorNotFound(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("non-finite loss or gradient at step {step}")]
    NonFinite { step: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
