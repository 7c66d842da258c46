use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("label {label} out of range for {num_classes} classes")]
    InvalidLabel { label: i64, num_classes: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("parameter layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("invalid merge weights: {0}")]
    InvalidWeights(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("run failed: {0}")]
    Runtime(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for problems with the caller's configuration rather than with a
    /// run itself.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidSpec(_) | Error::Config(_) | Error::Json(_) | Error::MissingFile(_) | Error::InvalidWeights(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
