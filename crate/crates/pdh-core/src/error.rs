use std::path::PathBuf;

/// Crate-wide error type. Variants map onto the CLI exit codes
/// (2 configuration, 3 ingestion, 4 numeric/training, 5 evaluation).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("format error in {path}: {message} (byte offset {offset})")]
    Format {
        path: PathBuf,
        message: String,
        offset: usize,
    },

    #[error("infeasible sampling: {0}")]
    InfeasibleSampling(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("state error: {0}")]
    State(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Ingestion(_) | Error::Format { .. } | Error::Io(_) => 3,
            Error::Dimension(_)
            | Error::InfeasibleSampling(_)
            | Error::Divergence(_)
            | Error::State(_)
            | Error::Domain(_) => 4,
            Error::Evaluation(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
