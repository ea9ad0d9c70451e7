use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("landmark {index} at ({x:.3}, {y:.3}) falls outside the {width}x{height} frame")]
    OutOfFrame {
        index: usize,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("column {column} has near-zero norm {norm:e}")]
    DegenerateColumn { column: usize, norm: f64 },

    #[error("embedding row {row} has zero norm")]
    DegenerateEmbedding { row: usize },

    #[error("autoencoder has not been pretrained")]
    NotPretrained,

    #[error("autoencoder is frozen and cannot be trained further")]
    Frozen,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid dataset spec: {0}")]
    Spec(String),

    #[error("malformed file at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("degenerate score set: {0}")]
    DegenerateScore(String),

    #[error("fold {fold}: {message}")]
    Fold { fold: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("unknown strategy `{name}` for {kind}; known: {known}")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit status for this error: 2 config, 3 missing or unreadable
    /// artifact, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Spec(_) | Error::UnknownStrategy { .. } => 2,
            Error::MissingArtifact(_) | Error::NotPretrained | Error::Format { .. } | Error::Io(_) => 3,
            _ => 4,
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}
