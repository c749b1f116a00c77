//! Error type shared across the crate.

use std::path::PathBuf;

/// Everything that can go wrong in the lab.
///
/// Variants are grouped by subsystem so the CLI can map them onto exit
/// codes: config problems exit 2, data problems exit 3, anything that
/// fails mid-pipeline exits 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("tensor container: {0}")]
    Container(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("vocabulary: {0}")]
    Vocabulary(String),

    #[error("model: {0}")]
    Model(String),

    #[error("embedding table: {0}")]
    Embedding(String),

    #[error("template: {0}")]
    Template(String),

    #[error("attack: {0}")]
    Attack(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("defense: {0}")]
    Defense(String),

    #[error("config: {0}")]
    Config(String),

    #[error("artifact: {0}")]
    Artifact(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// CLI exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Manifest(_) | Error::Template(_) => 2,
            Error::Dataset(_) | Error::Vocabulary(_) | Error::Embedding(_) | Error::Io { .. } => 3,
            _ => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
