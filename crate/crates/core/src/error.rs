use std::path::Path;

use thiserror::Error;

/// Error type shared by every module in the crate.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("regression error: {0}")]
    Regression(String),

    #[error("snapshot format version mismatch: file has {found}, this build reads {expected}")]
    SnapshotVersion { found: u32, expected: u32 },

    #[error("checksum mismatch in {file}: manifest {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch {
        file: String,
        stored: u32,
        computed: u32,
    },

    #[error("snapshot error: {0}")]
    Snapshot(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
