use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric fault: {0}")]
    NumericFault(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{source_name}:{line}: {message}")]
    Format {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("checkpoint format error at byte {offset}: {message}")]
    Checkpoint { offset: u64, message: String },

    #[error("checkpoint dimensions conflict with configuration: {0}")]
    DimensionConflict(String),

    #[error("unresolved entities in attribute triples: {}", .heads.join(", "))]
    UnresolvedEntity { heads: Vec<String> },

    #[error("index out of range: {0}")]
    Index(String),

    #[error("no negative candidate for head {head} under relation {relation} after {attempts} draws")]
    SamplingExhausted {
        head: u32,
        relation: u32,
        attempts: usize,
    },

    #[error("gradient oracle error: {0}")]
    Oracle(String),

    #[error("cold entity: {0}")]
    ColdEntity(String),

    #[error("dataset manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input or configuration, as opposed to
    /// faults raised while computing.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::NumericFault(_) | Error::Oracle(_) | Error::Diverged { .. }
        )
    }
}
