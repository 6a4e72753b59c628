use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's shape or argument contract.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing input file {}", path.display())]
    MissingFile { path: PathBuf },

    #[error("parse error in {} line {line}: {reason}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("failed to load {what}: {reason}")]
    Load { what: String, reason: String },

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("degenerate projection: {0}")]
    Degenerate(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("transfer error: {0}")]
    Transfer(String),

    #[error("stage `{stage}` needs the output of `{requires}` first (missing {})", missing.display())]
    StageOrder {
        stage: String,
        requires: String,
        missing: PathBuf,
    },

    /// An input artifact carries a different config digest than the current
    /// configuration would produce.
    #[error("{} was produced under a different configuration (digest {found}, expected {expected}); rerun `{requires}`", path.display())]
    StaleArtifact {
        path: PathBuf,
        requires: String,
        found: String,
        expected: String,
    },

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("{0} gate(s) failed")]
    GateFailure(usize),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::StageOrder { .. } | Error::StaleArtifact { .. } => 2,
            Error::GateFailure(_) => 3,
            Error::Io { .. } | Error::MissingFile { .. } => 4,
            _ => 1,
        }
    }
}
