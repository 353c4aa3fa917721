use std::path::PathBuf;

use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const NOT_CONVERGED: i32 = 3;
    pub const NUMERICAL: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// The solver finished without meeting its tolerance; artifacts were
    /// still written.
    #[error("{0}")]
    NotConverged(String),

    #[error(transparent)]
    Core(#[from] gpbas::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        use gpbas::Error as E;
        match self {
            CliError::Usage(_) | CliError::Io { .. } | CliError::Csv { .. } | CliError::Json { .. } => exit::USAGE,
            CliError::NotConverged(_) => exit::NOT_CONVERGED,
            CliError::Core(e) => match e {
                E::InvalidArgument(_) | E::Json(_) | E::BoundaryViolation { .. } => exit::USAGE,
                E::Stalled(_) | E::NotStabilizable { .. } => exit::NOT_CONVERGED,
                E::NotPositiveDefinite { .. } | E::Numerical(_) | E::Invariant(_) => exit::NUMERICAL,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
