use std::path::PathBuf;

/// Errors produced anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The requested (ε, δ) target cannot pay for the fixed mechanism costs.
    #[error(
        "infeasible privacy budget: fixed costs exceed the target by {shortfall:.6} (rho), \
         nothing left for private prediction"
    )]
    InfeasibleBudget { shortfall: f64 },

    #[error("backend error: {0}")]
    Backend(String),

    #[error("tokenizer fingerprint mismatch: session pinned {expected}, backend reports {actual}")]
    FingerprintMismatch { expected: String, actual: String },

    /// A broken internal invariant. Indicates a bug, not bad input.
    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
