use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("stale or mismatched cache: {0}")]
    StaleCache(String),
    #[error("unsupported weight file version {0:?}")]
    Version(String),
    #[error("corrupt weight file: {0}")]
    Corrupt(String),
    #[error("missing block {module}/{role}")]
    MissingBlock { module: String, role: String },
    #[error("unknown block {0}")]
    UnknownBlock(String),
    #[error("cannot compose robot module {robot} with task module {task}: {reason}")]
    Compose {
        robot: String,
        task: String,
        reason: String,
    },
    #[error("trajectory optimization diverged at iteration {iteration} (cost trace {trace:?})")]
    Divergence { iteration: usize, trace: Vec<f64> },
    #[error("control Hessian not positive definite with regularization {0:e}")]
    NotPositiveDefinite(f64),
    #[error("expert quality gate failed:\n{0}")]
    ExpertGate(String),
    #[error("missing artifact {}: run `train` first", .0.display())]
    MissingArtifact(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl std::fmt::Display,
        got: impl std::fmt::Display,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// Errors the user can fix by editing the configuration or the run directory.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::MissingArtifact(_) | Error::Json(_) | Error::Compose { .. }
        )
    }
}
