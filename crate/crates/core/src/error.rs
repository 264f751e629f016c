use std::path::PathBuf;

use crate::simulation::TrajectoryLog;

/// Errors produced by the curveform library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient samples: got {samples}, need more than {required}")]
    InsufficientSamples { samples: usize, required: usize },

    #[error("singular system in {context} (condition number {condition:.3e})")]
    SingularSystem { context: String, condition: f64 },

    #[error("graph has no rooted spanning tree at agent 1")]
    NotSpanningTree,

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("scenario validation failed:\n{}", format_issues(.0))]
    Validation(Vec<ValidationIssue>),

    #[error("non-finite state at step {step} (t = {time})")]
    Diverged {
        step: usize,
        time: f64,
        partial: Box<TrajectoryLog>,
    },

    #[error("{}: line {line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// One failed check reported by scenario validation.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationIssue {
    pub check: &'static str,
    pub message: String,
}

impl ValidationIssue {
    pub(crate) fn new(check: &'static str, message: impl Into<String>) -> Self {
        Self {
            check,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}] {}", self.check, self.message)
    }
}

fn format_issues(issues: &[ValidationIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
