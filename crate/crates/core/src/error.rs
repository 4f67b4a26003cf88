use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    /// All violations found while validating a configuration, not just the first.
    #[error("configuration invalid:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("closed loop unstable: {0}")]
    Unstable(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("fit did not converge after {iterations} iterations: {reason}")]
    NonConvergence { iterations: usize, reason: String },

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures the CLI reports with the "numerical failure" exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Unstable(_) | Error::Numerical(_) | Error::NonConvergence { .. }
        )
    }

    /// True for errors caused by invalid user input (parameters or config).
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Parameter { .. } | Error::Config(_) | Error::Domain(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
