use thiserror::Error;

/// Crate-wide error type.
///
/// Every variant names the module that raised it so that CLI output can be
/// traced back to the failing stage.
#[derive(Debug, Error)]
pub enum Error {
    #[error("[{module}] invalid input: {message}")]
    InvalidInput {
        module: &'static str,
        message: String,
    },

    #[error("[{module}] configuration error: {message}")]
    Configuration {
        module: &'static str,
        message: String,
    },

    #[error("[{module}] invalid problem: {message}")]
    InvalidProblem {
        module: &'static str,
        message: String,
    },

    #[error("[grid_fd] scheme is not of positive type at node {node} {coords:?}: {message}")]
    Monotonicity {
        node: usize,
        coords: Vec<f64>,
        message: String,
    },

    #[error("[{module}] no convergence after {iterations} iterations (last residual {last_residual:e}): {message}")]
    Convergence {
        module: &'static str,
        iterations: usize,
        last_residual: f64,
        residual_history: Vec<f64>,
        message: String,
    },

    #[error("[{module}] divergence at step {step} (t = {time}): {message}")]
    Divergence {
        module: &'static str,
        step: usize,
        time: f64,
        message: String,
    },

    #[error("[{module}] certificate violated: {message}")]
    CertificateViolation {
        module: &'static str,
        message: String,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("[cli_io] parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn invalid(module: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidInput {
            module,
            message: message.into(),
        }
    }

    pub(crate) fn config(module: &'static str, message: impl Into<String>) -> Self {
        Error::Configuration {
            module,
            message: message.into(),
        }
    }

    pub(crate) fn problem(module: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidProblem {
            module,
            message: message.into(),
        }
    }

    /// True for failures that mean "the numerics did not settle", as opposed
    /// to malformed input.
    pub fn is_convergence_failure(&self) -> bool {
        matches!(self, Error::Convergence { .. } | Error::Divergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
