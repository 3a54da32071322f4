use std::path::PathBuf;

/// Errors produced by the design pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("linear solver failed: {reason}{}", .unconstrained_modes.map(|m| format!(" ({m} unconstrained rigid-body mode(s))")).unwrap_or_default())]
    SolverFailure {
        reason: String,
        unconstrained_modes: Option<usize>,
    },

    #[error("iterative solve did not converge: achieved relative residual {residual:.3e}")]
    NotConverged { residual: f64 },

    #[error("optimizer failure: {0}")]
    Optimizer(String),

    #[error("no solution: {0}")]
    NoSolution(String),

    #[error("boundary escaped the refined integration band in {count} element(s)")]
    BandEscape { count: usize },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("{stage} failed at iteration {iteration}: {source}")]
    AtIteration {
        stage: &'static str,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_iteration(self, stage: &'static str, iteration: usize) -> Self {
        Error::AtIteration {
            stage,
            iteration,
            source: Box::new(self),
        }
    }

    /// True for configuration/validation problems (as opposed to numerical failures).
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}
