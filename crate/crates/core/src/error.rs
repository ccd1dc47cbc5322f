use thiserror::Error;

/// Errors produced by model construction, simulation and inference.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violated a precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A numerical operation failed (non-finite state, factorisation failure).
    /// `t` carries the integration time at which the failure occurred, when known.
    #[error("numerical failure{}: {message}", match t { Some(t) => format!(" at t = {t}"), None => String::new() })]
    Numerical { t: Option<f64>, message: String },

    /// All particle weights are exactly zero: the filter has collapsed.
    #[error("degenerate particle weights (all zero)")]
    DegenerateWeights,
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical { t: None, message: msg.into() }
    }

    pub fn numerical_at(t: f64, msg: impl Into<String>) -> Self {
        Error::Numerical { t: Some(t), message: msg.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
