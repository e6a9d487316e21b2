use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {what} (expected {expected}, got {actual})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("unknown builtin game `{0}`")]
    UnknownGame(String),

    #[error("unknown player id `{0}`")]
    UnknownPlayer(String),

    #[error("game is not two-player zero-sum")]
    NotZeroSum,

    #[error("temperature and regularization are both zero and argmax fallback is disabled")]
    DegenerateTemperature,

    #[error("learner {player} observed out of order at iteration {iteration}")]
    ObserveOutOfOrder { player: usize, iteration: u64 },

    #[error("no iterations completed")]
    NoIterations,

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("non-finite value encountered at state {state}")]
    NonFinite { state: usize },

    #[error("at state {state}: {source}")]
    AtState {
        state: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("validation failed for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn at_state(self, state: usize) -> Self {
        Error::AtState {
            state,
            source: Box::new(self),
        }
    }

    /// Process exit code used by the experiment runner: 2 validation, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonConvergence { .. } | Error::NonFinite { .. } => 3,
            Error::AtState { source, .. } => source.exit_code(),
            Error::Io(_) => 4,
            Error::Csv(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => 4,
            Error::Json(e) if e.is_io() => 4,
            _ => 2,
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            actual,
        })
    }
}
