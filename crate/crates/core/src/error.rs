use thiserror::Error;

use crate::ambiguity::{Divergence, Rectangularity};

#[derive(Debug, Error)]
pub enum Error {
    #[error("transition row ({0}, {1}) is not a probability vector")]
    RowNotStochastic(usize, usize),
    #[error("reward ({0}, {1}) is outside [0, 1]")]
    RewardOutOfRange(usize, usize),
    #[error("discount factor {0} is outside [0, 1)")]
    BadGamma(f64),
    #[error("initial distribution is not a probability vector")]
    BadInitialDist,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("policy row {0} is not a probability vector")]
    BadPolicy(usize),
    #[error("invalid ambiguity set: {0}")]
    InvalidSpec(String),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    MaxItersExceeded { iterations: usize, residual: f64 },
    #[error("numerical failure (residual {0:e})")]
    NumericalFailure(f64),
    #[error("non-finite Q value at ({0}, {1})")]
    NonFiniteQ(usize, usize),
    #[error("cell ({0}, {1}) has no samples")]
    UnvisitedCell(usize, usize),
    #[error("{kind} with {rect} rectangularity is not supported here")]
    UnsupportedCombination {
        kind: Divergence,
        rect: Rectangularity,
    },
    #[error("value ordering is degenerate (min gap {0:e})")]
    DegenerateOrdering(f64),
    #[error("derivative matrix is singular (condition estimate {0:e})")]
    SingularDerivative(f64),
    #[error("confidence level {0} is outside (0.5, 1)")]
    BadLevel(f64),
    #[error("missing parameter {0}")]
    MissingParameter(&'static str),
    #[error("{0} has no lower-bound expression")]
    UnsupportedKind(Divergence),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by bad input rather than numerics.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::MaxItersExceeded { .. }
                | Error::NumericalFailure(_)
                | Error::NonFiniteQ(..)
                | Error::DegenerateOrdering(_)
                | Error::SingularDerivative(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
