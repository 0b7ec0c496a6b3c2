use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid shape {got:?} does not match configuration {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    /// No transmitted bin carries information about the requested parameter.
    #[error("Cramer-Rao bound for {0} is infinite: no informative bins")]
    InfiniteCrb(&'static str),

    #[error("estimation impossible: {0}")]
    EstimationImpossible(String),

    #[error("convex subproblem infeasible: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}
