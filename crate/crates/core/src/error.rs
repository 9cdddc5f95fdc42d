use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the law or distribution.
    #[error("domain error: {0}")]
    Domain(String),

    /// The caller supplied an inconsistent combination of arguments.
    #[error("contract violation: {0}")]
    Contract(String),

    /// The fixed-point iteration ran out of steps without converging or
    /// settling into a two-cycle. The iterates are kept for inspection.
    #[error("fixed-point iteration did not settle after {iterations} steps")]
    NonConvergence { iterations: usize, trace: Vec<f64> },

    #[error("state space of {states} states exceeds the limit of {limit}")]
    StateSpaceTooLarge { states: usize, limit: usize },

    #[error("Markov chain is reducible: state {state} has no path back to lower states")]
    Reducible { state: usize },
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
