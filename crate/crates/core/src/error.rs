use thiserror::Error;

/// Errors produced by the scheduling library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested charge state cannot be reached in finite time.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// A scenario or tunnel failed structural validation.
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    /// No candidate schedule survived the feasibility filter.
    #[error("solver failure: {0}")]
    SolverFailure(Box<crate::offline_scheduler::SolverDiagnostics>),

    /// Scenario generation exhausted its retry budget.
    #[error(
        "scenario generation failed after {attempts} attempts (seed {seed}, run {run}): {reason}"
    )]
    Generation {
        seed: u64,
        run: u64,
        attempts: usize,
        reason: String,
    },

    /// The brute-force grid would exceed its evaluation budget.
    #[error("oracle grid needs {evaluations} evaluations, budget is {budget}")]
    GridTooLarge { evaluations: u128, budget: u128 },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
