use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("reversed integration bounds: lo={lo} > hi={hi}")]
    ReversedBounds { lo: f64, hi: f64 },

    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("arity violation: {0}")]
    Arity(String),

    #[error("evaluation domain error: {0}")]
    EvalDomain(String),

    #[error("infeasible trajectory: {0}")]
    Infeasible(String),

    #[error("degenerate problem: {0}")]
    Degenerate(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("grid search budget exceeded: {combinations} combinations > {budget}")]
    BudgetExceeded { combinations: u128, budget: u64 },

    #[error("invalid finite-difference step {0}")]
    InvalidStep(f64),

    #[error("refinement ladder too short: {0} entries, need at least 3")]
    LadderTooShort(usize),

    #[error("invalid configuration: {0}")]
    Config(String),
}
