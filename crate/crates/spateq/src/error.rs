use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("market residual requested for a perfectly elastic city (eta = inf)")]
    EtaInfinite,
    #[error("weight matrix is numerically singular (condition number {0:.3e})")]
    SingularWeights(f64),
    #[error("no convergent with denominator <= {max_den} approximates {gamma} within {eps:e}")]
    ApproximationInfeasible { gamma: f64, eps: f64, max_den: u64 },
    #[error("path budget exceeded: {needed} paths requested, budget {budget}")]
    PathBudgetExceeded { needed: u128, budget: u128 },
    #[error("expansion order {0} exceeds 20; factorial coefficients lose precision")]
    OverflowRisk(usize),
    #[error("start point does not satisfy the homotopy (residual {0:.3e})")]
    BadStart(f64),
    #[error("step size fell below minimum at t = {t}")]
    StepFailure { t: f64 },
    #[error("iteration did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("point is not singular (smallest singular value {0:.3e})")]
    NotSingular(f64),
    #[error("no admissible branch at the singular point")]
    NoBranches,
    #[error("path hit a singular point at t = {t}")]
    Singular { t: f64 },
    #[error("schema error at row {row}, column {column}: {msg}")]
    Schema {
        row: usize,
        column: String,
        msg: String,
    },
    #[error("hierarchy error: {0}")]
    Hierarchy(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
