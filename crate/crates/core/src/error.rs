use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("graph is not strongly connected")]
    NotStronglyConnected,

    #[error("invalid mixing matrix: {0}")]
    InvalidWeights(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("power iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("no strongly connected ER digraph found for n={n}, p={p}, seed={seed} after {attempts} attempts")]
    RetryBudgetExhausted {
        n: usize,
        p: f64,
        seed: u64,
        attempts: usize,
    },

    #[error("empty support for simplex projection")]
    EmptySupport,

    #[error("nonpositive eigenvector estimate y[{agent}][{agent}] = {value:e} at iteration {iteration}")]
    NonPositiveDiagonal {
        iteration: usize,
        agent: usize,
        value: f64,
    },

    #[error("iterates diverged at iteration {iteration}: |Theta|_F = {norm:e}")]
    Diverged { iteration: usize, norm: f64 },

    #[error("insufficient data points for fit: {0}")]
    InsufficientPoints(String),

    #[error("invalid experiment spec: {0}")]
    Validation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
