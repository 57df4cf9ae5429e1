use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },

    #[error("invalid histogram: {0}")]
    InvalidHistogram(String),

    #[error("total masses differ: {0} vs {1}")]
    MassMismatch(f64, f64),

    #[error("atom {0} has zero weight")]
    ZeroWeight(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("network simplex exceeded {0} pivots")]
    PivotLimit(usize),

    #[error("iteration limit {limit} reached (objective {objective})")]
    IterationLimit { limit: usize, objective: f64 },

    #[error("kernel product underflowed to zero; use the log-domain solver")]
    Underflow,

    #[error("matrix is not positive semidefinite (eigenvalue {0})")]
    NotPsd(f64),

    #[error("singular matrix")]
    Singular,

    #[error("graph is disconnected")]
    Disconnected,

    #[error("no closed-form proximal map for {0}")]
    ProxUnavailable(String),

    #[error("line search failed at step {0}")]
    LineSearch(usize),

    #[error("iterates diverged (objective is not finite)")]
    Diverged,
}
