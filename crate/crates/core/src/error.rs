use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    Asymmetric(f64),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("linear program is infeasible")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("simplex iteration limit of {0} reached")]
    IterationLimit(usize),

    #[error("outer linearization did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("residual variance at time {time} is degenerate ({variance:.3e})")]
    DegenerateVariance { time: usize, variance: f64 },

    #[error("projection direction is degenerate (v'Ge_j = {0:.3e}); lambda' too large?")]
    DegenerateDirection(f64),

    #[error("no sign change of the projected estimating equation in [{low}, {high}]")]
    NoRoot { low: f64, high: f64 },

    #[error("variance estimate is not positive ({0:.3e})")]
    NonPositiveVariance(f64),

    #[error("penalty grid is degenerate: lambda_max is zero")]
    DegenerateGrid,

    #[error("cannot split {clusters} clusters into {folds} folds")]
    FoldTooSmall { folds: usize, clusters: usize },

    #[error("every lambda' in the grid was infeasible: {0}")]
    AllInfeasible(String),

    #[error("support of size {support} too large for {observations} observations")]
    SupportTooLarge { support: usize, observations: usize },

    #[error("link mismatch: {0}")]
    LinkMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    /// Variant name, stable across releases; used as a report flag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NotPositiveDefinite { .. } => "NotPositiveDefinite",
            Error::Asymmetric(_) => "Asymmetric",
            Error::NonFinite(_) => "NonFinite",
            Error::Infeasible => "Infeasible",
            Error::Unbounded => "Unbounded",
            Error::IterationLimit(_) => "IterationLimit",
            Error::NoConvergence(_) => "NoConvergence",
            Error::DegenerateVariance { .. } => "DegenerateVariance",
            Error::DegenerateDirection(_) => "DegenerateDirection",
            Error::NoRoot { .. } => "NoRoot",
            Error::NonPositiveVariance(_) => "NonPositiveVariance",
            Error::DegenerateGrid => "DegenerateGrid",
            Error::FoldTooSmall { .. } => "FoldTooSmall",
            Error::AllInfeasible(_) => "AllInfeasible",
            Error::SupportTooLarge { .. } => "SupportTooLarge",
            Error::LinkMismatch(_) => "LinkMismatch",
            Error::InvalidInput(_) => "InvalidInput",
        }
    }
}
