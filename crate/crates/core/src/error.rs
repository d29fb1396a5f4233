use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid factor specification: {0}")]
    InvalidFactorSpec(String),
    #[error("factor {factor} level {level} is out of range")]
    LevelOutOfRange { factor: usize, level: usize },
    #[error("invalid procedure configuration: {0}")]
    InvalidProcedure(String),
    #[error("allocation state is corrupted: {0}")]
    CorruptedState(String),
    #[error("at least two factors are required (got {0})")]
    TooFewFactors(usize),
    #[error("subset enumeration over {0} factors is refused (limit is 24)")]
    TooManyFactors(usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("equal stratum prevalence is required: {0}")]
    UnequalPrevalence(String),
    #[error("no events in the data set")]
    NoEvents,
    #[error("information matrix is singular")]
    SingularInformation,
    #[error(
        "Newton-Raphson did not converge after {iterations} iterations (gradient {gradient:e})"
    )]
    NonConvergence { iterations: usize, gradient: f64 },
    #[error("variance estimate is not positive ({0})")]
    ZeroVariance(f64),
    #[error("stratum {stratum} arm {arm} has {count} residual(s); at least 2 are needed")]
    SparseCell {
        stratum: usize,
        arm: u8,
        count: usize,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
