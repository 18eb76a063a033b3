use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input vector must not be empty")]
    EmptyInput,

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("channel estimation MSE {0} outside [0, 1]")]
    InvalidMse(f64),

    #[error("NaN in quantizer input at index {index}")]
    NanInput { index: usize },

    #[error("Lloyd-Max design for {bits} bits did not converge after {iterations} iterations")]
    NoConvergence { bits: u32, iterations: usize },

    #[error("variance must be positive (got {value} at index {index})")]
    NonPositiveVariance { index: usize, value: f64 },

    #[error("correlation coefficient {value} exceeds 1 beyond rounding tolerance")]
    CorrelationOutOfRange { value: f64 },

    #[error("subcarrier block {subcarrier} is singular or not positive definite")]
    SingularBlock { subcarrier: usize },

    #[error("performance indicator {value} violates the Cauchy-Schwarz bound")]
    DeltaOutOfRange { value: f64 },

    #[error("channel is not frequency flat (antenna {antenna} has more than one tap)")]
    NonFlatChannel { antenna: usize },

    #[error("channel training needs at least one high-resolution ADC pair")]
    NoHighResolution,

    #[error("training overhead leaves no data symbols (rho = {rho})")]
    NonPositiveRho { rho: f64 },

    #[error("channel draw {index}: {source}")]
    Draw {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    Config(#[from] toml::de::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
