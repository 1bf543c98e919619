use thiserror::Error;

/// Errors raised by the inference library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value from {family} at t = {t}")]
    Evaluation { family: String, t: f64 },

    #[error("noise variance {value} below floor {floor} at t = {t} (assumption A2: inf sigma^2 > 0)")]
    NoiseFloorViolation { value: f64, floor: f64, t: f64 },

    #[error("invalid time grid: {0}")]
    Grid(String),

    #[error("quadrature did not converge on interval {interval} (estimate {estimate}, error {error})")]
    Quadrature {
        interval: usize,
        estimate: f64,
        error: f64,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parameter outside the parameter space: {0}")]
    OutOfSpace(String),

    #[error("argument outside its domain: {0}")]
    Domain(String),

    #[error("{block} information block is singular (min eigenvalue {min_eigenvalue:e} below floor {floor:e})")]
    SingularInformation {
        block: &'static str,
        min_eigenvalue: f64,
        floor: f64,
    },

    #[error("model is not {period}-periodic: deviation {deviation:e} at t = {t}")]
    Periodicity { period: f64, t: f64, deviation: f64 },

    #[error("design matrix is singular")]
    SingularDesign,

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("posterior normalizing integral underflowed after anchoring")]
    DegeneratePosterior,

    #[error("dimension guard: parameter dimension {dim} exceeds {max} for tensor quadrature")]
    DimensionGuard { dim: usize, max: usize },

    #[error("config key '{key}': {message}")]
    Config { key: String, message: String },

    #[error("invalid specification: {0}")]
    Invalid(String),

    #[error("unsupported for this model: {0}")]
    Unsupported(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
