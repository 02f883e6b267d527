use thiserror::Error;

/// Errors produced anywhere in the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported complex dimension {0} (only 1 and 2 are supported)")]
    UnsupportedDimension(usize),

    #[error("domain radius must be positive, got {0}")]
    InvalidRadius(f64),

    #[error("resolution {got} is too small (minimum {min})")]
    ResolutionTooSmall { got: usize, min: usize },

    #[error("estimated cell count {estimated} exceeds the memory cap of {cap} cells")]
    MemoryBudget { estimated: usize, cap: usize },

    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("evaluation domain error: {0}")]
    EvalDomain(String),

    #[error("unbound parameter `{0}` in model expression")]
    UnboundParameter(String),

    #[error("{count} singular cells exceed the pole limit of {limit}")]
    TooManyPoles { count: usize, limit: usize },

    #[error("field is not plurisubharmonic: max violation {max_violation:e} > tolerance {tolerance:e}")]
    NotPsh { max_violation: f64, tolerance: f64 },

    #[error("no convergence after {sweeps} sweeps (last change {residual:e})")]
    NonConvergence { sweeps: usize, residual: f64 },

    #[error("model is outside the closed-form family: {0}")]
    OutsideFamily(String),

    #[error("operands live on different grids")]
    GridMismatch,

    #[error("grid too coarse: {0}")]
    TooCoarse(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("decay schedule unsatisfiable: only {achieved} step(s) achievable, {required} required")]
    ScheduleUnsatisfiable { achieved: usize, required: usize },

    #[error("validation error at `{path}`: {message}")]
    Validation { path: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by the command-line exit-code contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Hypothesis,
    NonConvergence,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Hypothesis(_) | Error::NotPsh { .. } | Error::ScheduleUnsatisfiable { .. } => {
                ErrorClass::Hypothesis
            }
            Error::NonConvergence { .. } => ErrorClass::NonConvergence,
            Error::Io(_) => ErrorClass::Io,
            _ => ErrorClass::Validation,
        }
    }
}
