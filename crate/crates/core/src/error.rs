use num_complex::Complex64;

/// Coarse classification used by front ends to map failures to exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad inputs: domain violations, malformed configuration, missing data.
    Validation,
    /// Numerical failure during an otherwise valid computation.
    Numerical,
    /// Filesystem / serialization failure.
    Io,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported Bessel order {0}: only orders 0 and 1 are implemented")]
    UnsupportedOrder(u32),

    #[error("insufficient samples: need at least {need}, got {got}")]
    InsufficientSamples { need: usize, got: usize },

    #[error("batch carries no pilot positions; phase recovery needs at least one pilot")]
    MissingPilots,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate parametrization: {0}")]
    Degenerate(String),

    #[error("gradient requested at u = 0 where the ML objective is not differentiable; evaluate at a slightly perturbed point instead")]
    SingularPoint,

    #[error("objective diverged (non-finite value); last finite iterate {last}")]
    Diverged { last: Complex64 },

    #[error("singular matrix in {context} (condition number {cond:.3e})")]
    Singular { context: String, cond: f64 },

    #[error("{cell}: {percent:.1}% of evaluations failed, above the accepted limit")]
    NonConvergedCell { cell: String, percent: f64 },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Domain(_)
            | Error::UnsupportedOrder(_)
            | Error::InsufficientSamples { .. }
            | Error::MissingPilots
            | Error::InvalidConfig(_)
            | Error::Degenerate(_) => ErrorClass::Validation,
            Error::SingularPoint
            | Error::Diverged { .. }
            | Error::Singular { .. }
            | Error::NonConvergedCell { .. } => ErrorClass::Numerical,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => ErrorClass::Io,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
