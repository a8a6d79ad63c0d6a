use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GcmError {
    #[error("matrix is rank deficient: {what} (smallest/largest singular value ratio {ratio:.3e})")]
    RankDeficient { what: String, ratio: f64 },

    #[error("matrix is not symmetric positive definite: {what}")]
    NotSpd { what: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("shape violation: {0}")]
    ShapeViolation(String),

    #[error("invalid noise specification: {0}")]
    InvalidNoise(String),

    #[error("time points are not distinct")]
    DegenerateTimes,

    #[error("too few samples: n - m = {residual_dof} < p = {p}, first-stage covariance would be singular")]
    TooFewSamples { residual_dof: usize, p: usize },

    #[error("non-finite entry in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl GcmError {
    pub(crate) fn not_spd(what: impl Into<String>) -> Self {
        GcmError::NotSpd { what: what.into() }
    }

    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            GcmError::RankDeficient { .. } => "RankDeficient",
            GcmError::NotSpd { .. } => "NotSpd",
            GcmError::DimensionMismatch(_) => "DimensionMismatch",
            GcmError::ShapeViolation(_) => "ShapeViolation",
            GcmError::InvalidNoise(_) => "InvalidNoise",
            GcmError::DegenerateTimes => "DegenerateTimes",
            GcmError::TooFewSamples { .. } => "TooFewSamples",
            GcmError::NonFinite(_) => "NonFinite",
            GcmError::InvalidConfig(_) => "InvalidConfig",
        }
    }
}

pub type Result<T> = std::result::Result<T, GcmError>;
