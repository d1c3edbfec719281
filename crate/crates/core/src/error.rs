use thiserror::Error;

pub type Result<T> = std::result::Result<T, PteError>;

/// Broad failure class, used by callers that map errors to exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input or configuration.
    Validation,
    /// The data were valid but an estimate could not be computed.
    Numerical,
    /// Bootstrap inference produced too few usable replicates.
    InferenceUnreliable,
}

#[derive(Debug, Error)]
pub enum PteError {
    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("empty arm {0}")]
    EmptyArm(u8),

    #[error("empty arm after complete-case filter (arm {0})")]
    EmptyArmAfterFilter(u8),

    #[error("singular design: {0}")]
    SingularDesign(String),

    #[error("undefined PTE: overall treatment effect is zero")]
    UndefinedPte,

    #[error("zero spread: all values are identical")]
    ZeroSpread,

    #[error("degenerate observation probability: {0}")]
    DegenerateProbability(String),

    #[error("near-zero observation probability {prob:e} for observed patient {index}")]
    NearZeroProbability { index: usize, prob: f64 },

    #[error("insufficient support in arm {arm}: {distinct} distinct observed surrogate value(s), need at least 2")]
    InsufficientSupport { arm: u8, distinct: usize },

    #[error("inference unreliable: {effective} of {requested} bootstrap replicates succeeded (dominant failure: {dominant})")]
    InferenceUnreliable {
        effective: usize,
        requested: usize,
        dominant: String,
    },

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PteError {
    /// Short stable tag, used to tally bootstrap and simulation failures.
    pub fn kind(&self) -> &'static str {
        match self {
            PteError::Parse { .. } => "parse",
            PteError::Validation(_) => "validation",
            PteError::EmptyArm(_) => "empty_arm",
            PteError::EmptyArmAfterFilter(_) => "empty_arm_after_filter",
            PteError::SingularDesign(_) => "singular_design",
            PteError::UndefinedPte => "undefined_pte",
            PteError::ZeroSpread => "zero_spread",
            PteError::DegenerateProbability(_) => "degenerate_probability",
            PteError::NearZeroProbability { .. } => "near_zero_probability",
            PteError::InsufficientSupport { .. } => "insufficient_support",
            PteError::InferenceUnreliable { .. } => "inference_unreliable",
            PteError::Internal(_) => "internal",
            PteError::Io(_) => "io",
            PteError::Csv(_) => "csv",
            PteError::Json(_) => "json",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            PteError::Parse { .. }
            | PteError::Validation(_)
            | PteError::EmptyArm(_)
            | PteError::EmptyArmAfterFilter(_)
            | PteError::Io(_)
            | PteError::Csv(_)
            | PteError::Json(_) => ErrorClass::Validation,
            PteError::InferenceUnreliable { .. } => ErrorClass::InferenceUnreliable,
            PteError::SingularDesign(_)
            | PteError::UndefinedPte
            | PteError::ZeroSpread
            | PteError::DegenerateProbability(_)
            | PteError::NearZeroProbability { .. }
            | PteError::InsufficientSupport { .. }
            | PteError::Internal(_) => ErrorClass::Numerical,
        }
    }
}
