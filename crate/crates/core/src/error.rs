use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tail has {found} usable order statistics, at least 2 are required")]
    InsufficientTail { found: usize },

    #[error("tail threshold {value} is not strictly positive")]
    NonPositiveTail { value: f64 },

    #[error("non-finite value at position {index}")]
    NonFinite { index: usize },

    #[error("no radius reaches the threshold {threshold}")]
    NoExceedances { threshold: f64 },

    #[error("angular measure is not balanced: {sum_name} = {value}")]
    UnbalancedMeasure { sum_name: &'static str, value: f64 },

    #[error("self extremal dependence measure must be positive")]
    DegenerateSelfEdm,

    #[error("observed statistic is undefined")]
    DegenerateObservation,

    #[error("sample variance is zero")]
    ZeroVariance,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("value {value} lies on the boundary of the unit interval")]
    BoundaryValue { value: f64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("not enough observations: need {needed}, have {have}")]
    InsufficientData { needed: usize, have: usize },

    #[error("operation produced an empty result")]
    EmptyResult,

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("timestamps are not strictly increasing at line {line}")]
    NonMonotoneTimestamps { line: u64 },

    #[error("duplicate cell for asset {asset} at {timestamp} (line {line})")]
    DuplicateCell { asset: String, timestamp: String, line: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable identifier used in machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InsufficientTail { .. } => "insufficient_tail",
            Error::NonPositiveTail { .. } => "non_positive_tail",
            Error::NonFinite { .. } => "non_finite",
            Error::NoExceedances { .. } => "no_exceedances",
            Error::UnbalancedMeasure { .. } => "unbalanced_measure",
            Error::DegenerateSelfEdm => "degenerate_self_edm",
            Error::DegenerateObservation => "degenerate_observation",
            Error::ZeroVariance => "zero_variance",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::BoundaryValue { .. } => "boundary_value",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::InsufficientData { .. } => "insufficient_data",
            Error::EmptyResult => "empty_result",
            Error::Parse { .. } => "parse_error",
            Error::NonMonotoneTimestamps { .. } => "non_monotone_timestamps",
            Error::DuplicateCell { .. } => "duplicate_cell",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub(crate) fn check_probability(name: &str, q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must lie in (0, 1), got {q}")))
    }
}

pub(crate) fn check_same_len(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() == y.len() {
        Ok(())
    } else {
        Err(Error::LengthMismatch { left: x.len(), right: y.len() })
    }
}
