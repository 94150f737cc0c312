use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("price {price} outside grid span [{low}, {high})")]
    PriceOutOfRange { price: f64, low: f64, high: f64 },

    #[error("row {row}: price {price} outside grid span [{low}, {high})")]
    RowOutOfRange {
        row: usize,
        price: f64,
        low: f64,
        high: f64,
    },

    #[error("bin index {index} outside grid range [{lowest}, {highest}]")]
    IndexOutOfRange {
        index: i64,
        lowest: i64,
        highest: i64,
    },

    #[error("relative index {offset} outside window of half-width {half_width}")]
    OffsetOutOfWindow { offset: i64, half_width: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty distribution: all {samples} samples fell outside the histogram")]
    EmptyDistribution { samples: usize },

    #[error(
        "stationary solve did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("utility overflow evaluating exp(-a*c) with a={a}, c={c}")]
    UtilityOverflow { a: f64, c: f64 },

    #[error("water-filling failed to bracket the multiplier (log-multiplier in [{low}, {high}], allocation sum {sum})")]
    Bracket { low: f64, high: f64, sum: f64 },

    #[error("v2 baseline utility {0} is not positive; ratio undefined")]
    NonPositiveBaseline(f64),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::PriceOutOfRange { .. } => "price-out-of-range",
            Error::RowOutOfRange { .. } => "price-out-of-range",
            Error::IndexOutOfRange { .. } => "index-out-of-range",
            Error::OffsetOutOfWindow { .. } => "offset-out-of-window",
            Error::InvalidInput(_) => "invalid-input",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::EmptyDistribution { .. } => "empty-distribution",
            Error::NonConvergence { .. } => "non-convergence",
            Error::UtilityOverflow { .. } => "utility-overflow",
            Error::Bracket { .. } => "bracket",
            Error::NonPositiveBaseline(_) => "non-positive-baseline",
        }
    }
}
