use thiserror::Error;

/// Errors raised by model construction, evaluation and fitting.
#[derive(Debug, Error)]
pub enum ZiplnError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A design matrix is rank deficient, so regression coefficients are not identifiable.
    #[error("model is not identifiable: {0} must have full column rank")]
    Identifiability(String),

    #[error("degenerate moments for variable {column}: {reason}")]
    DegenerateMoments { column: usize, reason: String },

    /// The variational probability is positive on a positive count, which makes the bound -inf.
    #[error("P[{row}, {col}] = {value} but Y[{row}, {col}] > 0; P must vanish on positive counts")]
    MaskViolation { row: usize, col: usize, value: f64 },

    #[error("non-finite objective or gradient at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("ELBO decreased at iteration {iteration}: {previous} -> {current}")]
    MonotonicityViolation {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    #[error("gradient ascent stalled at iteration {iteration}: no acceptable step after {halvings} halvings")]
    StalledAscent { iteration: usize, halvings: usize },

    #[error("minibatch is empty")]
    EmptyBatch,

    #[error("report error: {0}")]
    Report(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, ZiplnError>;
