use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = RidgeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum RidgeError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed csv: {0}")]
    Csv(String),
    #[error("non-numeric cell {value:?} at row {row}, column {column}")]
    NonNumeric {
        row: usize,
        column: usize,
        value: String,
    },
    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("target column {0:?} not found")]
    TargetNotFound(String),
    #[error("dataset has no rows")]
    NoRows,
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("need at least {needed} rows, got {actual}")]
    TooFewRows { needed: usize, actual: usize },
    #[error("every feature column has zero variance")]
    AllColumnsConstant,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("target {target} is constant; its variance is zero")]
    ConstantTarget { target: usize },
    #[error("leverage of observation {index} is numerically saturated (h = {leverage})")]
    SaturatedLeverage { index: usize, leverage: f64 },
    #[error("residual sum of squares is negative ({0:e}); inputs are inconsistent")]
    NegativeRss(f64),
    #[error("expected statistics are degenerate (ESS = {ess:e}, ESN = {esn:e})")]
    DegenerateStatistics { ess: f64, esn: f64 },
    #[error("target is identically zero after centering")]
    ZeroResponse,
    #[error("solver degenerated on target {target}: {reason}")]
    Degenerate { target: usize, reason: String },
}

impl RidgeError {
    /// Whether the error comes from the numerical procedures rather than
    /// from malformed or inconsistent input data.
    pub fn is_solver_degeneracy(&self) -> bool {
        matches!(
            self,
            RidgeError::ConstantTarget { .. }
                | RidgeError::ZeroResponse
                | RidgeError::SaturatedLeverage { .. }
                | RidgeError::NegativeRss(_)
                | RidgeError::DegenerateStatistics { .. }
                | RidgeError::Degenerate { .. }
        )
    }
}
