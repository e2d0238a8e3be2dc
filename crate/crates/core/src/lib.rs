//! Ridge regression with automatic choice of the penalty.
//!
//! Two selection procedures share one preprocessing step, the compact SVD of
//! the standardized design computed from the smaller Gram matrix:
//!
//! * [`em`]: empirical-Bayes EM over the prior variance `τ² = 1/λ` and the
//!   noise variance, `O(r)` per iteration;
//! * [`loocv`]: leave-one-out cross-validation over a penalty grid via the
//!   PRESS statistic, `O(n r)` per candidate.
//!
//! [`pipeline`] ties standardization, decomposition and the solvers
//! together; [`simulation`] and [`bench`] provide the synthetic experiments
//! and phase timings. With the `testing` feature, [`oracles`] exposes dense
//! reference implementations used by the test suites.

// negated comparisons reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod data;
pub mod decomposition;
pub mod em;
pub mod error;
pub mod loocv;
#[cfg(any(test, feature = "testing"))]
pub mod oracles;
pub mod parallel;
pub mod pipeline;
pub mod rng;
pub mod simulation;

pub use data::{
    destandardize, load_csv, predict, r_squared, standardize, Dataset, FitResult, Method,
    StandardizedDataset, TargetSpec,
};
pub use decomposition::{
    compact_svd, compact_svd_with, recover_beta, rotate, rotated_ridge_solution, CompactSvd,
    GramRoute, RotatedProblem,
};
pub use em::{em_fit, EmConfig, EmFit};
pub use error::{Result, RidgeError};
pub use loocv::{fixed_grid, glmnet_grid, loocv_fit, press, LambdaGrid, LoocvFit};
pub use parallel::Execution;
pub use pipeline::{fit_dataset, prepare, FitOptions, FitOutcome, Prepared};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
