//! Slow dense reference implementations.
//!
//! Nothing here touches the SVD path: every quantity is formed from the raw
//! design with explicit linear solves or inverses, so agreement with the fast
//! solvers is an independent check. Only meant for small problems.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, RidgeError};

const MAX_ORACLE_DIM: usize = 200;

fn guard(x: &DMatrix<f64>) {
    assert!(
        x.nrows() <= MAX_ORACLE_DIM && x.ncols() <= MAX_ORACLE_DIM,
        "reference oracles are limited to {MAX_ORACLE_DIM} rows and columns, got {:?}",
        x.shape()
    );
}

/// `(XᵀX + λI)⁻¹ Xᵀ y` by a direct solve.
///
/// For `n < p` the equivalent dual form `Xᵀ (XXᵀ + λI)⁻¹ y` is solved
/// instead, which avoids an artificially ill-conditioned p × p system when
/// λ is small.
pub fn dense_ridge_solve(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    guard(x);
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(RidgeError::DimensionMismatch {
            context: "oracle targets",
            expected: n,
            actual: y.len(),
        });
    }
    if lambda < 0.0 {
        return Err(RidgeError::InvalidParameter("negative penalty".into()));
    }
    if n >= p {
        let mut a = x.tr_mul(x);
        for j in 0..p {
            a[(j, j)] += lambda;
        }
        if lambda == 0.0 {
            let eig = a.clone().symmetric_eigen().eigenvalues;
            if eig.min() <= 1e-12 * eig.max().max(f64::MIN_POSITIVE) {
                return Err(RidgeError::InvalidParameter(
                    "unpenalized least squares needs full column rank".into(),
                ));
            }
        }
        solve_spd(a, x.tr_mul(y))
    } else {
        if lambda == 0.0 {
            return Err(RidgeError::InvalidParameter(
                "unpenalized least squares needs full column rank".into(),
            ));
        }
        let mut k = x * x.transpose();
        for i in 0..n {
            k[(i, i)] += lambda;
        }
        let dual = solve_spd(k, y.clone())?;
        Ok(x.tr_mul(&dual))
    }
}

fn solve_spd(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(&b));
    }
    a.lu()
        .solve(&b)
        .ok_or_else(|| RidgeError::InvalidParameter("singular normal equations".into()))
}

/// Normal conditional posterior of β given τ², σ².
#[derive(Clone, Debug)]
pub struct DensePosterior {
    pub beta_hat: DVector<f64>,
    /// `σ² A_τ⁻¹` with `A_τ = XᵀX + τ⁻² I`.
    pub covariance: DMatrix<f64>,
}

/// E-step statistics evaluated verbatim from the explicit inverse of `A_τ`:
/// `ESS = ‖y − Xβ̂‖² + σ² tr(XᵀX A⁻¹)` and `ESN = σ² tr(A⁻¹) + ‖β̂‖²`.
pub fn dense_em_statistics(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    tau2: f64,
    sigma2: f64,
) -> Result<(f64, f64, DensePosterior)> {
    guard(x);
    if !(tau2 > 0.0) || sigma2 < 0.0 {
        return Err(RidgeError::InvalidParameter(
            "tau2 must be positive and sigma2 nonnegative".into(),
        ));
    }
    let p = x.ncols();
    let xtx = x.tr_mul(x);
    let mut a = xtx.clone();
    for j in 0..p {
        a[(j, j)] += 1.0 / tau2;
    }
    let a_inv = a
        .try_inverse()
        .ok_or_else(|| RidgeError::InvalidParameter("A_tau is singular".into()))?;
    let beta_hat = &a_inv * x.tr_mul(y);
    let resid = y - x * &beta_hat;
    let ess = resid.norm_squared() + sigma2 * (&xtx * &a_inv).trace();
    let esn = sigma2 * a_inv.trace() + beta_hat.norm_squared();
    Ok((
        ess,
        esn,
        DensePosterior {
            beta_hat,
            covariance: a_inv * sigma2,
        },
    ))
}

/// Leave-one-out CV error by `n` explicit refits.
pub fn brute_force_loocv(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<f64> {
    guard(x);
    let n = x.nrows();
    if n < 2 {
        return Err(RidgeError::TooFewRows {
            needed: 2,
            actual: n,
        });
    }
    let mut total = 0.0;
    for i in 0..n {
        let x_minus = x.clone().remove_row(i);
        let y_minus = y.clone().remove_row(i);
        let beta = dense_ridge_solve(&x_minus, &y_minus, lambda)?;
        let pred = x.row(i).transpose().dot(&beta);
        total += (y[i] - pred).powi(2);
    }
    Ok(total / n as f64)
}

/// Minimizes the M-step objective numerically: σ² is profiled out in closed
/// form and log τ² is found by golden-section search.
pub fn numeric_m_step(ess: f64, esn: f64, n: usize, p: usize) -> Result<(f64, f64)> {
    if !(ess > 0.0 && esn > 0.0) {
        return Err(RidgeError::DegenerateStatistics { ess, esn });
    }
    let (n, p) = (n as f64, p as f64);
    let m = n + p + 2.0;
    let sigma2_of = |tau2: f64| (tau2 * ess + esn) / (m * tau2);
    let profile = |log_tau2: f64| {
        let tau2 = log_tau2.exp();
        let sigma2 = sigma2_of(tau2);
        0.5 * m * sigma2.ln()
            + ess / (2.0 * sigma2)
            + 0.5 * (p + 1.0) * log_tau2
            + esn / (2.0 * sigma2 * tau2)
            + tau2.ln_1p()
    };
    let log_tau2 = golden_section(profile, -60.0, 60.0, 1e-10);
    let tau2 = log_tau2.exp();
    Ok((tau2, sigma2_of(tau2)))
}

fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - inv_phi * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + inv_phi * (hi - lo);
            fb = f(b);
        }
    }
    0.5 * (lo + hi)
}
