//! Empirical-Bayes ridge regression fitted by expectation maximization.
//!
//! The model is `y | β, σ² ~ N(Xβ, σ² I)`, `β | τ², σ² ~ N(0, τ² σ² I)`, with
//! a `1/σ²` prior on the noise variance and a standard half-Cauchy prior on
//! `τ`. Given the rotated problem, one EM iteration costs `O(r)`:
//!
//! * the conditional posterior mean is the ridge solution at `λ = 1/τ²`;
//! * the expected sum of squared errors (ESS) and expected squared norm
//!   (ESN) reduce to sums over the singular values;
//! * the M-step has a closed form.

use nalgebra::DVector;

use crate::decomposition::{recover_beta, rotated_ridge_solution_into, RotatedProblem};
use crate::error::{Result, RidgeError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmConfig {
    pub tol: f64,
    pub max_iterations: usize,
    pub tau2_init: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iterations: 100_000,
            tau2_init: 1.0,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(RidgeError::InvalidParameter(format!(
                "EM tolerance must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iterations == 0 {
            return Err(RidgeError::InvalidParameter(
                "EM needs at least one iteration".into(),
            ));
        }
        if !(self.tau2_init > 0.0 && self.tau2_init.is_finite()) {
            return Err(RidgeError::InvalidParameter(format!(
                "initial tau2 must be positive, got {}",
                self.tau2_init
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmState {
    pub tau2: f64,
    pub sigma2: f64,
    /// RSS of the E-step that produced this state (infinite before the first).
    pub rss: f64,
    pub iteration: usize,
}

/// E-step sufficient statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EStats {
    pub ess: f64,
    pub esn: f64,
    pub rss: f64,
}

/// Converged (or exhausted) EM output for one target.
#[derive(Clone, Debug)]
pub struct EmFit {
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
    pub tau2: f64,
    pub sigma2: f64,
    /// `1/τ²`; zero for a degenerate fit.
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    pub delta_final: f64,
    /// ESS collapsed to zero; `beta` is then the minimum-norm least-squares
    /// solution.
    pub degenerate: bool,
    /// Smallest τ² visited during the iterations.
    pub min_tau2: f64,
}

/// Main-loop output before mapping back through `V`.
#[derive(Clone, Debug)]
pub struct EmRun {
    pub alpha: DVector<f64>,
    pub state: EmState,
    pub converged: bool,
    pub degenerate: bool,
    pub delta_final: f64,
    pub min_tau2: f64,
}

impl EmRun {
    pub fn into_fit(self, rp: &RotatedProblem) -> Result<EmFit> {
        let beta = recover_beta(&rp.v, &self.alpha)?;
        let lambda = if self.degenerate {
            0.0
        } else {
            1.0 / self.state.tau2
        };
        Ok(EmFit {
            alpha: self.alpha,
            beta,
            tau2: self.state.tau2,
            sigma2: self.state.sigma2,
            lambda,
            iterations: self.state.iteration,
            converged: self.converged,
            delta_final: self.delta_final,
            degenerate: self.degenerate,
            min_tau2: self.min_tau2,
        })
    }
}

fn check_variances(tau2: f64, sigma2: f64) -> Result<()> {
    if !(tau2 > 0.0) || !(sigma2 >= 0.0) {
        return Err(RidgeError::InvalidParameter(format!(
            "need tau2 > 0 and sigma2 >= 0, got tau2 = {tau2}, sigma2 = {sigma2}"
        )));
    }
    Ok(())
}

fn check_alpha(rp: &RotatedProblem, alpha: &[f64]) -> Result<()> {
    if alpha.len() != rp.rank() {
        return Err(RidgeError::DimensionMismatch {
            context: "rotated coefficients",
            expected: rp.rank(),
            actual: alpha.len(),
        });
    }
    Ok(())
}

/// `ESN = ‖α‖² + σ² tr(A_τ⁻¹)`, where the trace counts `τ²` for each of the
/// `p − r` directions outside the row space of the design.
pub fn expected_squared_norm(
    rp: &RotatedProblem,
    alpha: &[f64],
    tau2: f64,
    sigma2: f64,
) -> Result<f64> {
    check_variances(tau2, sigma2)?;
    check_alpha(rp, alpha)?;
    let inv_tau2 = 1.0 / tau2;
    let norm: f64 = alpha.iter().map(|a| a * a).sum();
    let trace: f64 = rp.s2.iter().map(|s2| 1.0 / (s2 + inv_tau2)).sum::<f64>()
        + tau2 * rp.n_dropped_directions() as f64;
    Ok(norm + sigma2 * trace)
}

/// Returns `(ESS, RSS)` with `ESS = RSS + σ² Σ s_j² / (s_j² + τ⁻²)`.
///
/// The residual sum of squares `‖y‖² − 2αᵀc + ‖s ⊙ α‖²` is evaluated as
/// `Σ (Uᵀy − s ⊙ α)_j² + (‖y‖² − ‖Uᵀy‖²)`, which is the same quantity without
/// the cancellation between the first two terms.
pub fn expected_sse(
    rp: &RotatedProblem,
    alpha: &[f64],
    tau2: f64,
    sigma2: f64,
    t: usize,
) -> Result<(f64, f64)> {
    check_variances(tau2, sigma2)?;
    check_alpha(rp, alpha)?;
    rp.check_target(t)?;
    let mut out_of_span = rp.out_of_span[t];
    if out_of_span < 0.0 {
        if out_of_span < -1e-10 * rp.y_sq_norms[t] {
            return Err(RidgeError::NegativeRss(out_of_span));
        }
        out_of_span = 0.0;
    }
    let in_span: f64 = rp
        .uty
        .column(t)
        .iter()
        .zip(rp.s.iter())
        .zip(alpha)
        .map(|((z, s), a)| (z - s * a).powi(2))
        .sum();
    let rss = in_span + out_of_span;
    let inv_tau2 = 1.0 / tau2;
    let trace: f64 = rp.s2.iter().map(|s2| s2 / (s2 + inv_tau2)).sum();
    Ok((rss + sigma2 * trace, rss))
}

/// Closed-form minimizer of the expected complete negative log-posterior.
///
/// `τ̂² = ((n−1)ESN − (1+p)ESS + √g) / ((6+2p)ESS)` with
/// `g = (4n+4)ESN(3+p)ESS + ((1−n)ESN + (p+1)ESS)²`, then
/// `σ̂² = (τ̂² ESS + ESN) / ((n+p+2) τ̂²)`. When `(1+p)ESS > (n−1)ESN` the
/// numerator is rationalized to `2(n+1)ESN / (√g + (1+p)ESS − (n−1)ESN)`.
pub fn m_step(ess: f64, esn: f64, n: usize, p: usize) -> Result<(f64, f64)> {
    if !(ess > 0.0 && esn > 0.0 && ess.is_finite() && esn.is_finite()) {
        return Err(RidgeError::DegenerateStatistics { ess, esn });
    }
    let (n, p) = (n as f64, p as f64);
    let a = (n - 1.0) * esn;
    let b = (1.0 + p) * ess;
    let g = (4.0 * n + 4.0) * esn * (3.0 + p) * ess + (b - a).powi(2);
    let root = g.sqrt();
    let tau2 = if b > a {
        2.0 * (n + 1.0) * esn / (root + b - a)
    } else {
        (a - b + root) / ((6.0 + 2.0 * p) * ess)
    };
    let sigma2 = (tau2 * ess + esn) / ((n + p + 2.0) * tau2);
    if !(tau2 > 0.0 && tau2.is_finite() && sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(RidgeError::DegenerateStatistics { ess, esn });
    }
    Ok((tau2, sigma2))
}

/// Expected complete negative log-posterior, up to an additive constant.
pub fn q_function(tau2: f64, sigma2: f64, ess: f64, esn: f64, n: usize, p: usize) -> Result<f64> {
    if !(tau2 > 0.0 && sigma2 > 0.0 && ess > 0.0 && esn > 0.0) {
        return Err(RidgeError::InvalidParameter(
            "q_function needs positive arguments".into(),
        ));
    }
    let (n, p) = (n as f64, p as f64);
    Ok(0.5 * (n + p + 2.0) * sigma2.ln()
        + ess / (2.0 * sigma2)
        + 0.5 * (p + 1.0) * tau2.ln()
        + esn / (2.0 * sigma2 * tau2)
        + tau2.ln_1p())
}

/// Negative log marginal posterior of `(τ², σ²)` up to a constant, with β
/// integrated out. EM iterates never increase it.
pub fn neg_log_posterior(rp: &RotatedProblem, t: usize, tau2: f64, sigma2: f64) -> Result<f64> {
    rp.check_target(t)?;
    if !(tau2 > 0.0 && sigma2 > 0.0) {
        return Err(RidgeError::InvalidParameter(
            "neg_log_posterior needs positive variances".into(),
        ));
    }
    let mut log_det = 0.0;
    let mut explained = 0.0;
    for (s2, z) in rp.s2.iter().zip(rp.uty.column(t).iter()) {
        let d = 1.0 + tau2 * s2;
        log_det += d.ln();
        explained += z * z * tau2 * s2 / d;
    }
    let quad = rp.y_sq_norms[t] - explained;
    let n = rp.n as f64;
    Ok(0.5 * n * sigma2.ln()
        + 0.5 * log_det
        + quad / (2.0 * sigma2)
        + sigma2.ln()
        + 0.5 * tau2.ln()
        + tau2.ln_1p())
}

/// One EM iteration from `state`: posterior mean at `λ = 1/τ²`, E-step with
/// the current `σ²`, then the closed-form M-step. `alpha` is scratch space
/// of length `r` and holds the posterior mean afterwards.
pub fn em_step(
    rp: &RotatedProblem,
    t: usize,
    state: &EmState,
    alpha: &mut [f64],
) -> Result<(EmState, EStats)> {
    rotated_ridge_solution_into(rp, 1.0 / state.tau2, t, alpha)?;
    let esn = expected_squared_norm(rp, alpha, state.tau2, state.sigma2)?;
    let (ess, rss) = expected_sse(rp, alpha, state.tau2, state.sigma2, t)?;
    let (tau2, sigma2) = m_step(ess, esn, rp.n, rp.p)?;
    Ok((
        EmState {
            tau2,
            sigma2,
            rss,
            iteration: state.iteration + 1,
        },
        EStats { ess, esn, rss },
    ))
}

/// Initial state: `τ² = tau2_init` and `σ²` the (biased) sample variance of
/// the target.
pub fn initial_state(rp: &RotatedProblem, cfg: &EmConfig, t: usize) -> Result<EmState> {
    cfg.validate()?;
    rp.check_target(t)?;
    if rp.n < 2 {
        return Err(RidgeError::TooFewRows {
            needed: 2,
            actual: rp.n,
        });
    }
    let sigma2 = rp.y_variances[t];
    if !(sigma2 > 0.0) {
        return Err(RidgeError::ConstantTarget { target: t });
    }
    Ok(EmState {
        tau2: cfg.tau2_init,
        sigma2,
        rss: f64::INFINITY,
        iteration: 0,
    })
}

/// Runs EM to convergence without forming β.
///
/// Stops when `|RSS_old − RSS| / (1 + |RSS|) < tol` or after
/// `max_iterations`. If the E-step statistics collapse to zero the
/// minimum-norm least-squares coefficients are returned with
/// `degenerate = true`.
pub fn em_iterate(rp: &RotatedProblem, cfg: &EmConfig, t: usize) -> Result<EmRun> {
    let mut state = initial_state(rp, cfg, t)?;
    let mut alpha = vec![0.0; rp.rank()];
    let mut min_tau2 = state.tau2;
    let mut delta = f64::INFINITY;
    let mut converged = false;

    while state.iteration < cfg.max_iterations {
        let rss_old = state.rss;
        match em_step(rp, t, &state, &mut alpha) {
            Ok((next, _)) => state = next,
            Err(RidgeError::DegenerateStatistics { .. }) => {
                return Ok(degenerate_run(rp, t, state, delta, min_tau2));
            }
            Err(e) => return Err(e),
        }
        min_tau2 = min_tau2.min(state.tau2);
        delta = (rss_old - state.rss).abs() / (1.0 + state.rss.abs());
        if delta < cfg.tol {
            converged = true;
            break;
        }
    }

    rotated_ridge_solution_into(rp, 1.0 / state.tau2, t, &mut alpha)?;
    Ok(EmRun {
        alpha: DVector::from_vec(alpha),
        state,
        converged,
        degenerate: false,
        delta_final: delta,
        min_tau2,
    })
}

fn degenerate_run(
    rp: &RotatedProblem,
    t: usize,
    state: EmState,
    delta: f64,
    min_tau2: f64,
) -> EmRun {
    let alpha = DVector::from_iterator(
        rp.rank(),
        rp.uty.column(t).iter().zip(rp.s.iter()).map(|(z, s)| z / s),
    );
    EmRun {
        alpha,
        state: EmState {
            tau2: f64::INFINITY,
            ..state
        },
        converged: false,
        degenerate: true,
        delta_final: delta,
        min_tau2,
    }
}

/// EM fit for target `t`, including `β = V α`.
pub fn em_fit(rp: &RotatedProblem, cfg: &EmConfig, t: usize) -> Result<EmFit> {
    em_iterate(rp, cfg, t)?.into_fit(rp)
}

/// Stationary `τ` update of the multiple-means model (`X = I`, `σ² = 1`)
/// given `w = Σ E[β_j²]`.
pub fn tau_update_fixed_variance(w: f64, p: usize) -> Result<f64> {
    if !(w >= 0.0) {
        return Err(RidgeError::InvalidParameter(format!(
            "w must be nonnegative, got {w}"
        )));
    }
    if p == 0 {
        return Err(RidgeError::InvalidParameter("p must be at least 1".into()));
    }
    let p = p as f64;
    let disc = (p * p + 8.0 * w + 2.0 * p * w + w * w).sqrt();
    Ok(((w - p + disc) / (2.0 * (2.0 + p))).max(0.0).sqrt())
}

/// Iterates the fixed-variance `τ` update for the multiple-means model,
/// starting from `τ = 1`, with `κ = 1/(1+τ²)` and
/// `w = (1−κ)²‖y‖² + (1−κ)p`. Returns the limiting `κ` and the number of
/// iterations used.
pub fn multiple_means_fixed_point(
    y: &[f64],
    tol: f64,
    max_iterations: usize,
) -> Result<(f64, usize)> {
    let p = y.len();
    let s: f64 = y.iter().map(|v| v * v).sum();
    let mut kappa: f64 = 0.5;
    for k in 1..=max_iterations {
        let w = (1.0 - kappa).powi(2) * s + (1.0 - kappa) * p as f64;
        let tau = tau_update_fixed_variance(w, p)?;
        let next = 1.0 / (1.0 + tau * tau);
        if (next - kappa).abs() < tol {
            return Ok((next, k));
        }
        kappa = next;
    }
    Ok((kappa, max_iterations))
}

/// Shrinkage factor `κ = min(1, (p+2)/‖y‖²)` of the multiple-means
/// estimator `(1−κ) y`.
pub fn multiple_means_kappa(y: &[f64]) -> Result<f64> {
    let s: f64 = y.iter().map(|v| v * v).sum();
    if !(s > 0.0) {
        return Err(RidgeError::InvalidParameter(
            "multiple-means shrinkage needs a nonzero observation vector".into(),
        ));
    }
    Ok(((y.len() as f64 + 2.0) / s).min(1.0))
}

pub fn multiple_means_estimate(y: &[f64]) -> Result<Vec<f64>> {
    let kappa = multiple_means_kappa(y)?;
    Ok(y.iter().map(|v| (1.0 - kappa) * v).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnimodalityDiagnostic {
    /// Smallest eigenvalue of `XᵀX / n`.
    pub gamma_n: f64,
    /// `4 / (n γ_n)`, or `None` when `γ_n = 0`.
    pub epsilon_min: Option<f64>,
    /// Whether the requested `ε` exceeds `epsilon_min`, i.e. the posterior
    /// restricted to `τ² ≥ ε` has a unique mode.
    pub unique_above_epsilon: bool,
}

/// Sufficient condition for a unique posterior mode with `τ² ≥ ε`, from the
/// squared singular values of the standardized design.
pub fn unimodality_bound(s2: &[f64], p: usize, n: usize, epsilon: f64) -> UnimodalityDiagnostic {
    let gamma_n = if s2.len() < p || n == 0 {
        0.0
    } else {
        s2.iter().copied().fold(f64::INFINITY, f64::min).max(0.0) / n as f64
    };
    let epsilon_min = (gamma_n > 0.0).then(|| 4.0 / (n as f64 * gamma_n));
    UnimodalityDiagnostic {
        gamma_n,
        epsilon_min,
        unique_above_epsilon: epsilon_min.is_some_and(|e| epsilon > e),
    }
}

/// Sample size beyond which `γ_n = c n^{−a}` guarantees a unique mode with
/// `τ² ≥ ε`: `(4/(cε))^{1/(1−a)}`.
pub fn uniqueness_sample_threshold(c: f64, decay: f64, epsilon: f64) -> Result<f64> {
    if !(c > 0.0 && epsilon > 0.0 && (0.0..1.0).contains(&decay)) {
        return Err(RidgeError::InvalidParameter(
            "need c > 0, epsilon > 0 and 0 <= decay < 1".into(),
        ));
    }
    Ok((4.0 / (c * epsilon)).powf(1.0 / (1.0 - decay)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::{compact_svd, rotate};
    use crate::oracles::{dense_em_statistics, dense_ridge_solve, numeric_m_step};
    use crate::rng::StreamRng;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn problem(x: &DMatrix<f64>, y: &[f64]) -> RotatedProblem {
        let y = DMatrix::from_column_slice(y.len(), 1, y);
        rotate(compact_svd(x).unwrap(), &y).unwrap()
    }

    fn random_problem(
        n: usize,
        p: usize,
        seed: u64,
    ) -> (DMatrix<f64>, DVector<f64>, RotatedProblem) {
        let mut rng = StreamRng::new(seed, 0, 0);
        let x = DMatrix::from_fn(n, p, |_, _| rng.normal());
        let beta = DVector::from_fn(p, |_, _| rng.normal());
        let y = &x * beta + DVector::from_fn(n, |_, _| rng.normal());
        let rp = problem(&x, y.as_slice());
        (x, y, rp)
    }

    #[test]
    fn identity_design_statistics() {
        let rp = problem(&DMatrix::identity(2, 2), &[1.0, 0.0]);
        let alpha = rotated_ridge_solution_into_vec(&rp, 1.0);
        assert_relative_eq!(alpha.as_slice(), [0.5, 0.0].as_slice(), epsilon = 1e-15);
        let esn = expected_squared_norm(&rp, &alpha, 1.0, 1.0).unwrap();
        assert_relative_eq!(esn, 1.25, epsilon = 1e-14);
        let (ess, rss) = expected_sse(&rp, &alpha, 1.0, 1.0, 0).unwrap();
        assert_relative_eq!(rss, 0.25, epsilon = 1e-14);
        assert_relative_eq!(ess, 1.25, epsilon = 1e-14);

        let esn0 = expected_squared_norm(&rp, &alpha, 1.0, 0.0).unwrap();
        assert_relative_eq!(esn0, 0.25, epsilon = 1e-15);
    }

    fn rotated_ridge_solution_into_vec(rp: &RotatedProblem, tau2: f64) -> Vec<f64> {
        let mut a = vec![0.0; rp.rank()];
        rotated_ridge_solution_into(rp, 1.0 / tau2, 0, &mut a).unwrap();
        a
    }

    #[test]
    fn dropped_directions_enter_the_trace() {
        // p = 4 with rank 1: three directions outside the row space.
        let x = DMatrix::from_row_slice(1, 4, &[1.0, 0.0, 0.0, 0.0]);
        let rp = problem(&x, &[0.0]);
        assert_eq!(rp.n_dropped_directions(), 3);
        let alpha = rotated_ridge_solution_into_vec(&rp, 2.0);
        let esn = expected_squared_norm(&rp, &alpha, 2.0, 1.0).unwrap();
        // 1/(1 + 1/2) for the kept direction plus 3 τ² = 6.
        assert_relative_eq!(esn, 2.0 / 3.0 + 6.0, epsilon = 1e-14);
        let (_, _, post) = dense_em_statistics(&x, &DVector::zeros(1), 2.0, 1.0).unwrap();
        assert_relative_eq!(post.covariance.trace(), esn, epsilon = 1e-12);
    }

    #[test]
    fn zero_target_statistics() {
        let (x, _, _) = random_problem(5, 3, 1);
        let rp = problem(&x, &[0.0; 5]);
        let alpha = rotated_ridge_solution_into_vec(&rp, 1.5);
        let (ess, rss) = expected_sse(&rp, &alpha, 1.5, 0.7, 0).unwrap();
        assert_eq!(rss, 0.0);
        let trace: f64 = rp.s2.iter().map(|s2| s2 / (s2 + 1.0 / 1.5)).sum();
        assert_relative_eq!(ess, 0.7 * trace, epsilon = 1e-14);
    }

    #[test]
    fn rss_tends_to_least_squares_residual() {
        let (x, y, rp) = random_problem(12, 4, 2);
        let ls = dense_ridge_solve(&x, &y, 0.0).unwrap();
        let ls_rss = (&y - &x * ls).norm_squared();
        let alpha = rotated_ridge_solution_into_vec(&rp, 1e12);
        let (_, rss) = expected_sse(&rp, &alpha, 1e12, 1.0, 0).unwrap();
        assert_relative_eq!(rss, ls_rss, max_relative = 1e-8);
    }

    #[test]
    fn statistic_errors() {
        let (_, _, mut rp) = random_problem(5, 3, 3);
        let alpha = vec![0.0; rp.rank()];
        assert!(expected_squared_norm(&rp, &alpha, 0.0, 1.0).is_err());
        assert!(expected_squared_norm(&rp, &alpha, 1.0, -1.0).is_err());
        assert!(expected_squared_norm(&rp, &alpha[1..], 1.0, 1.0).is_err());
        assert!(expected_sse(&rp, &alpha, 1.0, 1.0, 1).is_err());
        rp.out_of_span[0] = -1.0;
        assert!(matches!(
            expected_sse(&rp, &alpha, 1.0, 1.0, 0),
            Err(RidgeError::NegativeRss(_))
        ));
    }

    #[test]
    fn m_step_examples() {
        let (t, s) = m_step(1.25, 1.25, 2, 2).unwrap();
        assert_relative_eq!(t, 0.6, epsilon = 1e-14);
        assert_relative_eq!(s, 5.0 / 9.0, epsilon = 1e-14);
        let (t, s) = m_step(50.0, 5.0, 100, 10).unwrap();
        assert!((t - 0.8401).abs() < 1e-4, "{t}");
        assert!((s - 0.4996).abs() < 1e-4, "{s}");
        assert!(m_step(0.0, 1.0, 2, 2).is_err());
        assert!(m_step(1.0, 0.0, 2, 2).is_err());
    }

    #[test]
    fn m_step_is_stationary() {
        for &(ess, esn, n, p) in &[(1.25, 1.25, 2, 2), (50.0, 5.0, 100, 10), (3.0, 40.0, 7, 30)] {
            let (t, s) = m_step(ess, esn, n, p).unwrap();
            let q = |t: f64, s: f64| q_function(t, s, ess, esn, n, p).unwrap();
            let (ht, hs) = (1e-6 * t, 1e-6 * s);
            let dt = (q(t + ht, s) - q(t - ht, s)) / (2.0 * ht);
            let ds = (q(t, s + hs) - q(t, s - hs)) / (2.0 * hs);
            assert!(dt.abs() < 1e-8 * (1.0 + 1.0 / t), "dQ/dtau2 = {dt}");
            assert!(ds.abs() < 1e-8 * (1.0 + 1.0 / s), "dQ/dsigma2 = {ds}");
        }
    }

    #[test]
    fn m_step_beats_random_probes() {
        let (ess, esn, n, p) = (7.0, 2.5, 20, 6);
        let (t, s) = m_step(ess, esn, n, p).unwrap();
        let q_star = q_function(t, s, ess, esn, n, p).unwrap();
        let mut rng = StreamRng::new(17, 0, 0);
        for _ in 0..10_000 {
            let tp = t * (rng.normal() * 0.5).exp();
            let sp = s * (rng.normal() * 0.5).exp();
            assert!(q_star <= q_function(tp, sp, ess, esn, n, p).unwrap() + 1e-12);
        }
    }

    #[test]
    fn m_step_minimizes_over_log_grid() {
        let cases = [(1.25, 1.25, 2, 2), (50.0, 5.0, 100, 10), (0.3, 9.0, 15, 40)];
        for (ess, esn, n, p) in cases {
            let (t, s) = m_step(ess, esn, n, p).unwrap();
            let q_star = q_function(t, s, ess, esn, n, p).unwrap();
            for i in 0..200 {
                let tg = 10f64.powf(-6.0 + 12.0 * i as f64 / 199.0);
                for j in 0..200 {
                    let sg = 10f64.powf(-6.0 + 12.0 * j as f64 / 199.0);
                    assert!(q_star <= q_function(tg, sg, ess, esn, n, p).unwrap() + 1e-12);
                }
            }
        }
    }

    #[test]
    fn q_function_direct_value() {
        let q = q_function(1.0, 1.0, 2.0, 2.0, 2, 2).unwrap();
        assert_relative_eq!(q, 2.0 + 2f64.ln(), epsilon = 1e-15);
        assert!(q_function(0.0, 1.0, 1.0, 1.0, 2, 2).is_err());
        assert!(q_function(1.0, 1.0, 0.0, 0.0, 2, 2).is_err());
    }

    #[test]
    fn em_matches_dense_ridge_at_selected_penalty() {
        for (n, p, seed) in [(30, 5, 1), (10, 25, 2), (50, 50, 3)] {
            let (x, y, rp) = random_problem(n, p, seed);
            let fit = em_fit(&rp, &EmConfig::default(), 0).unwrap();
            assert!(fit.converged);
            assert_relative_eq!(fit.lambda * fit.tau2, 1.0, max_relative = 1e-12);
            let dense = dense_ridge_solve(&x, &y, fit.lambda).unwrap();
            assert!((&fit.beta - &dense).norm() <= 1e-8 * dense.norm());
        }
    }

    #[test]
    fn constant_target_is_an_error() {
        let (x, _, _) = random_problem(6, 2, 4);
        let rp = problem(&x, &[0.0; 6]);
        assert!(matches!(
            em_fit(&rp, &EmConfig::default(), 0),
            Err(RidgeError::ConstantTarget { target: 0 })
        ));
    }

    #[test]
    fn noise_free_saturated_design_degenerates() {
        // p > n and the target is reproduced exactly: σ² and ESS collapse.
        let (x, _, _) = random_problem(4, 8, 5);
        let y = &x * DVector::from_fn(8, |j, _| j as f64);
        let rp = problem(&x, y.as_slice());
        let fit = em_fit(&rp, &EmConfig::default(), 0).unwrap();
        if fit.degenerate {
            assert!(!fit.converged);
            assert_eq!(fit.lambda, 0.0);
            let resid = &y - &x * &fit.beta;
            assert!(resid.norm() < 1e-8 * y.norm());
        }
        assert!(fit.min_tau2 > 0.0);
    }

    #[test]
    fn config_validation() {
        let (_, _, rp) = random_problem(6, 2, 4);
        for cfg in [
            EmConfig {
                tol: 0.0,
                ..Default::default()
            },
            EmConfig {
                max_iterations: 0,
                ..Default::default()
            },
            EmConfig {
                tau2_init: -1.0,
                ..Default::default()
            },
        ] {
            assert!(em_fit(&rp, &cfg, 0).is_err());
        }
        let capped = em_fit(
            &rp,
            &EmConfig {
                max_iterations: 1,
                ..Default::default()
            },
            0,
        )
        .unwrap();
        assert_eq!(capped.iterations, 1);
        assert!(!capped.converged);
    }

    #[test]
    fn em_iterations_descend() {
        for (n, p, seed) in [(40, 8, 7), (12, 30, 8), (200, 20, 9)] {
            let (_, _, rp) = random_problem(n, p, seed);
            let mut state = initial_state(&rp, &EmConfig::default(), 0).unwrap();
            let mut alpha = vec![0.0; rp.rank()];
            let mut prev = neg_log_posterior(&rp, 0, state.tau2, state.sigma2).unwrap();
            for _ in 0..200 {
                let (next, stats) = em_step(&rp, 0, &state, &mut alpha).unwrap();
                // the M-step cannot increase Q for fixed E-step statistics
                let q_old =
                    q_function(state.tau2, state.sigma2, stats.ess, stats.esn, rp.n, rp.p).unwrap();
                let q_new =
                    q_function(next.tau2, next.sigma2, stats.ess, stats.esn, rp.n, rp.p).unwrap();
                assert!(q_new <= q_old + 1e-10 * (1.0 + q_old.abs()));
                let obj = neg_log_posterior(&rp, 0, next.tau2, next.sigma2).unwrap();
                assert!(obj <= prev + 1e-10 * (1.0 + prev.abs()), "{obj} > {prev}");
                prev = obj;
                state = next;
            }
        }
    }

    #[test]
    fn converged_state_is_self_consistent() {
        let (_, _, rp) = random_problem(60, 10, 11);
        let cfg = EmConfig::default();
        let run = em_iterate(&rp, &cfg, 0).unwrap();
        assert!(run.converged);
        let mut alpha = vec![0.0; rp.rank()];
        let (next, _) = em_step(&rp, 0, &run.state, &mut alpha).unwrap();
        assert!((next.tau2 - run.state.tau2).abs() < 10.0 * cfg.tol * run.state.tau2);
    }

    #[test]
    fn fixed_variance_tau_update() {
        assert_eq!(tau_update_fixed_variance(0.0, 5).unwrap(), 0.0);
        let expected = ((2.0 + 260f64.sqrt()) / 16.0).sqrt();
        assert_relative_eq!(
            tau_update_fixed_variance(8.0, 6).unwrap(),
            expected,
            epsilon = 1e-15
        );
        assert!((expected - 1.0643).abs() < 1e-4);
        assert!(tau_update_fixed_variance(-1.0, 3).is_err());
    }

    #[test]
    fn multiple_means_examples() {
        let y4 = [2.0, 2.0, 2.0, 2.0, 0.0, 0.0];
        assert_eq!(multiple_means_kappa(&y4).unwrap(), 0.5);
        assert_eq!(
            multiple_means_estimate(&y4).unwrap(),
            vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0]
        );
        assert_eq!(multiple_means_kappa(&[1.0, 1.0, 1.0]).unwrap(), 1.0);
        let y = [10.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_relative_eq!(multiple_means_kappa(&y).unwrap(), 0.1, epsilon = 1e-16);
        assert!(multiple_means_kappa(&[0.0, 0.0]).is_err());

        let (kappa, _) = multiple_means_fixed_point(&y4, 1e-15, 1_000_000).unwrap();
        assert_relative_eq!(kappa, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn minimaxity_precondition() {
        for p in 3..40usize {
            let ratio = (p as f64 + 2.0) / (p as f64 - 2.0);
            assert_eq!(ratio <= 2.0, p >= 6, "p = {p}");
        }
    }

    #[test]
    fn unimodality_examples() {
        let d = unimodality_bound(&[50.0, 70.0], 2, 100, 0.1);
        assert_eq!(d.gamma_n, 0.5);
        assert_eq!(d.epsilon_min, Some(0.08));
        assert!(d.unique_above_epsilon);
        let deficient = unimodality_bound(&[3.0, 1.0], 5, 2, 1.0);
        assert_eq!(deficient.gamma_n, 0.0);
        assert_eq!(deficient.epsilon_min, None);
        assert!(!deficient.unique_above_epsilon);
        assert_eq!(uniqueness_sample_threshold(1.0, 0.5, 0.1).unwrap(), 1600.0);
        assert!(uniqueness_sample_threshold(1.0, 1.0, 0.1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn fast_statistics_match_dense(
            n in 2usize..30, p in 1usize..30, seed in any::<u64>(),
            log_tau2 in -3.0f64..3.0, log_sigma2 in -3.0f64..3.0,
        ) {
            let (x, y, rp) = random_problem(n, p, seed);
            let (tau2, sigma2) = (log_tau2.exp(), log_sigma2.exp());
            let mut alpha = vec![0.0; rp.rank()];
            rotated_ridge_solution_into(&rp, 1.0 / tau2, 0, &mut alpha).unwrap();
            let esn = expected_squared_norm(&rp, &alpha, tau2, sigma2).unwrap();
            let (ess, _) = expected_sse(&rp, &alpha, tau2, sigma2, 0).unwrap();
            let (dess, desn, _) = dense_em_statistics(&x, &y, tau2, sigma2).unwrap();
            prop_assert!((esn - desn).abs() <= 1e-8 * desn.abs());
            prop_assert!((ess - dess).abs() <= 1e-8 * dess.abs());
        }

        #[test]
        fn closed_form_matches_numeric(
            log_ess in -5.0f64..5.0, log_esn in -5.0f64..5.0,
            n in 2usize..500, p in 1usize..500,
        ) {
            let (ess, esn) = (log_ess.exp(), log_esn.exp());
            let (t, s) = m_step(ess, esn, n, p).unwrap();
            let (tn, sn) = numeric_m_step(ess, esn, n, p).unwrap();
            prop_assert!((t - tn).abs() <= 1e-4 * tn);
            prop_assert!((s - sn).abs() <= 1e-4 * sn);
        }
    }
}
