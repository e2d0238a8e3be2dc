//! Synthetic data settings and the EM-versus-LOOCV comparison harness.
//!
//! Setting 1 draws sparse 0/1 covariates, `x_ij ~ Bernoulli(prob)`, with
//! `y = Xβ₀ + σ ε`. Setting 2 draws a covariance `Σ ~ Wishart(I_p, p)` once
//! per replication, rows `x_i ~ N(0, Σ)` and `y = Xβ₀ + √v ε`. In both,
//! `β₀ ~ N(0, I_p)`. Draw order within a stream is: design (row by row),
//! then `β₀`, then the noise.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, Method};
use crate::em::EmConfig;
use crate::error::{Result, RidgeError};
use crate::parallel::{map_ordered, with_jobs, Execution};
use crate::pipeline::{prepare, FitOptions};
use crate::rng::StreamRng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Setting1Config {
    pub n: usize,
    pub p: usize,
    pub bernoulli_prob: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Setting1Config {
    pub fn new(n: usize, sigma: f64, seed: u64) -> Self {
        Self {
            n,
            p: 100,
            bernoulli_prob: 0.01,
            sigma,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Setting2Config {
    pub n: usize,
    pub p: usize,
    pub noise_var: f64,
    pub seed: u64,
}

impl Setting2Config {
    pub fn new(n: usize, p: usize, seed: u64) -> Self {
        Self {
            n,
            p,
            noise_var: 0.25,
            seed,
        }
    }
}

/// Design, response and true coefficients of one synthetic draw.
#[derive(Clone, Debug, PartialEq)]
pub struct SimData {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub beta0: DVector<f64>,
}

fn check_dims(n: usize, p: usize) -> Result<()> {
    if n == 0 || p == 0 {
        return Err(RidgeError::InvalidParameter(
            "simulation needs n >= 1 and p >= 1".into(),
        ));
    }
    Ok(())
}

pub fn gen_bernoulli_sparse(cfg: &Setting1Config) -> Result<SimData> {
    gen_bernoulli_sparse_from(cfg, &mut StreamRng::new(cfg.seed, 0, 0))
}

pub fn gen_bernoulli_sparse_from(cfg: &Setting1Config, rng: &mut StreamRng) -> Result<SimData> {
    check_dims(cfg.n, cfg.p)?;
    if !(cfg.bernoulli_prob > 0.0 && cfg.bernoulli_prob < 1.0) {
        return Err(RidgeError::InvalidParameter(format!(
            "bernoulli probability must lie in (0, 1), got {}",
            cfg.bernoulli_prob
        )));
    }
    if !(cfg.sigma >= 0.0) {
        return Err(RidgeError::InvalidParameter(format!(
            "noise level must be nonnegative, got {}",
            cfg.sigma
        )));
    }
    let x = DMatrix::from_row_iterator(
        cfg.n,
        cfg.p,
        (0..cfg.n * cfg.p).map(|_| f64::from(u8::from(rng.bernoulli(cfg.bernoulli_prob)))),
    );
    Ok(respond(x, cfg.sigma, rng))
}

fn respond(x: DMatrix<f64>, noise_sd: f64, rng: &mut StreamRng) -> SimData {
    let beta0 = DVector::from_fn(x.ncols(), |_, _| rng.normal());
    let mut y = &x * &beta0;
    for yi in y.iter_mut() {
        *yi += noise_sd * rng.normal();
    }
    SimData { x, y, beta0 }
}

/// `Σ ~ Wishart(I_p, p)` by the Bartlett construction, returned as its
/// lower-triangular factor `A` with `Σ = A Aᵀ`: `A_ii = √χ²_{p−i}` (0-based
/// `i`) and `A_ij ~ N(0, 1)` below the diagonal, drawn row by row with the
/// off-diagonal entries before the diagonal one.
pub fn wishart_identity_factor(p: usize, rng: &mut StreamRng) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..i {
            a[(i, j)] = rng.normal();
        }
        a[(i, i)] = rng.chi_square(p - i).sqrt();
    }
    a
}

pub fn gen_gaussian_wishart(cfg: &Setting2Config) -> Result<SimData> {
    gen_gaussian_wishart_from(cfg, &mut StreamRng::new(cfg.seed, 0, 0))
}

pub fn gen_gaussian_wishart_from(cfg: &Setting2Config, rng: &mut StreamRng) -> Result<SimData> {
    check_dims(cfg.n, cfg.p)?;
    if !(cfg.noise_var > 0.0) {
        return Err(RidgeError::InvalidParameter(format!(
            "noise variance must be positive, got {}",
            cfg.noise_var
        )));
    }
    // Σ = A Aᵀ with A lower triangular, so A is already the Cholesky factor.
    let a = wishart_identity_factor(cfg.p, rng);
    let z = DMatrix::from_row_iterator(cfg.n, cfg.p, (0..cfg.n * cfg.p).map(|_| rng.normal()));
    let x = z * a.transpose();
    Ok(respond(x, cfg.noise_var.sqrt(), rng))
}

/// `‖β̂ − β₀‖² / p`.
pub fn parameter_mse(beta_hat: &[f64], beta0: &[f64]) -> Result<f64> {
    if beta_hat.len() != beta0.len() || beta0.is_empty() {
        return Err(RidgeError::DimensionMismatch {
            context: "parameter_mse",
            expected: beta0.len(),
            actual: beta_hat.len(),
        });
    }
    let ss: f64 = beta_hat
        .iter()
        .zip(beta0)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok(ss / beta0.len() as f64)
}

/// `‖β̂‖ / ‖β₀‖`; below 1 means the estimate is shrunk.
pub fn shrinkage_ratio(beta_hat: &[f64], beta0: &[f64]) -> Result<f64> {
    if beta_hat.len() != beta0.len() {
        return Err(RidgeError::DimensionMismatch {
            context: "shrinkage_ratio",
            expected: beta0.len(),
            actual: beta_hat.len(),
        });
    }
    let norm0 = beta0.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm0 == 0.0 {
        return Err(RidgeError::InvalidParameter(
            "shrinkage ratio needs nonzero true coefficients".into(),
        ));
    }
    Ok(beta_hat.iter().map(|v| v * v).sum::<f64>().sqrt() / norm0)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Setting {
    /// Setting 1, swept over the noise standard deviation.
    Bernoulli {
        p: usize,
        prob: f64,
        sigmas: Vec<f64>,
    },
    /// Setting 2, swept over the number of covariates.
    Gaussian { noise_var: f64, ps: Vec<usize> },
}

impl Setting {
    fn sweep_len(&self) -> usize {
        match self {
            Setting::Bernoulli { sigmas, .. } => sigmas.len(),
            Setting::Gaussian { ps, .. } => ps.len(),
        }
    }

    /// `(p, σ)` of sweep entry `k`.
    fn cell(&self, k: usize) -> (usize, f64) {
        match self {
            Setting::Bernoulli { p, sigmas, .. } => (*p, sigmas[k]),
            Setting::Gaussian { noise_var, ps } => (ps[k], noise_var.sqrt()),
        }
    }

    pub fn generate(&self, n: usize, k: usize, rng: &mut StreamRng) -> Result<SimData> {
        match self {
            Setting::Bernoulli { p, prob, sigmas } => {
                let cfg = Setting1Config {
                    n,
                    p: *p,
                    bernoulli_prob: *prob,
                    sigma: sigmas[k],
                    seed: 0,
                };
                gen_bernoulli_sparse_from(&cfg, rng)
            }
            Setting::Gaussian { noise_var, ps } => {
                let cfg = Setting2Config {
                    n,
                    p: ps[k],
                    noise_var: *noise_var,
                    seed: 0,
                };
                gen_gaussian_wishart_from(&cfg, rng)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonConfig {
    pub setting: Setting,
    pub methods: Vec<Method>,
    pub n_list: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub grid_size: usize,
    pub em: EmConfig,
    pub lambda_rescale: bool,
    /// Record phase timings; when off they are written as zero so that the
    /// output depends only on the inputs.
    pub record_timings: bool,
    /// Worker threads over replications (1 = sequential).
    pub jobs: usize,
}

impl ComparisonConfig {
    pub fn new(
        setting: Setting,
        methods: Vec<Method>,
        n_list: Vec<usize>,
        reps: usize,
        seed: u64,
    ) -> Self {
        Self {
            setting,
            methods,
            n_list,
            reps,
            seed,
            grid_size: 100,
            em: EmConfig::default(),
            lambda_rescale: true,
            record_timings: true,
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub method: Method,
    pub n: usize,
    pub p: usize,
    pub sigma: f64,
    pub param_mse: f64,
    pub shrinkage_ratio: f64,
    pub lambda: f64,
    /// EM iterations; `None` for LOOCV.
    pub k: Option<usize>,
    pub t_preprocess_ns: u64,
    pub t_mainloop_ns: u64,
    pub seed: u64,
    pub replication: usize,
    pub failed: bool,
}

pub const METRICS_HEADER: [&str; 12] = [
    "method",
    "n",
    "p",
    "sigma",
    "param_mse",
    "shrinkage_ratio",
    "lambda",
    "k",
    "t_preprocess_ns",
    "t_mainloop_ns",
    "seed",
    "failed",
];

/// Runs every (n, sweep value) cell for `reps` replications and fits each
/// method on the same standardized data. Solver failures become rows with
/// `failed = true`. Rows come out ordered by cell, replication, then method.
pub fn run_comparison(cfg: &ComparisonConfig) -> Result<Vec<MetricsRow>> {
    if cfg.methods.is_empty() {
        return Err(RidgeError::InvalidParameter("no methods to compare".into()));
    }
    if cfg.n_list.is_empty() || cfg.setting.sweep_len() == 0 {
        return Err(RidgeError::InvalidParameter("empty sweep".into()));
    }
    if cfg.reps == 0 {
        return Err(RidgeError::InvalidParameter(
            "need at least one replication".into(),
        ));
    }
    cfg.em.validate()?;

    let sweep = cfg.setting.sweep_len();
    let jobs: Vec<(u32, usize, usize, u32)> = cfg
        .n_list
        .iter()
        .enumerate()
        .flat_map(|(ni, &n)| (0..sweep).map(move |k| (ni, n, k)))
        .flat_map(|(ni, n, k)| {
            let cell = (ni * sweep + k) as u32;
            (0..cfg.reps as u32).map(move |rep| (cell, n, k, rep))
        })
        .collect();

    let exec = Execution::from_jobs(cfg.jobs);
    let rows = with_jobs(cfg.jobs, || {
        map_ordered(&jobs, exec, |&(cell, n, k, rep)| {
            run_replication(cfg, cell, n, k, rep)
        })
    });
    Ok(rows.into_iter().flatten().collect())
}

fn run_replication(
    cfg: &ComparisonConfig,
    cell: u32,
    n: usize,
    k: usize,
    rep: u32,
) -> Vec<MetricsRow> {
    let (p, sigma) = cfg.setting.cell(k);
    let row = |method: Method| MetricsRow {
        method,
        n,
        p,
        sigma,
        param_mse: f64::NAN,
        shrinkage_ratio: f64::NAN,
        lambda: f64::NAN,
        k: None,
        t_preprocess_ns: 0,
        t_mainloop_ns: 0,
        seed: cfg.seed,
        replication: rep as usize,
        failed: true,
    };

    let mut rng = StreamRng::new(cfg.seed, cell, rep);
    let prepared = cfg.setting.generate(n, k, &mut rng).and_then(|sim| {
        let y = DMatrix::from_column_slice(n, 1, sim.y.as_slice());
        let data = Dataset::new(sim.x, y)?;
        let start = Instant::now();
        let prepared = prepare(&data)?;
        Ok((sim.beta0, prepared, start.elapsed()))
    });
    let Ok((beta0, prepared, t_pre)) = prepared else {
        return cfg.methods.iter().map(|&m| row(m)).collect();
    };

    cfg.methods
        .iter()
        .map(|&method| {
            let opts = FitOptions {
                method,
                grid_size: cfg.grid_size,
                em: cfg.em,
                lambda_rescale: cfg.lambda_rescale,
                exec: Execution::Sequential,
            };
            let mut out = row(method);
            let Ok((fit, t_main)) = prepared.solve(&opts) else {
                return out;
            };
            let beta = fit.beta_raw.column(0);
            let (Ok(mse), Ok(shrink)) = (
                parameter_mse(beta.as_slice(), beta0.as_slice()),
                shrinkage_ratio(beta.as_slice(), beta0.as_slice()),
            ) else {
                return out;
            };
            out.param_mse = mse;
            out.shrinkage_ratio = shrink;
            out.lambda = fit.lambda[0];
            out.k = fit.iterations.as_ref().map(|it| it[0]);
            out.failed = !fit.degenerate_targets.is_empty();
            if cfg.record_timings {
                out.t_preprocess_ns = t_pre.as_nanos() as u64;
                out.t_mainloop_ns = t_main.as_nanos() as u64;
            }
            out
        })
        .collect()
}

/// Writes metrics rows as CSV with [`METRICS_HEADER`].
pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| RidgeError::Csv(e.to_string());
    w.write_record(METRICS_HEADER).map_err(io)?;
    for r in rows {
        w.write_record([
            r.method.to_string(),
            r.n.to_string(),
            r.p.to_string(),
            r.sigma.to_string(),
            r.param_mse.to_string(),
            r.shrinkage_ratio.to_string(),
            r.lambda.to_string(),
            r.k.map_or_else(String::new, |k| k.to_string()),
            r.t_preprocess_ns.to_string(),
            r.t_mainloop_ns.to_string(),
            r.seed.to_string(),
            r.failed.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| RidgeError::Csv(e.to_string()))
}
