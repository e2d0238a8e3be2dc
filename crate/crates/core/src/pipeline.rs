//! End-to-end fitting: standardize, decompose once, solve every target,
//! map back to the raw scale.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::data::{destandardize, standardize, Dataset, FitResult, Method, StandardizedDataset};
use crate::decomposition::{compact_svd, rotate, RotatedProblem};
use crate::em::{em_iterate, EmConfig, EmRun};
use crate::error::{Result, RidgeError};
use crate::loocv::{fixed_grid, glmnet_grid, loocv_select, LambdaGrid, LoocvSelection};
use crate::parallel::{map_ordered, Execution};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub method: Method,
    pub grid_size: usize,
    pub em: EmConfig,
    /// Put glmnet-grid penalties on the `‖y − Xβ‖² + λ‖β‖²` scale.
    pub lambda_rescale: bool,
    /// Parallelism over targets and grid candidates.
    pub exec: Execution,
}

impl FitOptions {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            grid_size: 100,
            em: EmConfig::default(),
            lambda_rescale: true,
            exec: Execution::Sequential,
        }
    }
}

/// Standardized data and its rotated problem, shared by all methods.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub standardized: StandardizedDataset,
    pub problem: RotatedProblem,
}

pub fn prepare(d: &Dataset) -> Result<Prepared> {
    let standardized = standardize(d)?;
    let svd = compact_svd(&standardized.x)?;
    let problem = rotate(svd, &standardized.y)?;
    Ok(Prepared {
        standardized,
        problem,
    })
}

enum TargetSolution {
    Em(EmRun),
    Loocv(LambdaGrid, LoocvSelection),
}

impl TargetSolution {
    fn alpha(&self) -> &DVector<f64> {
        match self {
            TargetSolution::Em(run) => &run.alpha,
            TargetSolution::Loocv(_, sel) => &sel.alpha,
        }
    }
}

impl Prepared {
    /// Fits every target; the returned duration covers only the per-method
    /// main loops (EM iterations, or grid construction plus PRESS
    /// evaluation), summed over targets.
    pub fn solve(&self, opts: &FitOptions) -> Result<(FitResult, Duration)> {
        let targets: Vec<usize> = (0..self.problem.q()).collect();
        let solved = map_ordered(&targets, opts.exec, |&t| {
            let start = Instant::now();
            let sol = self.solve_target(t, opts);
            sol.map(|s| (s, start.elapsed()))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let main_loop = solved.iter().map(|(_, d)| *d).sum();

        let r = self.problem.rank();
        let q = targets.len();
        let alphas = DMatrix::from_fn(r, q, |j, t| solved[t].0.alpha()[j]);
        let beta_std = &self.problem.v * alphas;
        let (beta_raw, intercepts) = destandardize(&beta_std, &self.standardized)?;

        let mut fit = FitResult {
            method: opts.method,
            beta_raw,
            intercepts,
            lambda: Vec::with_capacity(q),
            tau2: None,
            sigma2: None,
            iterations: None,
            converged: None,
            degenerate_targets: Vec::new(),
            grids: None,
            cve_curves: None,
        };
        match opts.method {
            Method::Em => {
                let (mut tau2, mut sigma2, mut iters, mut conv) = (vec![], vec![], vec![], vec![]);
                for (t, (sol, _)) in solved.iter().enumerate() {
                    let TargetSolution::Em(run) = sol else {
                        unreachable!()
                    };
                    fit.lambda.push(if run.degenerate {
                        0.0
                    } else {
                        1.0 / run.state.tau2
                    });
                    tau2.push(run.state.tau2);
                    sigma2.push(run.state.sigma2);
                    iters.push(run.state.iteration);
                    conv.push(run.converged);
                    if run.degenerate {
                        fit.degenerate_targets.push(t);
                    }
                }
                fit.tau2 = Some(tau2);
                fit.sigma2 = Some(sigma2);
                fit.iterations = Some(iters);
                fit.converged = Some(conv);
            }
            Method::LoocvFixed | Method::LoocvGlmnet => {
                let (mut grids, mut curves) = (vec![], vec![]);
                for (sol, _) in solved {
                    let TargetSolution::Loocv(grid, sel) = sol else {
                        unreachable!()
                    };
                    fit.lambda.push(sel.lambda_star);
                    grids.push(grid.values);
                    curves.push(sel.cve);
                }
                fit.grids = Some(grids);
                fit.cve_curves = Some(curves);
            }
        }
        Ok((fit, main_loop))
    }

    fn solve_target(&self, t: usize, opts: &FitOptions) -> Result<TargetSolution> {
        let rp = &self.problem;
        let tag = |e: RidgeError| match e {
            RidgeError::ZeroResponse => RidgeError::ConstantTarget { target: t },
            other => other,
        };
        match opts.method {
            Method::Em => em_iterate(rp, &opts.em, t).map(TargetSolution::Em),
            Method::LoocvFixed | Method::LoocvGlmnet => {
                let y = self.standardized.y.column(t).into_owned();
                let grid = if opts.method == Method::LoocvFixed {
                    fixed_grid(opts.grid_size)?
                } else {
                    glmnet_grid(
                        &self.standardized.x,
                        &y,
                        opts.grid_size,
                        opts.lambda_rescale,
                    )
                    .map_err(tag)?
                };
                let sel = loocv_select(rp, &y, &grid, opts.exec)?;
                Ok(TargetSolution::Loocv(grid, sel))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PhaseTimings {
    pub preprocess: Duration,
    pub main_loop: Duration,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub fit: FitResult,
    pub prepared: Prepared,
    pub timings: PhaseTimings,
}

/// Standardize, decompose, solve and destandardize in one call.
pub fn fit_dataset(d: &Dataset, opts: &FitOptions) -> Result<FitOutcome> {
    let start = Instant::now();
    let prepared = prepare(d)?;
    let preprocess = start.elapsed();
    let (fit, main_loop) = prepared.solve(opts)?;
    Ok(FitOutcome {
        fit,
        prepared,
        timings: PhaseTimings {
            preprocess,
            main_loop,
        },
    })
}
