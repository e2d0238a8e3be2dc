//! Phase timings for the complexity probes: preprocessing (standardize,
//! decompose, rotate) versus each method's main loop.

use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;

use crate::data::{Dataset, Method};
use crate::em::{em_iterate, EmConfig};
use crate::error::{Result, RidgeError};
use crate::loocv::{fixed_grid, glmnet_grid, loocv_select};
use crate::parallel::Execution;
use crate::pipeline::{prepare, Prepared};
use crate::rng::StreamRng;
use crate::simulation::{gen_gaussian_wishart_from, Setting2Config};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub methods: Vec<Method>,
    pub n_list: Vec<usize>,
    pub p_list: Vec<usize>,
    pub grid_size: usize,
    pub reps: usize,
    pub seed: u64,
    pub em: EmConfig,
    /// A main-loop measurement repeats the loop until at least this much
    /// time has passed and reports the mean.
    pub min_window: Duration,
}

impl BenchConfig {
    pub fn new(methods: Vec<Method>, n_list: Vec<usize>, p_list: Vec<usize>, reps: usize) -> Self {
        Self {
            methods,
            n_list,
            p_list,
            grid_size: 100,
            reps,
            seed: 0,
            em: EmConfig::default(),
            min_window: Duration::from_millis(5),
        }
    }
}

/// Medians over replications for one (method, n, p).
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub method: Method,
    pub n: usize,
    pub p: usize,
    pub reps: usize,
    pub grid_size: usize,
    /// Median EM iteration count; `None` for LOOCV.
    pub iterations: Option<f64>,
    pub t_preprocess_ns: f64,
    pub t_mainloop_ns: f64,
    /// Main-loop time per EM iteration or per penalty candidate.
    pub t_per_unit_ns: f64,
}

pub const BENCH_HEADER: [&str; 9] = [
    "method",
    "n",
    "p",
    "reps",
    "grid_size",
    "iterations",
    "t_preprocess_ns",
    "t_mainloop_ns",
    "t_per_unit_ns",
];

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

/// Mean duration of `f` over as many calls as fit in `window` (at least one).
fn time_repeated<T>(window: Duration, mut f: impl FnMut() -> Result<T>) -> Result<(Duration, T)> {
    let start = Instant::now();
    let mut calls = 0u32;
    loop {
        let out = f()?;
        calls += 1;
        let elapsed = start.elapsed();
        if elapsed >= window {
            return Ok((elapsed / calls, out));
        }
    }
}

struct Sample {
    preprocess: f64,
    main_loop: f64,
    per_unit: f64,
    iterations: Option<f64>,
}

fn measure(
    prepared: &Prepared,
    method: Method,
    cfg: &BenchConfig,
    preprocess: Duration,
) -> Result<Sample> {
    let rp = &prepared.problem;
    let (main, iterations, units) = match method {
        Method::Em => {
            let (d, run) = time_repeated(cfg.min_window, || em_iterate(rp, &cfg.em, 0))?;
            let k = run.state.iteration.max(1);
            (d, Some(k as f64), k)
        }
        Method::LoocvFixed | Method::LoocvGlmnet => {
            let y = prepared.standardized.y.column(0).into_owned();
            let x = &prepared.standardized.x;
            let (d, _) = time_repeated(cfg.min_window, || {
                let grid = if method == Method::LoocvFixed {
                    fixed_grid(cfg.grid_size)?
                } else {
                    glmnet_grid(x, &y, cfg.grid_size, true)?
                };
                loocv_select(rp, &y, &grid, Execution::Sequential)
            })?;
            (d, None, cfg.grid_size)
        }
    };
    let main_ns = main.as_nanos() as f64;
    Ok(Sample {
        preprocess: preprocess.as_nanos() as f64,
        main_loop: main_ns,
        per_unit: main_ns / units as f64,
        iterations,
    })
}

/// Times every method on Setting 2 data (`noise_var = 0.25`) for each
/// (n, p). Runs sequentially so timings are not disturbed by other work.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.methods.is_empty() || cfg.n_list.is_empty() || cfg.p_list.is_empty() {
        return Err(RidgeError::InvalidParameter("empty benchmark sweep".into()));
    }
    if cfg.reps == 0 {
        return Err(RidgeError::InvalidParameter(
            "need at least one replication".into(),
        ));
    }
    let mut rows = Vec::new();
    for (ni, &n) in cfg.n_list.iter().enumerate() {
        for (pi, &p) in cfg.p_list.iter().enumerate() {
            let cell = (ni * cfg.p_list.len() + pi) as u32;
            let mut samples: Vec<Vec<Sample>> = cfg.methods.iter().map(|_| Vec::new()).collect();
            for rep in 0..cfg.reps as u32 {
                let mut rng = StreamRng::new(cfg.seed, cell, rep);
                let sim =
                    gen_gaussian_wishart_from(&Setting2Config::new(n, p, cfg.seed), &mut rng)?;
                let data = Dataset::new(sim.x, DMatrix::from_column_slice(n, 1, sim.y.as_slice()))?;
                let start = Instant::now();
                let prepared = prepare(&data)?;
                let preprocess = start.elapsed();
                for (mi, &method) in cfg.methods.iter().enumerate() {
                    samples[mi].push(measure(&prepared, method, cfg, preprocess)?);
                }
            }
            for (mi, &method) in cfg.methods.iter().enumerate() {
                let s = &samples[mi];
                let col = |f: fn(&Sample) -> f64| median(&mut s.iter().map(f).collect::<Vec<_>>());
                let iterations =
                    (method == Method::Em).then(|| col(|s| s.iterations.unwrap_or(0.0)));
                rows.push(BenchRow {
                    method,
                    n,
                    p,
                    reps: cfg.reps,
                    grid_size: cfg.grid_size,
                    iterations,
                    t_preprocess_ns: col(|s| s.preprocess),
                    t_mainloop_ns: col(|s| s.main_loop),
                    t_per_unit_ns: col(|s| s.per_unit),
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| RidgeError::Csv(e.to_string());
    w.write_record(BENCH_HEADER).map_err(io)?;
    for r in rows {
        w.write_record([
            r.method.to_string(),
            r.n.to_string(),
            r.p.to_string(),
            r.reps.to_string(),
            r.grid_size.to_string(),
            r.iterations.map_or_else(String::new, |k| k.to_string()),
            format!("{:.0}", r.t_preprocess_ns),
            format!("{:.0}", r.t_mainloop_ns),
            format!("{:.1}", r.t_per_unit_ns),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| RidgeError::Csv(e.to_string()))
}
