//! Command implementations behind the `fastridge` binary.

pub mod error;
pub mod model;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fastridge::bench::{run_bench, write_bench_csv, BenchConfig};
use fastridge::parallel::with_jobs;
use fastridge::simulation::{run_comparison, write_metrics_csv, ComparisonConfig, Setting};
use fastridge::{
    fit_dataset, load_csv, predict, EmConfig, Execution, FitOptions, Method, TargetSpec,
};
use nalgebra::DMatrix;

pub use error::{CliError, Stage};
use model::ModelFile;

pub const SEED_ENV: &str = "FASTRIDGE_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "fastridge",
    version,
    about = "Ridge regression with EM or fast leave-one-out penalty selection"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model on a CSV file and write it as JSON.
    Fit(FitArgs),
    /// Apply a saved model to a CSV file.
    Predict(PredictArgs),
    /// Run the synthetic comparison experiments and write per-fit metrics.
    Simulate(SimulateArgs),
    /// Time preprocessing and main loops separately on synthetic data.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Number of penalty values in a LOOCV grid.
    #[arg(long, default_value_t = 100)]
    pub grid_size: usize,
    /// EM convergence tolerance on the relative change in RSS.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// EM iteration cap.
    #[arg(long, default_value_t = 100_000)]
    pub max_iter: usize,
    /// Keep the glmnet grid on its native per-observation scale.
    #[arg(long)]
    pub no_lambda_rescale: bool,
}

impl SolverArgs {
    fn em(&self) -> Result<EmConfig, CliError> {
        let em = EmConfig {
            tol: self.tol,
            max_iterations: self.max_iter,
            ..EmConfig::default()
        };
        em.validate()
            .map_err(|e| CliError::from_ridge(Stage::Arguments, e))?;
        if self.grid_size < 2 {
            return Err(CliError::usage(
                Stage::Arguments,
                "--grid-size must be at least 2",
            ));
        }
        Ok(em)
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Input CSV with a header row; every column must be numeric.
    #[arg(long)]
    pub input: PathBuf,
    /// Target columns: comma-separated names, or `last K`.
    #[arg(long)]
    pub target: TargetSpec,
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Where to write the model JSON.
    #[arg(long)]
    pub output: PathBuf,
    /// Worker threads over targets and grid candidates.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV containing (at least) the model's feature columns by name.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Column copied unchanged to the first output column.
    #[arg(long)]
    pub id_column: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SettingKind {
    /// Sparse 0/1 covariates, swept over the noise level.
    Bernoulli,
    /// Correlated Gaussian covariates with a Wishart covariance, swept over p.
    Gaussian,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub setting: SettingKind,
    #[arg(long, value_delimiter = ',', required = true)]
    pub n_list: Vec<usize>,
    /// Covariates for the bernoulli setting.
    #[arg(long, default_value_t = 100)]
    pub p: usize,
    /// Probability of a one in the bernoulli setting.
    #[arg(long, default_value_t = 0.01)]
    pub prob: f64,
    /// Noise standard deviations (bernoulli setting).
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    pub sigma_list: Vec<f64>,
    /// Covariate counts (gaussian setting).
    #[arg(long, value_delimiter = ',')]
    pub p_list: Vec<usize>,
    /// Noise variance (gaussian setting).
    #[arg(long, default_value_t = 0.25)]
    pub noise_var: f64,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    /// Base seed; FASTRIDGE_SEED takes precedence when set.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "em,loocv-fixed,loocv-glmnet")]
    pub methods: Vec<Method>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Fill in the timing columns (otherwise they are 0 and the file is reproducible).
    #[arg(long)]
    pub record_timings: bool,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Metrics CSV; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub n_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub p_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "em,loocv-fixed,loocv-glmnet")]
    pub methods: Vec<Method>,
    #[arg(long, default_value_t = 100)]
    pub grid_size: usize,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    /// Base seed; FASTRIDGE_SEED takes precedence when set.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Minimum wall time per main-loop measurement, in milliseconds.
    #[arg(long, default_value_t = 5)]
    pub min_window_ms: u64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iter: usize,
    /// Timing CSV; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: fastridge::RidgeError| e.to_string())
}

/// `FASTRIDGE_SEED` if set, else the flag value.
pub fn effective_seed(flag: u64) -> Result<u64, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| {
            CliError::usage(
                Stage::Arguments,
                format!("{SEED_ENV}={v:?} is not an unsigned integer"),
            )
        }),
        Err(_) => Ok(flag),
    }
}

fn check_jobs(jobs: usize) -> Result<(), CliError> {
    if jobs == 0 {
        return Err(CliError::usage(
            Stage::Arguments,
            "--jobs must be at least 1",
        ));
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn write_to(
    output: Option<&Path>,
    f: impl FnOnce(&mut dyn Write) -> Result<(), CliError>,
) -> Result<(), CliError> {
    match output {
        Some(path) => {
            let mut w = create(path)?;
            f(&mut w)?;
            w.flush().map_err(|e| CliError::io(path, e))
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            f(&mut lock)
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Bench(a) => cmd_bench(&a),
    }
}

pub fn cmd_fit(a: &FitArgs) -> Result<(), CliError> {
    let em = a.solver.em()?;
    check_jobs(a.jobs)?;
    let data =
        load_csv(&a.input, &a.target).map_err(|e| CliError::from_ridge(Stage::LoadData, e))?;
    let opts = FitOptions {
        method: a.method,
        grid_size: a.solver.grid_size,
        em,
        lambda_rescale: !a.solver.no_lambda_rescale,
        exec: Execution::from_jobs(a.jobs),
    };
    let outcome = with_jobs(a.jobs, || fit_dataset(&data, &opts)).map_err(|e| {
        let stage = if e.is_solver_degeneracy() {
            Stage::Solve
        } else {
            Stage::Preprocess
        };
        CliError::from_ridge(stage, e)
    })?;
    let model = ModelFile::from_fit(
        &outcome.fit,
        &outcome.prepared.standardized,
        &data.feature_names,
        &data.target_names,
    );
    let mut w = create(&a.output)?;
    w.write_all(model.to_json().as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(&a.output, e))?;

    println!(
        "{}",
        fit_summary(
            &model,
            data.n(),
            outcome.timings.preprocess,
            outcome.timings.main_loop
        )
    );
    for &t in &outcome.fit.degenerate_targets {
        eprintln!(
            "warning: target {} degenerated; stored the minimum-norm least-squares fit (lambda = 0)",
            data.target_names[t]
        );
    }
    Ok(())
}

fn fit_summary(m: &ModelFile, n: usize, pre: Duration, main: Duration) -> String {
    let per_target: Vec<String> = (0..m.q())
        .map(|t| {
            let extra = match (&m.iterations, &m.cve_curve) {
                (Some(k), _) => format!(" k={}", k[t]),
                (None, Some(curves)) => {
                    let best = curves[t].iter().copied().fold(f64::INFINITY, f64::min);
                    format!(" cve={best:.6e}")
                }
                _ => String::new(),
            };
            format!("{}: lambda={:.6e}{}", m.target_names[t], m.lambda[t], extra)
        })
        .collect();
    format!(
        "{} n={} p={} | {} | preprocess={:.3}ms main_loop={:.3}ms",
        m.method,
        n,
        m.p(),
        per_target.join(", "),
        pre.as_secs_f64() * 1e3,
        main.as_secs_f64() * 1e3
    )
}

pub fn cmd_predict(a: &PredictArgs) -> Result<(), CliError> {
    let model = ModelFile::read(&a.model)?;
    let load_err =
        |msg: String| CliError::data(Stage::LoadData, format!("{}: {msg}", a.input.display()));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&a.input)
        .map_err(|e| load_err(e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| load_err(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let find = |name: &str| header.iter().position(|h| h == name);
    let columns = model
        .feature_names
        .iter()
        .map(|f| find(f).ok_or_else(|| load_err(format!("feature column {f:?} is missing"))))
        .collect::<Result<Vec<_>, _>>()?;
    let id_col = match &a.id_column {
        Some(id) => Some(find(id).ok_or_else(|| load_err(format!("id column {id:?} is missing")))?),
        None => None,
    };

    let mut values = Vec::new();
    let mut ids = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| load_err(e.to_string()))?;
        let line = i + 2;
        for &c in &columns {
            let cell = rec.get(c).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| {
                load_err(format!(
                    "non-numeric value {cell:?} at row {line}, column {}",
                    c + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(load_err(format!(
                    "non-finite value at row {line}, column {}",
                    c + 1
                )));
            }
            values.push(v);
        }
        if let Some(c) = id_col {
            ids.push(rec.get(c).unwrap_or("").to_string());
        }
    }
    let rows = values.len() / columns.len().max(1);
    let x = DMatrix::from_row_slice(rows, columns.len(), &values);
    let pred = predict(&model.to_fit(), &x).map_err(|e| CliError::from_ridge(Stage::Predict, e))?;

    let mut w = csv::Writer::from_writer(create(&a.output)?);
    let io = |e: csv::Error| CliError::data(Stage::Write, format!("{}: {e}", a.output.display()));
    let mut head: Vec<&str> = Vec::new();
    if let Some(id) = &a.id_column {
        head.push(id);
    }
    head.extend(model.target_names.iter().map(String::as_str));
    w.write_record(&head).map_err(io)?;
    for (i, row) in pred.row_iter().enumerate() {
        let mut rec: Vec<String> = Vec::with_capacity(head.len());
        if let Some(id) = ids.get(i) {
            rec.push(id.clone());
        }
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(&a.output, e))
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let em = a.solver.em()?;
    check_jobs(a.jobs)?;
    let seed = effective_seed(a.seed)?;
    let setting = match a.setting {
        SettingKind::Bernoulli => {
            if !a.p_list.is_empty() {
                return Err(CliError::usage(
                    Stage::Arguments,
                    "--p-list applies to the gaussian setting; use --p",
                ));
            }
            Setting::Bernoulli {
                p: a.p,
                prob: a.prob,
                sigmas: a.sigma_list.clone(),
            }
        }
        SettingKind::Gaussian => {
            if a.p_list.is_empty() {
                return Err(CliError::usage(
                    Stage::Arguments,
                    "the gaussian setting needs --p-list",
                ));
            }
            Setting::Gaussian {
                noise_var: a.noise_var,
                ps: a.p_list.clone(),
            }
        }
    };
    let mut cfg = ComparisonConfig::new(setting, a.methods.clone(), a.n_list.clone(), a.reps, seed);
    cfg.grid_size = a.solver.grid_size;
    cfg.em = em;
    cfg.lambda_rescale = !a.solver.no_lambda_rescale;
    cfg.record_timings = a.record_timings;
    cfg.jobs = a.jobs;
    let rows = run_comparison(&cfg).map_err(|e| match e {
        fastridge::RidgeError::InvalidParameter(m) => CliError::usage(Stage::Simulate, m),
        other => CliError::from_ridge(Stage::Simulate, other),
    })?;
    let failed = rows.iter().filter(|r| r.failed).count();
    if failed > 0 {
        eprintln!(
            "warning: {failed} of {} fits failed; see the failed column",
            rows.len()
        );
    }
    write_to(a.output.as_deref(), |w| {
        write_metrics_csv(&rows, w).map_err(|e| CliError::from_ridge(Stage::Write, e))
    })
}

pub fn cmd_bench(a: &BenchArgs) -> Result<(), CliError> {
    let em = EmConfig {
        tol: a.tol,
        max_iterations: a.max_iter,
        ..EmConfig::default()
    };
    em.validate()
        .map_err(|e| CliError::from_ridge(Stage::Arguments, e))?;
    if a.grid_size < 2 {
        return Err(CliError::usage(
            Stage::Arguments,
            "--grid-size must be at least 2",
        ));
    }
    let mut cfg = BenchConfig::new(
        a.methods.clone(),
        a.n_list.clone(),
        a.p_list.clone(),
        a.reps,
    );
    cfg.grid_size = a.grid_size;
    cfg.seed = effective_seed(a.seed)?;
    cfg.em = em;
    cfg.min_window = Duration::from_millis(a.min_window_ms);
    let rows = run_bench(&cfg).map_err(|e| match e {
        fastridge::RidgeError::InvalidParameter(m) => CliError::usage(Stage::Bench, m),
        other => CliError::from_ridge(Stage::Bench, other),
    })?;
    write_to(a.output.as_deref(), |w| {
        write_bench_csv(&rows, w).map_err(|e| CliError::from_ridge(Stage::Write, e))
    })
}
