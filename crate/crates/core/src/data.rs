//! Datasets, standardization, prediction and evaluation metrics.

use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RidgeError};

/// Raw design matrix and targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset with generated column names (`x0, x1, ...` and `y0, ...`).
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        let feature_names = (0..x.ncols()).map(|j| format!("x{j}")).collect();
        let target_names = (0..y.ncols()).map(|t| format!("y{t}")).collect();
        Self::with_names(x, y, feature_names, target_names)
    }

    pub fn with_names(
        x: DMatrix<f64>,
        y: DMatrix<f64>,
        feature_names: Vec<String>,
        target_names: Vec<String>,
    ) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(RidgeError::NoRows);
        }
        if x.ncols() == 0 {
            return Err(RidgeError::InvalidParameter(
                "dataset needs at least one feature column".into(),
            ));
        }
        if y.ncols() == 0 {
            return Err(RidgeError::InvalidParameter(
                "dataset needs at least one target column".into(),
            ));
        }
        check_rows("targets", x.nrows(), y.nrows())?;
        check_rows("feature names", x.ncols(), feature_names.len())?;
        check_rows("target names", y.ncols(), target_names.len())?;
        for (m, offset) in [(&x, 0), (&y, x.ncols())] {
            if let Some(idx) = m.iter().position(|v| !v.is_finite()) {
                let (row, col) = (idx % m.nrows(), idx / m.nrows());
                return Err(RidgeError::NonFinite {
                    row: row + 1,
                    column: offset + col + 1,
                });
            }
        }
        Ok(Self {
            x,
            y,
            feature_names,
            target_names,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.y.ncols()
    }
}

fn check_rows(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(RidgeError::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

/// Which CSV columns hold the targets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TargetSpec {
    Names(Vec<String>),
    Last(usize),
}

impl FromStr for TargetSpec {
    type Err = RidgeError;

    /// Accepts `last K`, `last:K`, or a comma-separated list of column names.
    fn from_str(s: &str) -> Result<Self> {
        let trimmed = s.trim();
        if let Some(rest) = trimmed
            .strip_prefix("last")
            .map(|r| r.trim_start_matches([' ', ':']))
            .filter(|r| !r.is_empty() && r.chars().all(|c| c.is_ascii_digit()))
        {
            let k: usize = rest
                .parse()
                .map_err(|_| RidgeError::InvalidParameter(format!("bad target spec {s:?}")))?;
            if k == 0 {
                return Err(RidgeError::InvalidParameter(
                    "target spec must select at least one column".into(),
                ));
            }
            return Ok(TargetSpec::Last(k));
        }
        let names: Vec<String> = trimmed
            .split(',')
            .map(|n| n.trim().to_string())
            .filter(|n| !n.is_empty())
            .collect();
        if names.is_empty() {
            return Err(RidgeError::InvalidParameter(format!(
                "bad target spec {s:?}"
            )));
        }
        Ok(TargetSpec::Names(names))
    }
}

/// Reads a header row plus numeric cells into a `Dataset`.
///
/// Rows and columns in error messages are 1-based file positions, so the
/// first data row is row 2.
pub fn load_csv(path: impl AsRef<Path>, target: &TargetSpec) -> Result<Dataset> {
    let path = path.as_ref();
    let (header, rows) = read_numeric_csv(path)?;

    let target_idx: Vec<usize> = match target {
        TargetSpec::Last(k) => {
            if *k >= header.len() {
                return Err(RidgeError::InvalidParameter(format!(
                    "cannot take {k} target columns from a file with {} columns",
                    header.len()
                )));
            }
            (header.len() - k..header.len()).collect()
        }
        TargetSpec::Names(names) => names
            .iter()
            .map(|name| {
                header
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| RidgeError::TargetNotFound(name.clone()))
            })
            .collect::<Result<_>>()?,
    };
    let feature_idx: Vec<usize> = (0..header.len())
        .filter(|j| !target_idx.contains(j))
        .collect();
    if feature_idx.is_empty() {
        return Err(RidgeError::InvalidParameter(
            "no feature columns left after selecting targets".into(),
        ));
    }

    let n = rows.len();
    let x = DMatrix::from_fn(n, feature_idx.len(), |i, j| rows[i][feature_idx[j]]);
    let y = DMatrix::from_fn(n, target_idx.len(), |i, t| rows[i][target_idx[t]]);
    Dataset::with_names(
        x,
        y,
        feature_idx.iter().map(|&j| header[j].clone()).collect(),
        target_idx.iter().map(|&j| header[j].clone()).collect(),
    )
}

/// Header plus all data rows parsed as finite floats.
pub fn read_numeric_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let file = std::fs::File::open(path).map_err(|source| RidgeError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| RidgeError::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() {
        return Err(RidgeError::Csv("missing header row".into()));
    }

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| RidgeError::Csv(e.to_string()))?;
        let row = i + 2;
        let values = record
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                let v: f64 = cell.parse().map_err(|_| RidgeError::NonNumeric {
                    row,
                    column: j + 1,
                    value: cell.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(RidgeError::NonFinite { row, column: j + 1 });
                }
                Ok(v)
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(RidgeError::NoRows);
    }
    Ok((header, rows))
}

/// Standardized design (kept columns only) and centered targets, with the
/// statistics needed to map coefficients back to the raw scale.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardizedDataset {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub col_means: Vec<f64>,
    /// Sample standard deviations (denominator n - 1); 0 for dropped columns.
    pub col_sds: Vec<f64>,
    pub y_means: Vec<f64>,
    pub kept_columns: Vec<usize>,
}

impl StandardizedDataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Number of columns in the raw design.
    pub fn p_original(&self) -> usize {
        self.col_means.len()
    }

    pub fn dropped_columns(&self) -> Vec<usize> {
        (0..self.p_original())
            .filter(|j| !self.kept_columns.contains(j))
            .collect()
    }
}

/// Centers and scales every column to unit sample standard deviation and
/// centers the targets. Constant columns are dropped.
pub fn standardize(d: &Dataset) -> Result<StandardizedDataset> {
    let n = d.n();
    if n < 2 {
        return Err(RidgeError::TooFewRows {
            needed: 2,
            actual: n,
        });
    }
    let p = d.p();
    let mut col_means = vec![0.0; p];
    let mut col_sds = vec![0.0; p];
    let mut kept_columns = Vec::with_capacity(p);
    for (j, col) in d.x.column_iter().enumerate() {
        let mean = col.mean();
        col_means[j] = mean;
        let first = col[0];
        if col.iter().all(|&v| v == first) {
            continue;
        }
        let ss: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
        col_sds[j] = (ss / (n - 1) as f64).sqrt();
        kept_columns.push(j);
    }
    if kept_columns.is_empty() {
        return Err(RidgeError::AllColumnsConstant);
    }

    let x = DMatrix::from_fn(n, kept_columns.len(), |i, k| {
        let j = kept_columns[k];
        (d.x[(i, j)] - col_means[j]) / col_sds[j]
    });
    let y_means: Vec<f64> = d.y.column_iter().map(|c| c.mean()).collect();
    let y = DMatrix::from_fn(n, d.q(), |i, t| d.y[(i, t)] - y_means[t]);

    Ok(StandardizedDataset {
        x,
        y,
        col_means,
        col_sds,
        y_means,
        kept_columns,
    })
}

/// Maps coefficients fitted on the standardized design back to raw-scale
/// coefficients and intercepts.
pub fn destandardize(
    beta_std: &DMatrix<f64>,
    s: &StandardizedDataset,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_rows(
        "standardized coefficients",
        s.kept_columns.len(),
        beta_std.nrows(),
    )?;
    check_rows("coefficient targets", s.y_means.len(), beta_std.ncols())?;
    let q = beta_std.ncols();
    let mut beta_raw = DMatrix::zeros(s.p_original(), q);
    for (k, &j) in s.kept_columns.iter().enumerate() {
        for t in 0..q {
            beta_raw[(j, t)] = beta_std[(k, t)] / s.col_sds[j];
        }
    }
    let intercepts = DVector::from_fn(q, |t, _| {
        s.y_means[t]
            - beta_raw
                .column(t)
                .iter()
                .zip(&s.col_means)
                .map(|(b, m)| b * m)
                .sum::<f64>()
    });
    Ok((beta_raw, intercepts))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "em")]
    Em,
    #[serde(rename = "loocv-fixed")]
    LoocvFixed,
    #[serde(rename = "loocv-glmnet")]
    LoocvGlmnet,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Em, Method::LoocvFixed, Method::LoocvGlmnet];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Em => "em",
            Method::LoocvFixed => "loocv-fixed",
            Method::LoocvGlmnet => "loocv-glmnet",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = RidgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "em" => Ok(Method::Em),
            "loocv-fixed" => Ok(Method::LoocvFixed),
            "loocv-glmnet" => Ok(Method::LoocvGlmnet),
            other => Err(RidgeError::InvalidParameter(format!(
                "unknown method {other:?} (expected em, loocv-fixed or loocv-glmnet)"
            ))),
        }
    }
}

/// A fitted model on the raw feature scale, one column per target.
#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub method: Method,
    pub beta_raw: DMatrix<f64>,
    pub intercepts: DVector<f64>,
    pub lambda: Vec<f64>,
    pub tau2: Option<Vec<f64>>,
    pub sigma2: Option<Vec<f64>>,
    pub iterations: Option<Vec<usize>>,
    pub converged: Option<Vec<bool>>,
    /// Targets whose EM statistics collapsed (minimum-norm solution returned).
    pub degenerate_targets: Vec<usize>,
    /// Candidate grid and CV error curve per target (LOOCV only).
    pub grids: Option<Vec<Vec<f64>>>,
    pub cve_curves: Option<Vec<Vec<f64>>>,
}

impl FitResult {
    pub fn p(&self) -> usize {
        self.beta_raw.nrows()
    }

    pub fn q(&self) -> usize {
        self.beta_raw.ncols()
    }
}

/// `X_new · beta_raw + intercepts`.
pub fn predict(f: &FitResult, x_new: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_rows("prediction features", f.p(), x_new.ncols())?;
    let mut out = x_new * &f.beta_raw;
    for (t, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(f.intercepts[t]);
    }
    Ok(out)
}

/// Coefficient of determination against the mean of `y_true`; negative when
/// the predictions are worse than that mean.
pub fn r_squared(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_rows("r_squared predictions", y_true.len(), y_pred.len())?;
    let m = y_true.len();
    if m < 2 {
        return Err(RidgeError::TooFewRows {
            needed: 2,
            actual: m,
        });
    }
    let mean = y_true.iter().sum::<f64>() / m as f64;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(RidgeError::InvalidParameter(
            "r_squared is undefined for a constant y_true".into(),
        ));
    }
    let ss_res: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(y, f)| (y - f).powi(2))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}
