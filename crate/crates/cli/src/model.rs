//! JSON model files written by `fit` and read by `predict`.

use std::path::Path;

use fastridge::{FitResult, Method, StandardizedDataset};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Stage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficients {
    Single(Vec<f64>),
    /// One row per feature, one entry per target.
    Multi(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub col_means: Vec<f64>,
    pub col_sds: Vec<f64>,
    pub kept_columns: Vec<usize>,
    pub y_means: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub method: Method,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    pub coefficients: Coefficients,
    pub intercepts: Vec<f64>,
    pub lambda: Vec<f64>,
    /// `null` marks an unbounded prior variance (degenerate fit, λ = 0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau2: Option<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate_targets: Vec<usize>,
    /// Per target when there are several.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cve_curve: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<Vec<f64>>>,
    pub standardization: Standardization,
    pub library_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ModelFile {
    pub fn from_fit(
        fit: &FitResult,
        s: &StandardizedDataset,
        feature_names: &[String],
        target_names: &[String],
    ) -> Self {
        let (p, q) = fit.beta_raw.shape();
        let coefficients = if q == 1 {
            Coefficients::Single(fit.beta_raw.column(0).iter().copied().collect())
        } else {
            Coefficients::Multi(
                (0..p)
                    .map(|j| fit.beta_raw.row(j).iter().copied().collect())
                    .collect(),
            )
        };
        ModelFile {
            method: fit.method,
            feature_names: feature_names.to_vec(),
            target_names: target_names.to_vec(),
            coefficients,
            intercepts: fit.intercepts.iter().copied().collect(),
            lambda: fit.lambda.clone(),
            tau2: fit
                .tau2
                .as_ref()
                .map(|v| v.iter().map(|&t| t.is_finite().then_some(t)).collect()),
            sigma2: fit.sigma2.clone(),
            iterations: fit.iterations.clone(),
            converged: fit.converged.clone(),
            degenerate_targets: fit.degenerate_targets.clone(),
            cve_curve: fit.cve_curves.clone(),
            grid: fit.grids.clone(),
            standardization: Standardization {
                col_means: s.col_means.clone(),
                col_sds: s.col_sds.clone(),
                kept_columns: s.kept_columns.clone(),
                y_means: s.y_means.clone(),
            },
            library_version: fastridge::VERSION.to_string(),
            seed: None,
        }
    }

    pub fn p(&self) -> usize {
        self.feature_names.len()
    }

    pub fn q(&self) -> usize {
        self.intercepts.len()
    }

    /// Checks that every array agrees with the feature and target counts.
    pub fn validate(&self) -> Result<(), String> {
        let (p, q) = (self.p(), self.q());
        let coef_ok = match &self.coefficients {
            Coefficients::Single(b) => q == 1 && b.len() == p,
            Coefficients::Multi(rows) => rows.len() == p && rows.iter().all(|r| r.len() == q),
        };
        if !coef_ok {
            return Err(format!(
                "coefficients do not match {p} features and {q} targets"
            ));
        }
        let s = &self.standardization;
        if s.col_means.len() != p || s.col_sds.len() != p {
            return Err("standardization metadata does not match the feature count".into());
        }
        if s.kept_columns.iter().any(|&j| j >= p) {
            return Err("kept column index out of range".into());
        }
        if s.y_means.len() != q || self.lambda.len() != q || self.target_names.len() != q {
            return Err("per-target arrays do not match the target count".into());
        }
        Ok(())
    }

    pub fn to_fit(&self) -> FitResult {
        let (p, q) = (self.p(), self.q());
        let beta_raw = match &self.coefficients {
            Coefficients::Single(b) => DMatrix::from_column_slice(p, 1, b),
            Coefficients::Multi(rows) => DMatrix::from_fn(p, q, |j, t| rows[j][t]),
        };
        FitResult {
            method: self.method,
            beta_raw,
            intercepts: DVector::from_column_slice(&self.intercepts),
            lambda: self.lambda.clone(),
            tau2: self
                .tau2
                .as_ref()
                .map(|v| v.iter().map(|t| t.unwrap_or(f64::INFINITY)).collect()),
            sigma2: self.sigma2.clone(),
            iterations: self.iterations.clone(),
            converged: self.converged.clone(),
            degenerate_targets: self.degenerate_targets.clone(),
            grids: self.grid.clone(),
            cve_curves: self.cve_curve.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(Stage::LoadModel, format!("{}: {e}", path.display())))?;
        let model: ModelFile = serde_json::from_str(&text)
            .map_err(|e| CliError::data(Stage::LoadModel, format!("{}: {e}", path.display())))?;
        model
            .validate()
            .map_err(|e| CliError::data(Stage::LoadModel, format!("{}: {e}", path.display())))?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit(q: usize) -> FitResult {
        FitResult {
            method: Method::Em,
            beta_raw: DMatrix::from_fn(3, q, |j, t| 0.1 + j as f64 - 0.3 * t as f64),
            intercepts: DVector::from_fn(q, |t, _| 1.0 / 3.0 + t as f64),
            lambda: vec![0.7; q],
            tau2: Some(
                (0..q)
                    .map(|t| if t == 0 { f64::INFINITY } else { 1.0 / 0.7 })
                    .collect(),
            ),
            sigma2: Some(vec![0.2; q]),
            iterations: Some(vec![4; q]),
            converged: Some(vec![true; q]),
            degenerate_targets: vec![0],
            grids: None,
            cve_curves: None,
        }
    }

    fn std_meta(q: usize) -> StandardizedDataset {
        StandardizedDataset {
            x: DMatrix::zeros(1, 3),
            y: DMatrix::zeros(1, q),
            col_means: vec![0.1, 0.2, 0.3],
            col_sds: vec![1.0, 2.0, 3.0],
            y_means: vec![0.0; q],
            kept_columns: vec![0, 1, 2],
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        for q in [1, 2] {
            let names: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
            let targets: Vec<String> = (0..q).map(|t| format!("y{t}")).collect();
            let m = ModelFile::from_fit(&fit(q), &std_meta(q), &names, &targets);
            let back: ModelFile = serde_json::from_str(&m.to_json()).unwrap();
            assert_eq!(back, m);
            back.validate().unwrap();
            let f = back.to_fit();
            assert_eq!(f.beta_raw, fit(q).beta_raw);
            assert!(f.tau2.unwrap()[0].is_infinite());
        }
    }

    #[test]
    fn single_target_coefficients_are_flat() {
        let names: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        let m = ModelFile::from_fit(&fit(1), &std_meta(1), &names, &["y".into()]);
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        assert!(v["coefficients"][0].is_number());
        assert!(v["tau2"][0].is_null());
    }

    #[test]
    fn validation_catches_shape_errors() {
        let names: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        let mut m = ModelFile::from_fit(&fit(2), &std_meta(2), &names, &["u".into(), "v".into()]);
        m.standardization.col_sds.pop();
        assert!(m.validate().is_err());
    }
}
