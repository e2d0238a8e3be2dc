use std::fmt;

use fastridge::RidgeError;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DEGENERATE: i32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Arguments,
    LoadData,
    LoadModel,
    Preprocess,
    Solve,
    Predict,
    Simulate,
    Bench,
    Write,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Arguments => "arguments",
            Stage::LoadData => "load data",
            Stage::LoadModel => "load model",
            Stage::Preprocess => "preprocess",
            Stage::Solve => "solve",
            Stage::Predict => "predict",
            Stage::Simulate => "simulate",
            Stage::Bench => "bench",
            Stage::Write => "write output",
        })
    }
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub stage: Stage,
    pub message: String,
}

impl CliError {
    pub fn usage(stage: Stage, message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            stage,
            message: message.into(),
        }
    }

    pub fn data(stage: Stage, message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            stage,
            message: message.into(),
        }
    }

    /// Bad parameters map to the usage code, numerical breakdowns to the
    /// degeneracy code, everything else is a data error.
    pub fn from_ridge(stage: Stage, e: RidgeError) -> Self {
        let code = if e.is_solver_degeneracy() {
            EXIT_DEGENERATE
        } else if matches!(e, RidgeError::InvalidParameter(_)) {
            EXIT_USAGE
        } else {
            EXIT_DATA
        };
        CliError {
            code,
            stage,
            message: e.to_string(),
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::data(Stage::Write, format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.message)
    }
}

impl std::error::Error for CliError {}
