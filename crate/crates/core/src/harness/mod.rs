//! Experiment orchestration: configuration, the end-to-end pipeline, report
//! tables and the command line.

pub mod cli;
pub mod config;
pub mod pipeline;
pub mod report;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{seeds, ExperimentConfig, TimingMode};
pub use pipeline::{
    prepare_bundle, run_experiment, train_baseline, train_gold, RunManifest, RunOutcome, RunStatus, StageRecord,
};
pub use report::{emit_table, render_table, Format, ReportRow, RowKind};

/// Environment variable naming a root directory for relative output paths.
pub const OUT_ROOT_ENV: &str = "BIASLAB_OUT_ROOT";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("output directory {0} already exists and is not empty")]
    OutputExists(PathBuf),
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },
    #[error(transparent)]
    Biasgen(#[from] crate::biasgen::BiasgenError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Unlearn(#[from] crate::unlearn::UnlearnError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error(transparent)]
    CoBum(#[from] crate::cobum::CoBumError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// 1 for problems with the user's inputs, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::OutputExists(_) | HarnessError::Input { .. } => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

/// Joins a relative `path` onto the output root from the environment.
pub fn resolve_output_dir(path: &Path) -> PathBuf {
    match std::env::var_os(OUT_ROOT_ENV) {
        Some(root) if path.is_relative() && !root.is_empty() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}

/// Creates `dir`, refusing to reuse a non-empty directory.
pub fn prepare_output_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        let mut entries = std::fs::read_dir(dir)?;
        if entries.next().is_some() {
            return Err(HarnessError::OutputExists(dir.to_path_buf()));
        }
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}
