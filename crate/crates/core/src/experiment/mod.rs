//! Config-driven training, evaluation, ablation and screening runs.

mod ablation;
mod config;
mod data;
mod report;
mod run;
mod screen;

use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::TensorError;
use crate::checkpoint::CheckpointError;
use crate::model::ModelError;
use crate::objectives::LossConfigError;
use crate::optim::OptimError;

pub use ablation::{mean_row, run_ablation, AblationAxis, AblationSummary, SummaryRow, Variant};
pub use config::{
    AblationConfig, EvaluationConfig, ExperimentConfig, InferenceConfig, InferenceMode, OptimizerConfig,
    TrainingConfig, CONFIG_VERSION,
};
pub use data::{
    load_dataset, parse_check, split, Dataset, DatasetSpec, IngestReport, LabelRule, ParseCheck, SkippedRow,
    PIC50_THRESHOLD,
};
pub use report::{metric_rows, write_predictions, write_report, PredictionRow};
pub use run::{
    derive_seed, evaluate, evaluate_graphs, train, train_on, EpochLog, EvalSubset, RunManifest, RunOutcome, SplitSizes,
    Stream, Timing, BUILD_ID, MANIFEST_FORMAT, MANIFEST_VERSION,
};
pub use screen::{screen, ScreeningReport};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: missing column(s) {missing:?}")]
    Schema { path: PathBuf, missing: Vec<String> },
    #[error("{0}: no usable rows")]
    EmptyDataset(String),
    #[error("numerical failure in epoch {epoch}: {detail}")]
    Numerical { epoch: usize, detail: String },
    #[error("numerical failure during inference: {0}")]
    Inference(TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl ExperimentError {
    /// Process exit code: 1 usage/config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 1,
            ExperimentError::Io { .. }
            | ExperimentError::Csv { .. }
            | ExperimentError::Schema { .. }
            | ExperimentError::EmptyDataset(_)
            | ExperimentError::Checkpoint(_) => 2,
            ExperimentError::Numerical { .. } | ExperimentError::Inference(_) => 3,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| ExperimentError::Io { path, source }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>) -> impl FnOnce(csv::Error) -> Self {
        let path = path.into();
        move |source| ExperimentError::Csv { path, source }
    }
}

impl From<ModelError> for ExperimentError {
    fn from(e: ModelError) -> Self {
        ExperimentError::Config(e.to_string())
    }
}

impl From<LossConfigError> for ExperimentError {
    fn from(e: LossConfigError) -> Self {
        ExperimentError::Config(e.to_string())
    }
}

impl From<OptimError> for ExperimentError {
    fn from(e: OptimError) -> Self {
        ExperimentError::Config(e.to_string())
    }
}

pub type ExperimentResult<T> = Result<T, ExperimentError>;
