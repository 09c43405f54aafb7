//! Training and evaluation of a single (config, seed) run.

use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, InferenceMode};
use super::data::{load_dataset, split, IngestReport};
use super::report::{write_predictions, write_report, write_training_log, PredictionRow};
use super::{ExperimentError, ExperimentResult};
use crate::autodiff::{Tape, TensorError};
use crate::checkpoint;
use crate::featurize::MolecularGraph;
use crate::metrics::{PredictionRecord, ReliabilityReport};
use crate::model::{GnnModel, GraphBatch, Mode};
use crate::optim::{OptimError, OptimizerState};
use crate::scalar::Scalar;

/// Package version plus the git revision the crate was built from.
pub const BUILD_ID: &str = concat!(env!("CARGO_PKG_VERSION"), "+", env!("CALIBGNN_GIT_REV"));

pub const MANIFEST_FORMAT: &str = "calibgnn-run";
pub const MANIFEST_VERSION: u32 = 1;

/// Graphs per forward pass at inference time.
const INFERENCE_CHUNK: usize = 64;

/// Independent random streams derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Dropout = 3,
    Inference = 4,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for `stream` (and e.g. epoch `index`) of run `seed`.
pub fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64((stream as u64) << 32 ^ index))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Summed loss over the epoch divided by the number of training graphs.
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub test: usize,
}

/// Everything needed to reproduce a run. Wall-clock time is kept out of the
/// manifest (see `timing.json`) so repeated runs produce identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub build: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub ingest: IngestReport,
    pub split: SplitSizes,
    pub epochs: Vec<EpochLog>,
    /// `None` when the test split is empty.
    pub report: Option<ReliabilityReport<f64>>,
    pub timing_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub train_seconds: f64,
    pub evaluate_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome<T: Scalar> {
    pub manifest: RunManifest,
    pub model: GnnModel<T>,
    pub predictions: Vec<PredictionRow>,
    pub timing: Timing,
}

fn numerical(epoch: usize) -> impl Fn(TensorError) -> ExperimentError {
    move |e| ExperimentError::Numerical {
        epoch,
        detail: e.to_string(),
    }
}

fn optim_failure(epoch: usize) -> impl Fn(OptimError) -> ExperimentError {
    move |e| match e {
        OptimError::Numerical { .. } => ExperimentError::Numerical {
            epoch,
            detail: e.to_string(),
        },
        other => ExperimentError::Config(other.to_string()),
    }
}

/// Trains a fresh model on `train`. `config` should already be resolved.
pub fn train_on<T: Scalar>(
    config: &ExperimentConfig,
    train: &[MolecularGraph<T>],
    seed: u64,
) -> ExperimentResult<(GnnModel<T>, Vec<EpochLog>)> {
    if train.is_empty() {
        return Err(ExperimentError::EmptyDataset("training split".into()));
    }
    let mut model = GnnModel::<T>::new(config.model.clone(), derive_seed(seed, Stream::Init, 0))?;
    let hyper = config.optimizer.adamw(config.model.dropout_rate);
    let mut opt = OptimizerState::for_parameters(hyper, model.parameters());
    let schedule = config.optimizer.schedule();
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Dropout, 0));
    let batch_size = config.training.batch_size;

    let mut log = Vec::with_capacity(config.training.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.training.epochs {
        let lr = schedule.lr_at(epoch);
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            seed,
            Stream::Shuffle,
            epoch as u64,
        )));
        let mut total = 0.0;
        for chunk in order.chunks(batch_size) {
            let batch = GraphBatch::new(chunk.iter().map(|&i| &train[i]));
            let grads = {
                let tape = Tape::new();
                let pass = model
                    .forward(&tape, &batch, Mode::Train, &mut dropout_rng)
                    .map_err(numerical(epoch))?;
                let loss = config
                    .loss
                    .record(pass.probabilities, &batch.label_column())
                    .map_err(numerical(epoch))?;
                total += loss.item().as_f64();
                let mean = loss
                    .scalar_mul(T::one() / T::from_count(chunk.len()))
                    .map_err(numerical(epoch))?;
                mean.backward().map_err(numerical(epoch))?;
                pass.params
                    .iter()
                    .zip(model.parameters())
                    .map(|(v, p)| v.grad().unwrap_or_else(|| Array2::zeros(p.tensor.shape())))
                    .collect::<Vec<_>>()
            };
            opt.apply_step(model.parameters_mut(), &grads, T::lit(lr))
                .map_err(optim_failure(epoch))?;
        }
        log.push(EpochLog {
            epoch,
            lr,
            loss: total / train.len() as f64,
        });
    }
    Ok((model, log))
}

/// Probabilities for `graphs` in input order, in the configured inference mode.
/// MC-dropout masks come from a stream derived from `seed`.
pub fn evaluate_graphs<T: Scalar>(
    model: &GnnModel<T>,
    graphs: &[MolecularGraph<T>],
    mode: InferenceMode,
    mc_samples: usize,
    seed: u64,
) -> ExperimentResult<Vec<(T, Option<T>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Inference, 0));
    let mut out = Vec::with_capacity(graphs.len());
    for chunk in graphs.chunks(INFERENCE_CHUNK) {
        let batch = GraphBatch::new(chunk);
        match mode {
            InferenceMode::Deterministic => {
                let p = model
                    .predict_batch(&batch, Mode::Eval, &mut rng)
                    .map_err(ExperimentError::Inference)?;
                out.extend(p.into_iter().map(|p| (p, None)));
            }
            InferenceMode::McDropout => {
                if mc_samples == 0 {
                    return Err(ExperimentError::Config("mc_samples must be at least 1".into()));
                }
                let preds = model
                    .predict_mc_dropout_batch(&batch, mc_samples, &mut rng)
                    .map_err(ExperimentError::Inference)?;
                out.extend(preds.into_iter().map(|m| {
                    let n = T::from_count(m.samples.len());
                    let var = m.samples.iter().map(|&s| (s - m.mean) * (s - m.mean)).sum::<T>() / n;
                    (m.mean, Some(var.sqrt()))
                }));
            }
        }
    }
    Ok(out)
}

/// Joins probabilities with graph labels into records and CSV rows.
pub(crate) fn prediction_rows<T: Scalar>(
    graphs: &[MolecularGraph<T>],
    probabilities: &[(T, Option<T>)],
    threshold: f64,
) -> (Vec<PredictionRecord<f64>>, Vec<PredictionRow>) {
    let delta = T::lit(threshold);
    let mut records = Vec::new();
    let rows = graphs
        .iter()
        .zip(probabilities)
        .enumerate()
        .map(|(i, (g, &(p, std)))| {
            let rec_t = g.label.map(|y| PredictionRecord::new(p, y, delta));
            if let Some(r) = rec_t {
                records.push(PredictionRecord {
                    probability: p.as_f64(),
                    predicted: r.predicted,
                    label: r.label,
                });
            }
            PredictionRow {
                index: i,
                id: g.source_id.clone().unwrap_or_default(),
                probability: p.as_f64(),
                predicted: u8::from(crate::model::threshold_label(p, delta)),
                label: g.label.map(u8::from),
                mc_std: std.map(|s| s.as_f64()),
            }
        })
        .collect();
    (records, rows)
}

/// Split, train and evaluate on an already ingested dataset. Nothing is written.
pub(crate) fn run_in_memory<T: Scalar>(
    config: &ExperimentConfig,
    graphs: &[MolecularGraph<T>],
    ingest: &IngestReport,
    seed: u64,
) -> ExperimentResult<RunOutcome<T>> {
    let (train_set, test_set) = split(graphs, config.training.split_ratio, seed);
    let started = Instant::now();
    let (model, epochs) = train_on(config, &train_set, seed)?;
    let train_seconds = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let probabilities = evaluate_graphs(&model, &test_set, config.inference.mode, config.model.mc_samples, seed)?;
    let (records, predictions) = prediction_rows(&test_set, &probabilities, config.evaluation.threshold);
    let report =
        (!records.is_empty()).then(|| ReliabilityReport::from_records(&records, &config.evaluation.report_settings()));
    let evaluate_seconds = started.elapsed().as_secs_f64();

    Ok(RunOutcome {
        manifest: RunManifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            build: BUILD_ID.into(),
            seed,
            config: config.clone(),
            ingest: ingest.clone(),
            split: SplitSizes {
                train: train_set.len(),
                test: test_set.len(),
            },
            epochs,
            report,
            timing_file: "timing.json".into(),
        },
        model,
        predictions,
        timing: Timing {
            train_seconds,
            evaluate_seconds,
        },
    })
}

pub(crate) fn write_json<S: Serialize>(path: &Path, value: &S) -> ExperimentResult<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(ExperimentError::io(path))
}

/// Writes manifest, checkpoint, timing sidecar and report CSVs into `dir`.
pub(crate) fn persist<T: Scalar>(outcome: &RunOutcome<T>, dir: &Path) -> ExperimentResult<()> {
    fs::create_dir_all(dir).map_err(ExperimentError::io(dir))?;
    write_json(&dir.join("manifest.json"), &outcome.manifest)?;
    write_json(&dir.join(&outcome.manifest.timing_file), &outcome.timing)?;
    checkpoint::save(&outcome.model, &dir.join("checkpoint.json"))?;
    write_training_log(&dir.join("training_loss.csv"), &outcome.manifest.epochs)?;
    write_predictions(&dir.join("predictions.csv"), &outcome.predictions)?;
    if let Some(report) = &outcome.manifest.report {
        write_report(dir, report)?;
    }
    Ok(())
}

/// Loads the dataset, trains with `seed`, evaluates on the held-out split and
/// writes every artifact into `out_dir`.
pub fn train<T: Scalar>(config: &ExperimentConfig, seed: u64, out_dir: &Path) -> ExperimentResult<RunOutcome<T>> {
    let config = config.resolved()?;
    let dataset = load_dataset::<T>(&config.dataset)?;
    let outcome = run_in_memory(&config, &dataset.graphs, &dataset.report, seed)?;
    persist(&outcome, out_dir)?;
    Ok(outcome)
}

/// Which rows of the dataset an evaluation covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSubset {
    /// The held-out part of the split produced by the seed.
    Test,
    All,
}

/// Scores a saved checkpoint and writes the report CSVs into `out_dir`.
pub fn evaluate<T: Scalar>(
    config: &ExperimentConfig,
    checkpoint_path: &Path,
    seed: u64,
    subset: EvalSubset,
    out_dir: &Path,
) -> ExperimentResult<ReliabilityReport<f64>> {
    let config = config.resolved()?;
    let model = checkpoint::load::<T>(checkpoint_path)?;
    let dataset = load_dataset::<T>(&config.dataset)?;
    let graphs = match subset {
        EvalSubset::Test => split(&dataset.graphs, config.training.split_ratio, seed).1,
        EvalSubset::All => dataset.graphs,
    };
    if graphs.is_empty() {
        return Err(ExperimentError::EmptyDataset("evaluation split".into()));
    }
    let probabilities = evaluate_graphs(&model, &graphs, config.inference.mode, config.model.mc_samples, seed)?;
    let (records, rows) = prediction_rows(&graphs, &probabilities, config.evaluation.threshold);
    let report = ReliabilityReport::from_records(&records, &config.evaluation.report_settings());
    fs::create_dir_all(out_dir).map_err(ExperimentError::io(out_dir))?;
    write_predictions(&out_dir.join("predictions.csv"), &rows)?;
    write_report(out_dir, &report)?;
    write_json(&out_dir.join("report.json"), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_stream_and_index() {
        let a = derive_seed(0, Stream::Shuffle, 0);
        assert_ne!(a, derive_seed(0, Stream::Shuffle, 1));
        assert_ne!(a, derive_seed(0, Stream::Dropout, 0));
        assert_ne!(a, derive_seed(1, Stream::Shuffle, 0));
        assert_eq!(a, derive_seed(0, Stream::Shuffle, 0));
    }
}
