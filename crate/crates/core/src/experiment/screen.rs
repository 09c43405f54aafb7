//! Ranking a compound library by predicted probability.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::data::{load_dataset, DatasetSpec, IngestReport};
use super::report::{write_outcome_histograms, write_screening_curve};
use super::run::{evaluate_graphs, prediction_rows, write_json};
use super::{ExperimentError, ExperimentResult};
use crate::checkpoint;
use crate::metrics::{
    rank_descending, Confusion, OutcomeHistograms, PredictionRecord, ReliabilityReport, ScreeningPoint,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub ingest: IngestReport,
    pub curve: Vec<ScreeningPoint<f64>>,
    pub confusion: Confusion,
    pub outcome_histograms: OutcomeHistograms,
}

#[derive(Serialize)]
struct RankedRow<'a> {
    rank: usize,
    id: &'a str,
    probability: f64,
    predicted: u8,
    label: Option<u8>,
}

/// Scores every compound of `library`, then writes `screened_compounds.csv`
/// (descending probability), `screening_curve.csv` and
/// `outcome_histograms.csv` into `out_dir`.
pub fn screen<T: Scalar>(
    config: &ExperimentConfig,
    checkpoint_path: &Path,
    library: &DatasetSpec,
    seed: u64,
    out_dir: &Path,
) -> ExperimentResult<ScreeningReport> {
    let config = config.resolved()?;
    let model = checkpoint::load::<T>(checkpoint_path)?;
    let dataset = load_dataset::<T>(library)?;
    let probabilities = evaluate_graphs(
        &model,
        &dataset.graphs,
        config.inference.mode,
        config.model.mc_samples,
        seed,
    )?;
    let (records, rows) = prediction_rows(&dataset.graphs, &probabilities, config.evaluation.threshold);
    let settings = config.evaluation.report_settings();
    let report = ReliabilityReport::from_records(&records, &settings);

    fs::create_dir_all(out_dir).map_err(ExperimentError::io(out_dir))?;
    let path = out_dir.join("screened_compounds.csv");
    let mut w = csv::Writer::from_path(&path).map_err(ExperimentError::csv(&path))?;
    let by_prob: Vec<PredictionRecord<f64>> = rows
        .iter()
        .map(|r| PredictionRecord {
            probability: r.probability,
            predicted: r.predicted == 1,
            label: r.label == Some(1),
        })
        .collect();
    for (rank, &i) in rank_descending(&by_prob).iter().enumerate() {
        let r = &rows[i];
        w.serialize(RankedRow {
            rank: rank + 1,
            id: &r.id,
            probability: r.probability,
            predicted: r.predicted,
            label: r.label,
        })
        .map_err(ExperimentError::csv(&path))?;
    }
    w.flush().map_err(ExperimentError::io(&path))?;
    write_screening_curve(&out_dir.join("screening_curve.csv"), &report)?;
    write_outcome_histograms(&out_dir.join("outcome_histograms.csv"), &report)?;

    let out = ScreeningReport {
        ingest: dataset.report,
        curve: report.screening,
        confusion: report.classification.confusion,
        outcome_histograms: report.outcome_histograms,
    };
    write_json(&out_dir.join("screening_report.json"), &out)?;
    Ok(out)
}
