//! CSV emission. One file per figure series, each with a header row.
//!
//! | file | columns |
//! |---|---|
//! | `calibration_curve.csv` | `bin,lower,upper,count,accuracy,confidence,positive_fraction,perfect` |
//! | `entropy_histogram.csv` | `bin,lower,upper,count` (range `[0, ln 2]`) |
//! | `output_histogram.csv` | `bin,lower,upper,count` (range `[0, 1]`) |
//! | `outcome_histograms.csv` | `bin,lower,upper,tp,fp,tn,fn` |
//! | `screening_curve.csv` | `k_percent,screened,hits,success_rate` |
//! | `metrics.csv` | `metric,value` |
//! | `predictions.csv` | `index,id,probability,predicted,label,mc_std` |
//! | `training_loss.csv` | `epoch,lr,loss` |
//!
//! Empty calibration bins leave `accuracy`, `confidence` and
//! `positive_fraction` blank. `perfect`
//! is the bin midpoint, i.e. the y = x reference line.

use std::f64::consts::LN_2;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::EpochLog;
use super::{ExperimentError, ExperimentResult};
use crate::metrics::ReliabilityReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub index: usize,
    pub id: String,
    pub probability: f64,
    pub predicted: u8,
    pub label: Option<u8>,
    pub mc_std: Option<f64>,
}

fn writer(path: &Path) -> ExperimentResult<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(ExperimentError::csv(path))
}

fn write_rows<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> ExperimentResult<()> {
    let mut w = writer(path)?;
    for row in rows {
        w.serialize(row).map_err(ExperimentError::csv(path))?;
    }
    w.flush().map_err(ExperimentError::io(path))
}

#[derive(Serialize)]
struct CalibrationRow {
    bin: usize,
    lower: f64,
    upper: f64,
    count: usize,
    accuracy: Option<f64>,
    confidence: Option<f64>,
    positive_fraction: Option<f64>,
    perfect: f64,
}

#[derive(Serialize)]
struct HistogramRow {
    bin: usize,
    lower: f64,
    upper: f64,
    count: usize,
}

#[derive(Serialize)]
struct OutcomeRow {
    bin: usize,
    lower: f64,
    upper: f64,
    tp: usize,
    fp: usize,
    tn: usize,
    #[serde(rename = "fn")]
    fn_: usize,
}

#[derive(Serialize)]
struct MetricRow<'a> {
    metric: &'a str,
    value: String,
}

fn edges(i: usize, bins: usize, max: f64) -> (f64, f64) {
    (max * i as f64 / bins as f64, max * (i + 1) as f64 / bins as f64)
}

fn histogram_rows(counts: &[usize], max: f64) -> impl Iterator<Item = HistogramRow> + '_ {
    counts.iter().enumerate().map(move |(bin, &count)| {
        let (lower, upper) = edges(bin, counts.len(), max);
        HistogramRow {
            bin,
            lower,
            upper,
            count,
        }
    })
}

pub fn write_outcome_histograms(path: &Path, report: &ReliabilityReport<f64>) -> ExperimentResult<()> {
    let h = &report.outcome_histograms;
    write_rows(
        path,
        (0..h.tp.len()).map(|bin| {
            let (lower, upper) = edges(bin, h.tp.len(), 1.0);
            OutcomeRow {
                bin,
                lower,
                upper,
                tp: h.tp[bin],
                fp: h.fp[bin],
                tn: h.tn[bin],
                fn_: h.fn_[bin],
            }
        }),
    )
}

pub fn write_screening_curve(path: &Path, report: &ReliabilityReport<f64>) -> ExperimentResult<()> {
    write_rows(path, &report.screening)
}

/// Scalar metrics as `metric,value` rows; an undefined value is left blank.
pub fn metric_rows(report: &ReliabilityReport<f64>) -> Vec<(&'static str, Option<f64>)> {
    let c = &report.classification;
    let flag = |b: bool| Some(if b { 1.0 } else { 0.0 });
    vec![
        ("n", Some(report.n as f64)),
        ("accuracy", Some(c.accuracy)),
        ("auroc", report.auroc),
        ("precision", Some(c.precision)),
        ("recall", Some(c.recall)),
        ("f1", Some(c.f1)),
        ("ece", Some(report.ece)),
        ("ece_positive_fraction", Some(report.ece_positive_fraction)),
        ("tp", Some(c.confusion.tp as f64)),
        ("fp", Some(c.confusion.fp as f64)),
        ("tn", Some(c.confusion.tn as f64)),
        ("fn", Some(c.confusion.fn_ as f64)),
        ("precision_undefined", flag(c.precision_undefined)),
        ("recall_undefined", flag(c.recall_undefined)),
        ("f1_undefined", flag(c.f1_undefined)),
    ]
}

/// Writes every report series into `dir`.
pub fn write_report(dir: &Path, report: &ReliabilityReport<f64>) -> ExperimentResult<()> {
    write_rows(
        &dir.join("calibration_curve.csv"),
        report.bins.iter().map(|b| CalibrationRow {
            bin: b.index,
            lower: b.lower,
            upper: b.upper,
            count: b.count,
            accuracy: b.accuracy,
            confidence: b.confidence,
            positive_fraction: b.positive_fraction,
            perfect: 0.5 * (b.lower + b.upper),
        }),
    )?;
    write_rows(
        &dir.join("entropy_histogram.csv"),
        histogram_rows(&report.entropy_histogram, LN_2),
    )?;
    write_rows(
        &dir.join("output_histogram.csv"),
        histogram_rows(&report.output_histogram, 1.0),
    )?;
    write_outcome_histograms(&dir.join("outcome_histograms.csv"), report)?;
    write_screening_curve(&dir.join("screening_curve.csv"), report)?;
    write_rows(
        &dir.join("metrics.csv"),
        metric_rows(report).into_iter().map(|(metric, v)| MetricRow {
            metric,
            value: v.map(|v| v.to_string()).unwrap_or_default(),
        }),
    )
}

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> ExperimentResult<()> {
    write_rows(path, rows)
}

pub fn write_training_log(path: &Path, epochs: &[EpochLog]) -> ExperimentResult<()> {
    write_rows(path, epochs)
}
