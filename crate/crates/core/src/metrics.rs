//! Reliability metrics over (probability, prediction, label) records.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::threshold_label;
use crate::scalar::Scalar;

pub const DEFAULT_BINS: usize = 10;
pub const DEFAULT_HISTOGRAM_BINS: usize = 20;
pub const DEFAULT_K_GRID: [f64; 13] = [
    1.0, 2.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0,
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("metric undefined: records contain only one class")]
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord<T> {
    pub probability: T,
    pub predicted: bool,
    pub label: bool,
}

impl<T: Scalar> PredictionRecord<T> {
    /// Record with the prediction obtained by thresholding at `threshold`.
    pub fn new(probability: T, label: bool, threshold: T) -> Self {
        Self {
            probability,
            predicted: threshold_label(probability, threshold),
            label,
        }
    }

    pub fn correct(&self) -> bool {
        self.predicted == self.label
    }
}

/// `H(p) = -p ln p - (1 - p) ln(1 - p)`, zero at both endpoints.
pub fn entropy<T: Scalar>(p: T) -> T {
    let term = |x: T| if x > T::zero() { -x * x.ln() } else { T::zero() };
    term(p) + term(T::one() - p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin<T> {
    pub index: usize,
    pub lower: T,
    pub upper: T,
    pub count: usize,
    /// Mean of `1(prediction == label)`; `None` for an empty bin.
    pub accuracy: Option<T>,
    /// Mean probability; `None` for an empty bin.
    pub confidence: Option<T>,
    /// Share of records labelled positive; `None` for an empty bin.
    pub positive_fraction: Option<T>,
}

/// Bin of `p` among `bins` equal-width bins: bin `m` is `(m/M, (m+1)/M]`,
/// and bin 0 also holds `p = 0`.
pub fn bin_index<T: Scalar>(p: T, bins: usize) -> usize {
    let m_total = T::from_count(bins);
    let edge = |m: usize| T::from_count(m) / m_total;
    let guess = (p * m_total).ceil().to_usize().unwrap_or(0);
    let mut m = guess.saturating_sub(1).min(bins - 1);
    // p * M can round across an edge; settle against the edges themselves
    while m > 0 && p <= edge(m) {
        m -= 1;
    }
    while m + 1 < bins && p > edge(m + 1) {
        m += 1;
    }
    m
}

pub fn bin_predictions<T: Scalar>(records: &[PredictionRecord<T>], bins: usize) -> Vec<CalibrationBin<T>> {
    assert!(bins >= 1, "at least one bin");
    let mut count = vec![0usize; bins];
    let mut correct = vec![0usize; bins];
    let mut conf = vec![T::zero(); bins];
    let mut positives = vec![0usize; bins];
    for r in records {
        let m = bin_index(r.probability, bins);
        count[m] += 1;
        correct[m] += usize::from(r.correct());
        conf[m] += r.probability;
        positives[m] += usize::from(r.label);
    }
    let m_total = T::from_count(bins);
    (0..bins)
        .map(|m| {
            let n = T::from_count(count[m]);
            let (accuracy, confidence, positive_fraction) = if count[m] == 0 {
                (None, None, None)
            } else {
                (
                    Some(T::from_count(correct[m]) / n),
                    Some(conf[m] / n),
                    Some(T::from_count(positives[m]) / n),
                )
            };
            CalibrationBin {
                index: m,
                lower: T::from_count(m) / m_total,
                upper: T::from_count(m + 1) / m_total,
                count: count[m],
                accuracy,
                confidence,
                positive_fraction,
            }
        })
        .collect()
}

/// `sum_m |B_m|/n * |acc(B_m) - conf(B_m)|`; zero for no records.
pub fn ece_from_bins<T: Scalar>(bins: &[CalibrationBin<T>]) -> T {
    let n: usize = bins.iter().map(|b| b.count).sum();
    if n == 0 {
        return T::zero();
    }
    let n = T::from_count(n);
    bins.iter()
        .filter_map(|b| match (b.accuracy, b.confidence) {
            (Some(a), Some(c)) => Some(T::from_count(b.count) / n * (a - c).abs()),
            _ => None,
        })
        .sum()
}

pub fn ece<T: Scalar>(records: &[PredictionRecord<T>], bins: usize) -> T {
    ece_from_bins(&bin_predictions(records, bins))
}

/// Same weighting as [`ece_from_bins`], with the positive share of each bin
/// in place of its accuracy (the reliability-diagram reading).
pub fn positive_fraction_ece<T: Scalar>(bins: &[CalibrationBin<T>]) -> T {
    let n: usize = bins.iter().map(|b| b.count).sum();
    if n == 0 {
        return T::zero();
    }
    let n = T::from_count(n);
    bins.iter()
        .filter_map(|b| match (b.positive_fraction, b.confidence) {
            (Some(f), Some(c)) => Some(T::from_count(b.count) / n * (f - c).abs()),
            _ => None,
        })
        .sum()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_records<T>(records: &[PredictionRecord<T>]) -> Self {
        let mut c = Confusion::default();
        for r in records {
            match (r.predicted, r.label) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics<T> {
    pub accuracy: T,
    pub precision: T,
    pub recall: T,
    pub f1: T,
    pub confusion: Confusion,
    /// No predicted positives; precision reported as 0.
    pub precision_undefined: bool,
    /// No actual positives; recall reported as 0.
    pub recall_undefined: bool,
    /// Precision or recall undefined, or both zero; F1 reported as 0.
    pub f1_undefined: bool,
}

pub fn classification_metrics<T: Scalar>(records: &[PredictionRecord<T>]) -> ClassificationMetrics<T> {
    let c = Confusion::from_records(records);
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            (T::zero(), true)
        } else {
            (T::from_count(num) / T::from_count(den), false)
        }
    };
    let (accuracy, _) = ratio(c.tp + c.tn, c.total());
    let (precision, precision_undefined) = ratio(c.tp, c.tp + c.fp);
    let (recall, recall_undefined) = ratio(c.tp, c.tp + c.fn_);
    let sum = precision + recall;
    let f1_undefined = precision_undefined || recall_undefined || sum == T::zero();
    let f1 = if f1_undefined {
        T::zero()
    } else {
        T::lit(2.0) * precision * recall / sum
    };
    ClassificationMetrics {
        accuracy,
        precision,
        recall,
        f1,
        confusion: c,
        precision_undefined,
        recall_undefined,
        f1_undefined,
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half (rank-sum form of the Mann-Whitney statistic).
pub fn auroc<T: Scalar>(records: &[PredictionRecord<T>]) -> Result<T, MetricError> {
    let n_pos = records.iter().filter(|r| r.label).count();
    let n_neg = records.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::Degenerate);
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[a]
            .probability
            .partial_cmp(&records[b].probability)
            .expect("finite probabilities")
    });

    // Sum of ranks of positives, using doubled ranks to stay in integers.
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && records[order[j]].probability == records[order[i]].probability {
            j += 1;
        }
        // ranks i+1..=j share their mean (i + 1 + j) / 2
        let doubled_mean = (i + 1 + j) as u128;
        let positives = order[i..j].iter().filter(|&&k| records[k].label).count() as u128;
        doubled_rank_sum += doubled_mean * positives;
        i = j;
    }
    let p = n_pos as u128;
    let doubled_u = doubled_rank_sum - p * (p + 1);
    let pairs = T::from_count(n_pos) * T::from_count(n_neg);
    Ok(T::from_u128(doubled_u).expect("count") / (T::lit(2.0) * pairs))
}

/// Fixed-width counts over `[0, max]`; values at or above `max` land in the
/// last bin and values below zero in the first.
pub fn histogram<T: Scalar>(values: impl IntoIterator<Item = T>, max: T, bins: usize) -> Vec<usize> {
    assert!(
        bins >= 1 && max > T::zero(),
        "histogram needs bins and a positive range"
    );
    let mut counts = vec![0usize; bins];
    let b = T::from_count(bins);
    for v in values {
        let slot = (v / max * b).floor().to_isize().unwrap_or(0);
        counts[slot.clamp(0, bins as isize - 1) as usize] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningPoint<T> {
    pub k_percent: f64,
    pub screened: usize,
    pub hits: usize,
    pub success_rate: T,
}

/// Number of records in the top `k` percent: `ceil(n k / 100)`, at least one.
pub fn screened_count(n: usize, k_percent: f64) -> usize {
    // tolerance absorbs representation error in fractional k
    let raw = (n as f64 * k_percent / 100.0 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(n)
}

/// Success rate among the top-K% records ranked by descending probability;
/// equal probabilities keep input order.
pub fn screening_curve<T: Scalar>(records: &[PredictionRecord<T>], k_grid: &[f64]) -> Vec<ScreeningPoint<T>> {
    assert!(!records.is_empty(), "screening needs records");
    let ranked = rank_descending(records);
    k_grid
        .iter()
        .map(|&k| {
            assert!(k > 0.0 && k <= 100.0, "K must lie in (0, 100]");
            let screened = screened_count(records.len(), k);
            let hits = ranked[..screened].iter().filter(|&&i| records[i].label).count();
            ScreeningPoint {
                k_percent: k,
                screened,
                hits,
                success_rate: T::from_count(hits) / T::from_count(screened),
            }
        })
        .collect()
}

/// Record indices sorted by descending probability, stable.
pub fn rank_descending<T: Scalar>(records: &[PredictionRecord<T>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[b]
            .probability
            .partial_cmp(&records[a].probability)
            .expect("finite probabilities")
    });
    order
}

/// Output-probability histograms split by confusion outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeHistograms {
    pub tp: Vec<usize>,
    pub fp: Vec<usize>,
    pub tn: Vec<usize>,
    #[serde(rename = "fn")]
    pub fn_: Vec<usize>,
}

impl OutcomeHistograms {
    pub fn from_records<T: Scalar>(records: &[PredictionRecord<T>], bins: usize) -> Self {
        let split = |pred: bool, label: bool| {
            histogram(
                records
                    .iter()
                    .filter(|r| r.predicted == pred && r.label == label)
                    .map(|r| r.probability),
                T::one(),
                bins,
            )
        };
        Self {
            tp: split(true, true),
            fp: split(true, false),
            tn: split(false, false),
            fn_: split(false, true),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSettings {
    pub calibration_bins: usize,
    pub entropy_bins: usize,
    pub output_bins: usize,
    pub k_grid: Vec<f64>,
}

impl Default for ReportSettings {
    fn default() -> Self {
        Self {
            calibration_bins: DEFAULT_BINS,
            entropy_bins: DEFAULT_HISTOGRAM_BINS,
            output_bins: DEFAULT_HISTOGRAM_BINS,
            k_grid: DEFAULT_K_GRID.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport<T> {
    pub n: usize,
    pub bins: Vec<CalibrationBin<T>>,
    pub ece: T,
    /// ECE against the per-bin positive share; see [`positive_fraction_ece`].
    pub ece_positive_fraction: T,
    /// Counts over `[0, ln 2]`.
    pub entropy_histogram: Vec<usize>,
    /// Counts over `[0, 1]`.
    pub output_histogram: Vec<usize>,
    pub outcome_histograms: OutcomeHistograms,
    pub classification: ClassificationMetrics<T>,
    /// `None` when only one class is present.
    pub auroc: Option<T>,
    pub screening: Vec<ScreeningPoint<T>>,
}

impl<T: Scalar> ReliabilityReport<T> {
    pub fn from_records(records: &[PredictionRecord<T>], settings: &ReportSettings) -> Self {
        let bins = bin_predictions(records, settings.calibration_bins);
        Self {
            n: records.len(),
            ece: ece_from_bins(&bins),
            ece_positive_fraction: positive_fraction_ece(&bins),
            bins,
            entropy_histogram: histogram(
                records.iter().map(|r| entropy(r.probability)),
                T::lit(LN_2),
                settings.entropy_bins,
            ),
            output_histogram: histogram(records.iter().map(|r| r.probability), T::one(), settings.output_bins),
            outcome_histograms: OutcomeHistograms::from_records(records, settings.output_bins),
            classification: classification_metrics(records),
            auroc: auroc(records).ok(),
            screening: if records.is_empty() {
                Vec::new()
            } else {
                screening_curve(records, &settings.k_grid)
            },
        }
    }
}
