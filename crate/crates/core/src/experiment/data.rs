//! CSV ingestion and seeded train/test splitting.

use std::fs::File;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ExperimentError, ExperimentResult};
use crate::featurize::{graph_from_smiles, GraphBuildError, MolecularGraph};
use crate::scalar::Scalar;
use crate::smiles::parse_smiles;

/// Activity cutoff: a compound is positive when `pIC50 >= 7.0`.
pub const PIC50_THRESHOLD: f64 = 7.0;

/// How the label column becomes a binary target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// `0`/`1` (also `0.0`/`1.0`, `true`/`false`).
    #[default]
    Direct,
    /// Real-valued pIC50, thresholded at [`PIC50_THRESHOLD`].
    Pic50,
}

impl LabelRule {
    pub fn apply(self, raw: &str) -> Option<bool> {
        let raw = raw.trim();
        match self {
            LabelRule::Direct => match raw {
                "1" | "true" | "True" => Some(true),
                "0" | "false" | "False" => Some(false),
                _ => match raw.parse::<f64>().ok()? {
                    1.0 => Some(true),
                    0.0 => Some(false),
                    _ => None,
                },
            },
            LabelRule::Pic50 => {
                let v: f64 = raw.parse().ok()?;
                v.is_finite().then_some(v >= PIC50_THRESHOLD)
            }
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    pub path: PathBuf,
    pub smiles_column: String,
    pub label_column: String,
    #[serde(default)]
    pub label_rule: LabelRule,
    #[serde(default = "default_true")]
    pub strip_salts: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_column: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedRow {
    /// 1-based data row (header excluded).
    pub row: usize,
    pub reason: String,
}

/// Row accounting for one ingestion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub total_rows: usize,
    pub ingested: usize,
    pub malformed_rows: usize,
    pub smiles_failures: usize,
    pub feature_failures: usize,
    pub label_failures: usize,
    pub positives: usize,
    pub negatives: usize,
    pub skipped: Vec<SkippedRow>,
}

impl IngestReport {
    pub fn skipped_count(&self) -> usize {
        self.total_rows - self.ingested
    }

    /// Fraction of rows whose SMILES the parser accepted.
    pub fn smiles_acceptance(&self) -> f64 {
        if self.total_rows == 0 {
            return 0.0;
        }
        let rejected = self.malformed_rows + self.smiles_failures;
        (self.total_rows - rejected) as f64 / self.total_rows as f64
    }

    fn skip(&mut self, row: usize, reason: String) {
        self.skipped.push(SkippedRow { row, reason });
    }
}

#[derive(Debug, Clone)]
pub struct Dataset<T: Scalar> {
    pub graphs: Vec<MolecularGraph<T>>,
    pub report: IngestReport,
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

fn open_csv(path: &Path) -> ExperimentResult<csv::Reader<File>> {
    let file = File::open(path).map_err(ExperimentError::io(path))?;
    Ok(csv::ReaderBuilder::new().flexible(true).from_reader(file))
}

/// Reads a labeled CSV. Rows whose SMILES, features or label cannot be used
/// are skipped and accounted for in the report.
pub fn load_dataset<T: Scalar>(spec: &DatasetSpec) -> ExperimentResult<Dataset<T>> {
    let path = spec.path.as_path();
    let mut reader = open_csv(path)?;
    let headers = reader.headers().map_err(ExperimentError::csv(path))?.clone();
    let mut wanted = vec![spec.smiles_column.as_str(), spec.label_column.as_str()];
    wanted.extend(spec.id_column.as_deref());
    let missing: Vec<String> = wanted
        .iter()
        .filter(|c| column_index(&headers, c).is_none())
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(ExperimentError::Schema {
            path: path.to_path_buf(),
            missing,
        });
    }
    let smiles_col = column_index(&headers, &spec.smiles_column).unwrap();
    let label_col = column_index(&headers, &spec.label_column).unwrap();
    let id_col = spec.id_column.as_deref().and_then(|c| column_index(&headers, c));

    let mut report = IngestReport::default();
    let mut graphs = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        report.total_rows += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) if e.is_io_error() => return Err(ExperimentError::csv(path)(e)),
            Err(e) => {
                report.malformed_rows += 1;
                report.skip(row, format!("malformed row: {e}"));
                continue;
            }
        };
        let (Some(smiles), Some(raw_label)) = (record.get(smiles_col), record.get(label_col)) else {
            report.malformed_rows += 1;
            report.skip(row, "row is missing fields".into());
            continue;
        };
        let smiles = smiles.trim();
        let mut graph = match graph_from_smiles::<T>(smiles, spec.strip_salts) {
            Ok(g) => g,
            Err(GraphBuildError::Smiles(e)) => {
                report.smiles_failures += 1;
                report.skip(row, format!("SMILES: {e}"));
                continue;
            }
            Err(GraphBuildError::Feature(e)) => {
                report.feature_failures += 1;
                report.skip(row, format!("features: {e}"));
                continue;
            }
        };
        let Some(label) = spec.label_rule.apply(raw_label) else {
            report.label_failures += 1;
            report.skip(row, format!("label {raw_label:?} not usable"));
            continue;
        };
        if let Some(id) = id_col.and_then(|c| record.get(c)) {
            graph.source_id = Some(id.trim().to_string());
        }
        graph.label = Some(label);
        if label {
            report.positives += 1;
        } else {
            report.negatives += 1;
        }
        report.ingested += 1;
        graphs.push(graph);
    }
    if graphs.is_empty() {
        return Err(ExperimentError::EmptyDataset(spec.name.clone()));
    }
    Ok(Dataset { graphs, report })
}

/// Result of linting one SMILES column without featurizing or labeling.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseCheck {
    pub total: usize,
    pub accepted: usize,
    pub failures: Vec<SkippedRow>,
}

pub fn parse_check(path: &Path, column: &str) -> ExperimentResult<ParseCheck> {
    let mut reader = open_csv(path)?;
    let headers = reader.headers().map_err(ExperimentError::csv(path))?.clone();
    let col = column_index(&headers, column).ok_or_else(|| ExperimentError::Schema {
        path: path.to_path_buf(),
        missing: vec![column.to_string()],
    })?;
    let mut out = ParseCheck::default();
    for (i, record) in reader.records().enumerate() {
        out.total += 1;
        let record = record.map_err(ExperimentError::csv(path))?;
        match parse_smiles(record.get(col).unwrap_or("").trim()) {
            Ok(_) => out.accepted += 1,
            Err(e) => out.failures.push(SkippedRow {
                row: i + 1,
                reason: e.to_string(),
            }),
        }
    }
    Ok(out)
}

/// Seeded shuffle then prefix split; the first `round(n * ratio)` items train.
pub fn split<I: Clone>(items: &[I], ratio: f64, seed: u64) -> (Vec<I>, Vec<I>) {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((items.len() as f64 * ratio).round() as usize).min(items.len());
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect();
    (pick(&order[..n_train]), pick(&order[n_train..]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn spec(path: PathBuf, rule: LabelRule) -> DatasetSpec {
        DatasetSpec {
            name: "toy".into(),
            path,
            smiles_column: "smiles".into(),
            label_column: "y".into(),
            label_rule: rule,
            strip_salts: true,
            id_column: None,
        }
    }

    fn write(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("d.csv");
        File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn pic50_boundary_is_positive() {
        assert_eq!(LabelRule::Pic50.apply("6.9"), Some(false));
        assert_eq!(LabelRule::Pic50.apply("7.0"), Some(true));
        assert_eq!(LabelRule::Pic50.apply("nan"), None);
        assert_eq!(LabelRule::Direct.apply("1.0"), Some(true));
        assert_eq!(LabelRule::Direct.apply("2"), None);
    }

    #[test]
    fn skips_and_counts_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "smiles,y\nCCO,1\nC(,0\nCC[Xe],1\nCCN,x\nc1ccccc1,0\nCC.[Na+],1\n",
        );
        let d = load_dataset::<f64>(&spec(p, LabelRule::Direct)).unwrap();
        let r = &d.report;
        assert_eq!(r.total_rows, 6);
        assert_eq!(r.ingested, 3);
        assert_eq!(r.smiles_failures, 2);
        assert_eq!(r.label_failures, 1);
        assert_eq!((r.positives, r.negatives), (2, 1));
        assert_eq!(r.skipped.iter().map(|s| s.row).collect::<Vec<_>>(), vec![2, 3, 4]);
        // salt stripped
        assert_eq!(d.graphs[2].num_nodes, 2);
        assert_eq!(d.graphs[0].source_id.as_deref(), Some("CCO"));
    }

    #[test]
    fn schema_and_empty_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "smi,y\nCC,1\n");
        assert!(matches!(
            load_dataset::<f64>(&spec(p, LabelRule::Direct)),
            Err(ExperimentError::Schema { .. })
        ));
        let p = write(dir.path(), "smiles,y\nC(,1\n");
        assert!(matches!(
            load_dataset::<f64>(&spec(p, LabelRule::Direct)),
            Err(ExperimentError::EmptyDataset(_))
        ));
        assert!(matches!(
            load_dataset::<f64>(&spec(dir.path().join("nope.csv"), LabelRule::Direct)),
            Err(ExperimentError::Io { .. })
        ));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let items: Vec<usize> = (0..10).collect();
        let (tr, te) = split(&items, 0.8, 3);
        assert_eq!((tr.len(), te.len()), (8, 2));
        assert_eq!(split(&items, 0.8, 3), (tr.clone(), te.clone()));
        let mut all = [tr, te].concat();
        all.sort();
        assert_eq!(all, items);
        assert!(split(&items, 1.0, 0).1.is_empty());
    }
}
