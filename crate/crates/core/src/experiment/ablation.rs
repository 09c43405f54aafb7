//! Sweeps over architectures, regularizers and the focal-loss grid.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, InferenceMode};
use super::data::load_dataset;
use super::report::metric_rows;
use super::run::{persist, run_in_memory, write_json, RunOutcome};
use super::{ExperimentError, ExperimentResult};
use crate::featurize::MolecularGraph;
use crate::model::{NodeEmbedding, Readout};
use crate::objectives::LossConfig;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Architectures,
    Regularizers,
    FocalGrid,
}

impl FromStr for AblationAxis {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "architectures" => Ok(Self::Architectures),
            "regularizers" => Ok(Self::Regularizers),
            "focal_grid" | "focal-grid" => Ok(Self::FocalGrid),
            other => Err(ExperimentError::Config(format!("unknown ablation axis {other:?}"))),
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Architectures => "architectures",
            Self::Regularizers => "regularizers",
            Self::FocalGrid => "focal_grid",
        })
    }
}

/// One configuration in a sweep. `config` is unresolved, so a variant that
/// changes the dropout rate also changes the coupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub config: ExperimentConfig,
}

impl AblationAxis {
    pub fn variants(self, base: &ExperimentConfig) -> Vec<Variant> {
        let with = |name: String, edit: &dyn Fn(&mut ExperimentConfig)| {
            let mut config = base.clone();
            edit(&mut config);
            Variant { name, config }
        };
        let a = &base.ablation;
        match self {
            Self::Architectures => [NodeEmbedding::Gcn, NodeEmbedding::Gat]
                .into_iter()
                .flat_map(|e| [Readout::Sum, Readout::Attn].map(|r| (e, r)))
                .map(|(e, r)| {
                    let mut cfg = base.clone();
                    cfg.model.node_embedding = e;
                    cfg.model.readout = r;
                    Variant {
                        name: cfg.model.architecture_name(),
                        config: cfg,
                    }
                })
                .collect(),
            Self::Regularizers => {
                let plain = |c: &mut ExperimentConfig| {
                    c.model.dropout_rate = 0.0;
                    c.loss = LossConfig::Bce {};
                    c.inference.mode = InferenceMode::Deterministic;
                };
                vec![
                    with("Baseline".into(), &plain),
                    with("DO".into(), &|c| {
                        plain(c);
                        c.model.dropout_rate = a.dropout_rate;
                    }),
                    with("MC-DO".into(), &|c| {
                        plain(c);
                        c.model.dropout_rate = a.dropout_rate;
                        c.inference.mode = InferenceMode::McDropout;
                    }),
                    with("LS".into(), &|c| {
                        plain(c);
                        c.loss = LossConfig::Ls { alpha: a.ls_alpha };
                    }),
                    with("ERL".into(), &|c| {
                        plain(c);
                        c.loss = LossConfig::Erl { beta: a.erl_beta };
                    }),
                ]
            }
            Self::FocalGrid => {
                let mut out = vec![with("BCE".into(), &|c| c.loss = LossConfig::Bce {})];
                for &alpha in &a.focal_alphas {
                    for &gamma in &a.focal_gammas {
                        out.push(with(format!("WFL(alpha={alpha},gamma={gamma})"), &|c| {
                            c.loss = LossConfig::Wfl { alpha, gamma }
                        }));
                    }
                }
                out
            }
        }
    }
}

/// Metrics of one variant, either for one seed or averaged over all seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: String,
    /// `None` marks the seed-averaged row.
    pub seed: Option<u64>,
    pub accuracy: f64,
    pub auroc: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ece: f64,
    pub ece_positive_fraction: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub axis: AblationAxis,
    pub seeds: Vec<u64>,
    /// Per-seed rows of every variant followed by its mean row.
    pub rows: Vec<SummaryRow>,
}

impl AblationSummary {
    pub fn mean(&self, variant: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.variant == variant && r.seed.is_none())
    }

    pub fn per_seed<'a>(&'a self, variant: &'a str) -> impl Iterator<Item = &'a SummaryRow> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.variant == variant && r.seed.is_some())
    }

    pub fn write_csv(&self, path: &Path) -> ExperimentResult<()> {
        let mut w = csv::Writer::from_path(path).map_err(ExperimentError::csv(path))?;
        w.write_record([
            "variant",
            "seed",
            "accuracy",
            "auroc",
            "precision",
            "recall",
            "f1",
            "ece",
            "ece_positive_fraction",
            "weight_decay",
        ])
        .map_err(ExperimentError::csv(path))?;
        for r in &self.rows {
            let seed = r.seed.map_or("mean".to_string(), |s| s.to_string());
            let fields = [
                r.variant.clone(),
                seed,
                r.accuracy.to_string(),
                r.auroc.map(|v| v.to_string()).unwrap_or_default(),
                r.precision.to_string(),
                r.recall.to_string(),
                r.f1.to_string(),
                r.ece.to_string(),
                r.ece_positive_fraction.to_string(),
                r.weight_decay.to_string(),
            ];
            w.write_record(&fields).map_err(ExperimentError::csv(path))?;
        }
        w.flush().map_err(ExperimentError::io(path))
    }
}

fn row_from_outcome<T: Scalar>(variant: &str, outcome: &RunOutcome<T>) -> ExperimentResult<SummaryRow> {
    let report = outcome
        .manifest
        .report
        .as_ref()
        .ok_or_else(|| ExperimentError::EmptyDataset("test split".into()))?;
    let metrics = metric_rows(report);
    let get = |name: &str| metrics.iter().find(|(m, _)| *m == name).and_then(|(_, v)| *v);
    Ok(SummaryRow {
        variant: variant.to_string(),
        seed: Some(outcome.manifest.seed),
        accuracy: get("accuracy").unwrap_or(f64::NAN),
        auroc: get("auroc"),
        precision: get("precision").unwrap_or(f64::NAN),
        recall: get("recall").unwrap_or(f64::NAN),
        f1: get("f1").unwrap_or(f64::NAN),
        ece: get("ece").unwrap_or(f64::NAN),
        ece_positive_fraction: get("ece_positive_fraction").unwrap_or(f64::NAN),
        weight_decay: outcome.manifest.config.optimizer.weight_decay.unwrap_or(f64::NAN),
    })
}

/// Arithmetic mean of the per-seed rows; AUROC is averaged only when every seed has one.
pub fn mean_row(variant: &str, rows: &[SummaryRow]) -> SummaryRow {
    let n = rows.len() as f64;
    let avg = |f: fn(&SummaryRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let auroc = rows
        .iter()
        .map(|r| r.auroc)
        .collect::<Option<Vec<f64>>>()
        .map(|v| v.iter().sum::<f64>() / n);
    SummaryRow {
        variant: variant.to_string(),
        seed: None,
        accuracy: avg(|r| r.accuracy),
        auroc,
        precision: avg(|r| r.precision),
        recall: avg(|r| r.recall),
        f1: avg(|r| r.f1),
        ece: avg(|r| r.ece),
        ece_positive_fraction: avg(|r| r.ece_positive_fraction),
        weight_decay: avg(|r| r.weight_decay),
    }
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect()
}

/// Runs every variant of `axis` over every configured seed. Jobs run on up
/// to `threads` workers; results do not depend on the worker count.
/// With `out_dir`, each run is persisted under `<variant>/seed<k>/` and the
/// summary is written to `ablation_summary.csv`.
pub fn run_ablation<T: Scalar>(
    base: &ExperimentConfig,
    axis: AblationAxis,
    out_dir: Option<&Path>,
    threads: usize,
) -> ExperimentResult<AblationSummary> {
    let base_resolved = base.resolved()?;
    let dataset = load_dataset::<T>(&base_resolved.dataset)?;
    let variants = axis
        .variants(base)
        .into_iter()
        .map(|v| Ok((v.name, v.config.resolved()?)))
        .collect::<ExperimentResult<Vec<_>>>()?;
    let seeds = base_resolved.training.seeds.clone();
    let jobs: Vec<(usize, u64)> = (0..variants.len())
        .flat_map(|v| seeds.iter().map(move |&s| (v, s)))
        .collect();

    let run_job = |&(v, seed): &(usize, u64), graphs: &[MolecularGraph<T>]| -> ExperimentResult<SummaryRow> {
        let (name, config) = &variants[v];
        let outcome = run_in_memory(config, graphs, &dataset.report, seed)?;
        if let Some(dir) = out_dir {
            persist(&outcome, &dir.join(slug(name)).join(format!("seed{seed}")))?;
        }
        row_from_outcome(name, &outcome)
    };

    let results: Vec<Mutex<Option<ExperimentResult<SummaryRow>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    thread::scope(|scope| {
        for _ in 0..threads.clamp(1, jobs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let r = run_job(&jobs[i], &dataset.graphs);
                *results[i].lock().unwrap() = Some(r);
            });
        }
    });

    let mut per_job = Vec::with_capacity(jobs.len());
    for slot in results {
        per_job.push(slot.into_inner().unwrap().expect("every job ran")?);
    }
    let mut rows = Vec::new();
    for (v, (name, _)) in variants.iter().enumerate() {
        let seed_rows: Vec<SummaryRow> = per_job[v * seeds.len()..(v + 1) * seeds.len()].to_vec();
        let mean = mean_row(name, &seed_rows);
        rows.extend(seed_rows);
        rows.push(mean);
    }
    let summary = AblationSummary { axis, seeds, rows };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(ExperimentError::io(dir))?;
        summary.write_csv(&dir.join("ablation_summary.csv"))?;
        write_json(&dir.join("ablation_summary.json"), &summary)?;
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ExperimentConfig {
        ExperimentConfig::from_toml(
            r#"
[dataset]
name = "t"
path = "t.csv"
smiles_column = "s"
label_column = "y"
[model]
node_embedding = "gcn"
readout = "attn"
"#,
        )
        .unwrap()
    }

    #[test]
    fn variant_sets() {
        let b = base();
        let names: Vec<String> = AblationAxis::Architectures
            .variants(&b)
            .into_iter()
            .map(|v| v.name)
            .collect();
        assert_eq!(names, ["GCN+Sum", "GCN+Attn", "GAT+Sum", "GAT+Attn"]);

        let regs = AblationAxis::Regularizers.variants(&b);
        let names: Vec<&str> = regs.iter().map(|v| v.name.as_str()).collect();
        assert_eq!(names, ["Baseline", "DO", "MC-DO", "LS", "ERL"]);
        let decay: Vec<f64> = regs
            .iter()
            .map(|v| v.config.resolved().unwrap().optimizer.weight_decay.unwrap())
            .collect();
        assert_eq!(decay[0], 1e-4);
        assert_eq!(decay[1], 1e-4 * (1.0 - 0.2));
        assert_eq!(regs[2].config.inference.mode, InferenceMode::McDropout);

        let grid = AblationAxis::FocalGrid.variants(&b);
        assert_eq!(grid.len(), 1 + 5 * 3);
    }

    #[test]
    fn mean_row_is_arithmetic_mean() {
        let mk = |seed, acc, auroc| SummaryRow {
            variant: "v".into(),
            seed: Some(seed),
            accuracy: acc,
            auroc,
            precision: 0.5,
            recall: 0.25,
            f1: 0.1,
            ece: 0.2,
            ece_positive_fraction: 0.05,
            weight_decay: 1e-4,
        };
        let m = mean_row("v", &[mk(0, 0.7, Some(0.8)), mk(1, 0.9, Some(0.6))]);
        assert_eq!(m.accuracy, (0.7 + 0.9) / 2.0);
        assert_eq!(m.auroc, Some((0.8 + 0.6) / 2.0));
        assert_eq!(mean_row("v", &[mk(0, 0.7, None), mk(1, 0.9, Some(0.6))]).auroc, None);
    }

    #[test]
    fn axis_parsing() {
        assert_eq!("focal_grid".parse::<AblationAxis>().unwrap(), AblationAxis::FocalGrid);
        assert!("other".parse::<AblationAxis>().is_err());
    }
}
