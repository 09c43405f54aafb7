//! Acceptance report: one line per criterion.
//!
//! Dataset-backed criteria (5-7) look for MoleculeNet CSVs in
//! `$CALIBGNN_DATA_DIR`, falling back to `<repo>/data`:
//! `bace.csv` (mol, Class), `BBBP.csv` (smiles, p_np), `HIV.csv`
//! (smiles, HIV_active). File names are matched case-insensitively. Without
//! them those criteria print BLOCKED and are not asserted.
//!
//! Criterion 7 trains 21 variants x 5 seeds. It runs on BACE only when
//! `CALIBGNN_DIRECTIONAL=1`; otherwise the table is produced on a synthetic
//! stand-in so the harness itself is exercised.

mod common;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use calibgnn::experiment::{self, AblationAxis, AblationSummary, DatasetSpec, ExperimentConfig, LabelRule};
use calibgnn::selftest::{self, CheckOutcome};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Fail,
    Blocked,
    Info,
}

struct Line {
    id: u32,
    name: &'static str,
    status: Status,
    detail: String,
}

impl Line {
    fn new(id: u32, name: &'static str, passed: bool, detail: String) -> Self {
        let status = if passed { Status::Pass } else { Status::Fail };
        Self {
            id,
            name,
            status,
            detail,
        }
    }
}

fn from_checks(id: u32, name: &'static str, checks: &[CheckOutcome], extra: Option<(bool, String)>) -> Line {
    let mut passed = checks.iter().all(|c| c.passed);
    let mut detail = checks
        .iter()
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect::<Vec<_>>()
        .join("; ");
    if let Some((ok, text)) = extra {
        passed &= ok;
        write!(detail, "; {text}").unwrap();
    }
    Line::new(id, name, passed, detail)
}

fn data_dir() -> PathBuf {
    std::env::var_os("CALIBGNN_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn find_csv(name: &str) -> Option<PathBuf> {
    let dir = data_dir();
    std::fs::read_dir(&dir)
        .ok()?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .find(|p| {
            p.file_name()
                .and_then(|f| f.to_str())
                .is_some_and(|f| f.eq_ignore_ascii_case(name))
        })
}

struct Corpus {
    file: &'static str,
    smiles: &'static str,
    label: &'static str,
    rows: usize,
    min_acceptance: f64,
}

const CORPORA: [Corpus; 3] = [
    Corpus {
        file: "bace.csv",
        smiles: "mol",
        label: "Class",
        rows: 1513,
        min_acceptance: 0.99,
    },
    Corpus {
        file: "BBBP.csv",
        smiles: "smiles",
        label: "p_np",
        rows: 2050,
        min_acceptance: 0.99,
    },
    Corpus {
        file: "HIV.csv",
        smiles: "smiles",
        label: "HIV_active",
        rows: 41127,
        min_acceptance: 0.97,
    },
];

fn spec_for(c: &Corpus, path: PathBuf) -> DatasetSpec {
    DatasetSpec {
        name: c.file.trim_end_matches(".csv").to_lowercase(),
        path,
        smiles_column: c.smiles.into(),
        label_column: c.label.into(),
        label_rule: LabelRule::Direct,
        strip_salts: true,
        id_column: None,
    }
}

fn criterion_gradients() -> Line {
    let start = Instant::now();
    let check = selftest::gradient_suite(&[0, 1, 2], 5);
    let secs = start.elapsed().as_secs_f64();
    from_checks(
        1,
        "gradient suite",
        &[check],
        Some((secs < 60.0, format!("runtime {secs:.2}s (budget 60s)"))),
    )
}

fn criterion_losses() -> Line {
    from_checks(2, "loss identities", &[selftest::loss_identities(100, 11)], None)
}

fn criterion_metrics() -> Line {
    from_checks(3, "metric oracles", &[selftest::metric_oracles(1000, 12)], None)
}

fn criterion_invariances() -> Line {
    from_checks(4, "model invariances", &selftest::model_invariances(100, 13), None)
}

fn criterion_corpus() -> Line {
    let mut detail = Vec::new();
    let mut missing = Vec::new();
    let mut passed = true;
    for c in &CORPORA {
        let Some(path) = find_csv(c.file) else {
            missing.push(c.file);
            continue;
        };
        match experiment::load_dataset::<f64>(&spec_for(c, path)) {
            Ok(ds) => {
                let r = &ds.report;
                let acceptance = r.smiles_acceptance();
                let counted = r.ingested + r.skipped_count() == r.total_rows;
                let ok = acceptance >= c.min_acceptance && r.total_rows == c.rows && counted;
                passed &= ok;
                detail.push(format!(
                    "{}: {}/{} rows ingested, {} skipped, parser acceptance {:.2}% (need {:.0}%), {} positive / {} negative{}",
                    c.file,
                    r.ingested,
                    r.total_rows,
                    r.skipped_count(),
                    100.0 * acceptance,
                    100.0 * c.min_acceptance,
                    r.positives,
                    r.negatives,
                    if r.total_rows == c.rows { String::new() } else { format!(", expected {} rows", c.rows) }
                ));
            }
            Err(e) => {
                passed = false;
                detail.push(format!("{}: {e}", c.file));
            }
        }
    }
    let mut line = Line::new(5, "SMILES corpus", passed, detail.join("; "));
    if !missing.is_empty() && line.status == Status::Pass {
        line.status = Status::Blocked;
    }
    if !missing.is_empty() {
        let sep = if line.detail.is_empty() { "" } else { "; " };
        line.detail = format!(
            "{}{sep}no data for {} in {}",
            line.detail,
            missing.join(", "),
            data_dir().display()
        );
    }
    line
}

fn bace_config(path: &Path, model: &str) -> ExperimentConfig {
    let text = format!(
        r#"
[dataset]
name = "bace"
path = "{}"
smiles_column = "mol"
label_column = "Class"

[model]
{model}

[optimizer]
initial_lr = 1e-3
decay_factor = 0.1
decay_epochs = [80, 160]

[training]
epochs = 200
seeds = [0, 1, 2, 3, 4]
"#,
        path.display()
    );
    ExperimentConfig::from_toml(&text).expect("valid BACE config")
}

const FULL_MODEL: &str = r#"node_embedding = "gcn"
readout = "attn"
num_layers = 4
hidden_dim = 64
graph_dim = 256"#;

fn criterion_training() -> Line {
    let Some(path) = find_csv("bace.csv") else {
        return Line {
            id: 6,
            name: "BACE training smoke",
            status: Status::Blocked,
            detail: format!("no data: bace.csv not found in {}", data_dir().display()),
        };
    };
    let cfg = bace_config(&path, FULL_MODEL);
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    match experiment::train::<f64>(&cfg, 0, dir.path()) {
        Ok(outcome) => {
            let secs = start.elapsed().as_secs_f64();
            let Some(report) = outcome.manifest.report else {
                return Line::new(6, "BACE training smoke", false, "empty test split".into());
            };
            let acc = report.classification.accuracy;
            let auroc = report.auroc.unwrap_or(f64::NAN);
            Line::new(
                6,
                "BACE training smoke",
                acc >= 0.70 && auroc >= 0.80 && secs < 1800.0,
                format!(
                    "seed 0, 200 epochs: accuracy {acc:.4} (need >= 0.70), AUROC {auroc:.4} (need >= 0.80), runtime {secs:.0}s (budget 1800s)"
                ),
            )
        }
        Err(e) => Line::new(6, "BACE training smoke", false, format!("training failed: {e}")),
    }
}

fn table(reg: &AblationSummary, focal: &AblationSummary) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "    {:<26} {:>8} {:>8} {:>10} {:>8}",
        "variant", "acc", "auroc", "ece", "ece_pf"
    )
    .unwrap();
    for name in ["Baseline", "MC-DO"] {
        if let Some(r) = reg.mean(name) {
            writeln!(
                out,
                "    {:<26} {:>8.4} {:>8} {:>10.4} {:>8.4}",
                r.variant,
                r.accuracy,
                r.auroc.map_or("-".into(), |a| format!("{a:.4}")),
                r.ece,
                r.ece_positive_fraction
            )
            .unwrap();
        }
    }
    writeln!(
        out,
        "    {:<26} {:>9} {:>8} {:>8}",
        "focal variant", "precision", "recall", "f1"
    )
    .unwrap();
    for r in focal.rows.iter().filter(|r| r.seed.is_none()) {
        writeln!(
            out,
            "    {:<26} {:>9.4} {:>8.4} {:>8.4}",
            r.variant, r.precision, r.recall, r.f1
        )
        .unwrap();
    }
    out
}

/// Per gamma: does mean recall rise and precision fall as alpha grows?
fn focal_trend(focal: &AblationSummary, gammas: &[f64], alphas: &[f64]) -> String {
    gammas
        .iter()
        .map(|g| {
            let rows: Vec<_> = alphas
                .iter()
                .filter_map(|a| focal.mean(&format!("WFL(alpha={a},gamma={g})")))
                .collect();
            let rising = rows.windows(2).all(|w| w[1].recall >= w[0].recall);
            let falling = rows.windows(2).all(|w| w[1].precision <= w[0].precision);
            format!("gamma={g}: recall non-decreasing {rising}, precision non-increasing {falling}")
        })
        .collect::<Vec<_>>()
        .join("; ")
}

fn directional(cfg: &ExperimentConfig) -> Result<(String, String), String> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let reg =
        experiment::run_ablation::<f64>(cfg, AblationAxis::Regularizers, None, threads).map_err(|e| e.to_string())?;
    let focal =
        experiment::run_ablation::<f64>(cfg, AblationAxis::FocalGrid, None, threads).map_err(|e| e.to_string())?;
    let ece = match (reg.mean("Baseline"), reg.mean("MC-DO")) {
        (Some(b), Some(m)) => format!(
            "MC-DO ECE {:.4} vs baseline {:.4} ({}); positive-fraction ECE {:.4} vs {:.4}",
            m.ece,
            b.ece,
            if m.ece < b.ece { "lower" } else { "not lower" },
            m.ece_positive_fraction,
            b.ece_positive_fraction
        ),
        _ => "missing rows".into(),
    };
    let trend = focal_trend(&focal, &cfg.ablation.focal_gammas, &cfg.ablation.focal_alphas);
    Ok((format!("{ece}; {trend}"), table(&reg, &focal)))
}

fn criterion_directional() -> (Line, String) {
    let name = "directional findings";
    let run_bace = std::env::var("CALIBGNN_DIRECTIONAL").is_ok_and(|v| v == "1");
    match (find_csv("bace.csv"), run_bace) {
        (Some(path), true) => {
            let cfg = bace_config(&path, FULL_MODEL);
            match directional(&cfg) {
                Ok((summary, table)) => (
                    Line {
                        id: 7,
                        name,
                        status: Status::Info,
                        detail: format!("BACE, 5 seeds, 200 epochs: {summary}"),
                    },
                    table,
                ),
                Err(e) => (
                    Line::new(7, name, false, format!("ablation failed: {e}")),
                    String::new(),
                ),
            }
        }
        (found, _) => {
            let dir = tempfile::tempdir().unwrap();
            let data = common::write_dataset(dir.path(), "stand_in.csv", 240, (6, 18), 77);
            let text = common::config_toml(&data, "seeds = [0, 1, 2, 3, 4]\nepochs = 4").replace(
                "[training]\nepochs = 3\nbatch_size = 16\nseeds = [0, 1]\n",
                "[training]\nbatch_size = 16\n",
            );
            let cfg = ExperimentConfig::from_toml(&text).expect("stand-in config");
            let why = if found.is_some() {
                "BACE present; set CALIBGNN_DIRECTIONAL=1 for the full run"
            } else {
                "no data: bace.csv not found"
            };
            match directional(&cfg) {
                Ok((summary, table)) => (
                    Line {
                        id: 7,
                        name,
                        status: Status::Blocked,
                        detail: format!(
                            "{why}; harness exercised on a synthetic stand-in (5 seeds, 4 epochs): {summary}"
                        ),
                    },
                    table,
                ),
                Err(e) => (
                    Line::new(7, name, false, format!("stand-in ablation failed: {e}")),
                    String::new(),
                ),
            }
        }
    }
}

fn criterion_reproducibility() -> Line {
    let dir = tempfile::tempdir().unwrap();
    let data = common::write_dataset(dir.path(), "repro.csv", 120, (6, 16), 5);
    let text = common::config_toml(&data, "\n[inference]\nmode = \"mc_dropout\"\n").replace(
        "graph_dim = 16\n",
        "graph_dim = 16\ndropout_rate = 0.1\nmc_samples = 5\n",
    );
    let cfg = ExperimentConfig::from_toml(&text).expect("repro config");
    let files = [
        "manifest.json",
        "checkpoint.json",
        "predictions.csv",
        "training_loss.csv",
        "metrics.csv",
    ];
    let mut runs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        if let Err(e) = experiment::train::<f64>(&cfg, 3, &out) {
            return Line::new(8, "reproducibility", false, format!("run {k} failed: {e}"));
        }
        runs.push(out);
    }
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(runs[0].join(f)).ok() != std::fs::read(runs[1].join(f)).ok())
        .collect();
    Line::new(
        8,
        "reproducibility",
        differing.is_empty(),
        if differing.is_empty() {
            format!("two runs, same config and seed: {} byte-identical", files.join(", "))
        } else {
            format!("differs: {}", differing.join(", "))
        },
    )
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        // `cargo test -- --list` probes every target; there are no named tests here.
        return ExitCode::SUCCESS;
    }
    let (directional, table) = criterion_directional();
    let lines = [
        criterion_gradients(),
        criterion_losses(),
        criterion_metrics(),
        criterion_invariances(),
        criterion_corpus(),
        criterion_training(),
        directional,
        criterion_reproducibility(),
    ];
    for l in &lines {
        let tag = match l.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Blocked => "BLOCKED",
            Status::Info => "INFO",
        };
        println!("criterion {} [{tag}] {}: {}", l.id, l.name, l.detail);
        if l.id == 7 && !table.is_empty() {
            print!("{table}");
        }
    }
    if lines.iter().any(|l| l.status == Status::Fail) {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
