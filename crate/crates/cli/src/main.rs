use std::path::{Path, PathBuf};
use std::process::ExitCode;

use calibgnn::experiment::{
    self, parse_check, AblationAxis, EvalSubset, ExperimentConfig, ExperimentError, InferenceMode, LabelRule,
};
use calibgnn::selftest;
use calibgnn::smiles::parse_smiles;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "calibgnn",
    version,
    about = "Train and evaluate calibrated GNN molecular classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one model and evaluate it on the held-out split.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Score a saved checkpoint on a dataset.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Score every row instead of the seed's test split.
        #[arg(long)]
        all_rows: bool,
    },
    /// Run one ablation axis over all configured seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Worker threads (runs are independent).
        #[arg(long, default_value_t = default_threads())]
        threads: usize,
    },
    /// Rank a compound library by predicted probability.
    Screen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Library CSV; columns as in the config's [dataset] section unless overridden.
        #[arg(long)]
        library: PathBuf,
        #[arg(long)]
        smiles_column: Option<String>,
        #[arg(long)]
        label_column: Option<String>,
        #[arg(long, value_enum)]
        label_rule: Option<Rule>,
    },
    /// Check SMILES strings, or a SMILES column of a CSV file.
    ParseCheck {
        smiles: Vec<String>,
        #[arg(long)]
        file: Option<PathBuf>,
        #[arg(long, default_value = "smiles")]
        column: String,
    },
    /// Run the oracle and invariant suite.
    Selftest,
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Restricts the run to this seed (default: the first configured seed,
    /// or all seeds for `ablate`).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
    /// Calibration bin count M.
    #[arg(long)]
    bins: Option<usize>,
    /// Decision threshold.
    #[arg(long)]
    threshold: Option<f64>,
    /// MC-dropout sample count T.
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long, value_enum)]
    inference: Option<Inference>,
    /// Keep only the largest fragment of each molecule.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    strip_salts: Option<bool>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Axis {
    Architectures,
    Regularizers,
    FocalGrid,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Inference {
    Deterministic,
    McDropout,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Rule {
    Direct,
    Pic50,
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, ExperimentError> {
        let mut cfg = ExperimentConfig::from_file(&self.config)?;
        if let Some(m) = self.bins {
            cfg.evaluation.bins = m;
        }
        if let Some(t) = self.threshold {
            cfg.evaluation.threshold = t;
        }
        if let Some(t) = self.mc_samples {
            cfg.model.mc_samples = t;
        }
        if let Some(mode) = self.inference {
            cfg.inference.mode = match mode {
                Inference::Deterministic => InferenceMode::Deterministic,
                Inference::McDropout => InferenceMode::McDropout,
            };
        }
        if let Some(s) = self.strip_salts {
            cfg.dataset.strip_salts = s;
        }
        if let Some(seed) = self.seed {
            cfg.training.seeds = vec![seed];
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn seed(&self, cfg: &ExperimentConfig) -> u64 {
        self.seed.unwrap_or(cfg.training.seeds[0])
    }
}

fn save_config(cfg: &ExperimentConfig, dir: &Path) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = dir.join("config.resolved.toml");
    std::fs::write(&path, cfg.resolved()?.to_toml()).map_err(|source| ExperimentError::Io { path, source })
}

fn print_report(report: &calibgnn::ReliabilityReport) {
    let c = &report.classification;
    println!(
        "n={} accuracy={:.4} auroc={} precision={:.4} recall={:.4} f1={:.4} ece={:.4}",
        report.n,
        c.accuracy,
        report.auroc.map_or("undefined".into(), |a| format!("{a:.4}")),
        c.precision,
        c.recall,
        c.f1,
        report.ece
    );
}

/// Exit status on success paths: 0, or 2 when parse-check rejects input and 3 when selftest fails.
fn run(command: Command) -> Result<u8, ExperimentError> {
    match command {
        Command::Train { common } => {
            let cfg = common.load()?;
            let seed = common.seed(&cfg);
            save_config(&cfg, &common.out_dir)?;
            let outcome = experiment::train::<f64>(&cfg, seed, &common.out_dir)?;
            let m = &outcome.manifest;
            println!(
                "ingested {} of {} rows ({} positive, {} negative); train {} / test {}",
                m.ingest.ingested,
                m.ingest.total_rows,
                m.ingest.positives,
                m.ingest.negatives,
                m.split.train,
                m.split.test
            );
            if let Some(last) = m.epochs.last() {
                println!("final epoch {} loss {:.6}", last.epoch, last.loss);
            }
            match &m.report {
                Some(r) => print_report(r),
                None => println!("test split is empty; no report"),
            }
            println!("wrote {}", common.out_dir.display());
        }
        Command::Evaluate {
            common,
            checkpoint,
            all_rows,
        } => {
            let cfg = common.load()?;
            let subset = if all_rows { EvalSubset::All } else { EvalSubset::Test };
            let report = experiment::evaluate::<f64>(&cfg, &checkpoint, common.seed(&cfg), subset, &common.out_dir)?;
            print_report(&report);
        }
        Command::Ablate { common, axis, threads } => {
            let cfg = common.load()?;
            let axis = match axis {
                Axis::Architectures => AblationAxis::Architectures,
                Axis::Regularizers => AblationAxis::Regularizers,
                Axis::FocalGrid => AblationAxis::FocalGrid,
            };
            save_config(&cfg, &common.out_dir)?;
            let summary = experiment::run_ablation::<f64>(&cfg, axis, Some(&common.out_dir), threads)?;
            println!(
                "{:<28} {:>8} {:>8} {:>9} {:>8} {:>8} {:>8}",
                "variant", "acc", "auroc", "precision", "recall", "f1", "ece"
            );
            for r in summary.rows.iter().filter(|r| r.seed.is_none()) {
                println!(
                    "{:<28} {:>8.4} {:>8} {:>9.4} {:>8.4} {:>8.4} {:>8.4}",
                    r.variant,
                    r.accuracy,
                    r.auroc.map_or("-".into(), |a| format!("{a:.4}")),
                    r.precision,
                    r.recall,
                    r.f1,
                    r.ece
                );
            }
        }
        Command::Screen {
            common,
            checkpoint,
            library,
            smiles_column,
            label_column,
            label_rule,
        } => {
            let cfg = common.load()?;
            let mut spec = cfg.dataset.clone();
            spec.name = library.display().to_string();
            spec.path = library;
            spec.id_column = None;
            if let Some(c) = smiles_column {
                spec.smiles_column = c;
            }
            if let Some(c) = label_column {
                spec.label_column = c;
            }
            if let Some(r) = label_rule {
                spec.label_rule = match r {
                    Rule::Direct => LabelRule::Direct,
                    Rule::Pic50 => LabelRule::Pic50,
                };
            }
            let report = experiment::screen::<f64>(&cfg, &checkpoint, &spec, common.seed(&cfg), &common.out_dir)?;
            println!("{:>6} {:>9} {:>6} {:>12}", "K%", "screened", "hits", "success_rate");
            for p in &report.curve {
                println!(
                    "{:>6} {:>9} {:>6} {:>12.4}",
                    p.k_percent, p.screened, p.hits, p.success_rate
                );
            }
        }
        Command::ParseCheck { smiles, file, column } => {
            let mut failed = 0;
            for s in &smiles {
                match parse_smiles(s) {
                    Ok(m) => println!("ok    {s}: {} atoms, {} bonds", m.atoms.len(), m.bonds.len()),
                    Err(e) => {
                        failed += 1;
                        println!("error {s}: {e}");
                    }
                }
            }
            if let Some(path) = file {
                let check = parse_check(&path, &column)?;
                for f in &check.failures {
                    println!("row {}: {}", f.row, f.reason);
                }
                println!(
                    "{} of {} accepted ({:.2}%)",
                    check.accepted,
                    check.total,
                    100.0 * check.accepted as f64 / check.total.max(1) as f64
                );
                failed += check.failures.len();
            }
            if failed > 0 {
                return Ok(2);
            }
        }
        Command::Selftest => {
            let outcomes = selftest::run_all();
            let mut ok = true;
            for o in &outcomes {
                println!("[{}] {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail);
                ok &= o.passed;
            }
            if !ok {
                return Ok(3);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
