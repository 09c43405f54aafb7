//! TOML experiment configuration.
//!
//! ```toml
//! version = 1
//!
//! [dataset]
//! name = "bace"
//! path = "data/bace.csv"        # relative to the config file
//! smiles_column = "mol"
//! label_column = "Class"
//! label_rule = "direct"          # or "pic50": positive when value >= 7.0
//! strip_salts = true
//! # id_column = "CID"
//!
//! [model]
//! node_embedding = "gcn"         # gcn | gat
//! readout = "attn"               # sum | attn
//! num_layers = 4
//! hidden_dim = 64
//! graph_dim = 256
//! dropout_rate = 0.0
//! mc_samples = 30
//!
//! [loss]
//! kind = "bce"                   # bce | ls (alpha) | erl (beta) | fl (gamma) | wfl (alpha, gamma)
//!
//! [optimizer]
//! initial_lr = 1e-3
//! decay_factor = 0.1
//! decay_epochs = [80, 160]
//! # weight_decay defaults to 1e-4 * (1 - dropout_rate)
//!
//! [training]
//! epochs = 200
//! batch_size = 32
//! split_ratio = 0.8
//! seeds = [0, 1, 2, 3, 4]
//!
//! [inference]
//! mode = "deterministic"         # or "mc_dropout" (uses model.mc_samples)
//!
//! [evaluation]
//! bins = 10
//! threshold = 0.5
//! entropy_bins = 20
//! output_bins = 20
//! k_grid = [1, 2, 5, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100]
//!
//! [ablation]
//! dropout_rate = 0.2
//! ls_alpha = 0.1
//! erl_beta = 0.1
//! focal_alphas = [0.1, 0.25, 0.5, 0.75, 0.9]
//! focal_gammas = [0.5, 1.0, 2.0]
//! ```
//!
//! Every section except `[dataset]` and `[model]` may be omitted. Unknown
//! keys are rejected. [`ExperimentConfig::resolved`] fills the remaining
//! implicit value (weight decay) so a persisted config has no hidden defaults.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::DatasetSpec;
use super::{ExperimentError, ExperimentResult};
use crate::metrics::{ReportSettings, DEFAULT_BINS, DEFAULT_HISTOGRAM_BINS, DEFAULT_K_GRID};
use crate::model::{ModelConfig, DEFAULT_THRESHOLD};
use crate::objectives::LossConfig;
use crate::optim::{AdamW, LrSchedule};

pub const CONFIG_VERSION: u32 = 1;

fn config_version() -> u32 {
    CONFIG_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "config_version")]
    pub version: u32,
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub inference: InferenceConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub initial_lr: f64,
    pub decay_factor: f64,
    pub decay_epochs: Vec<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let s = LrSchedule::default();
        let a = AdamW::default();
        Self {
            initial_lr: s.initial_lr,
            decay_factor: s.decay_factor,
            decay_epochs: s.decay_epochs,
            beta1: a.beta1,
            beta2: a.beta2,
            epsilon: a.epsilon,
            weight_decay: None,
        }
    }
}

impl OptimizerConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            initial_lr: self.initial_lr,
            decay_factor: self.decay_factor,
            decay_epochs: self.decay_epochs.clone(),
        }
    }

    /// Hyperparameters with decay coupled to `dropout_rate` unless set explicitly.
    pub fn adamw(&self, dropout_rate: f64) -> AdamW {
        AdamW {
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay: self
                .weight_decay
                .unwrap_or_else(|| AdamW::coupled_weight_decay(dropout_rate)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub split_ratio: f64,
    pub seeds: Vec<u64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            split_ratio: 0.8,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    #[default]
    Deterministic,
    McDropout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferenceConfig {
    pub mode: InferenceMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    pub bins: usize,
    pub threshold: f64,
    pub entropy_bins: usize,
    pub output_bins: usize,
    pub k_grid: Vec<f64>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            threshold: DEFAULT_THRESHOLD,
            entropy_bins: DEFAULT_HISTOGRAM_BINS,
            output_bins: DEFAULT_HISTOGRAM_BINS,
            k_grid: DEFAULT_K_GRID.to_vec(),
        }
    }
}

impl EvaluationConfig {
    pub fn report_settings(&self) -> ReportSettings {
        ReportSettings {
            calibration_bins: self.bins,
            entropy_bins: self.entropy_bins,
            output_bins: self.output_bins,
            k_grid: self.k_grid.clone(),
        }
    }
}

/// Variant strengths used by [`run_ablation`](super::run_ablation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub dropout_rate: f64,
    pub ls_alpha: f64,
    pub erl_beta: f64,
    pub focal_alphas: Vec<f64>,
    pub focal_gammas: Vec<f64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            dropout_rate: 0.2,
            ls_alpha: 0.1,
            erl_beta: 0.1,
            focal_alphas: vec![0.1, 0.25, 0.5, 0.75, 0.9],
            focal_gammas: vec![0.5, 1.0, 2.0],
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> ExperimentResult<Self> {
        toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    /// Parses a config file; a relative dataset path is taken relative to the file.
    pub fn from_file(path: &Path) -> ExperimentResult<Self> {
        let text = fs::read_to_string(path).map_err(ExperimentError::io(path))?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.dataset.path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.dataset.path = dir.join(&cfg.dataset.path);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> ExperimentResult<()> {
        let bad = |msg: String| Err(ExperimentError::Config(msg));
        if self.version != CONFIG_VERSION {
            return bad(format!("config version {} is not supported", self.version));
        }
        self.model.validate()?;
        self.loss.validate()?;
        self.optimizer.schedule().validate()?;
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.epsilon > 0.0) {
            return bad("adam betas must lie in [0, 1) and epsilon must be positive".into());
        }
        if o.weight_decay.is_some_and(|w| !(w >= 0.0 && w.is_finite())) {
            return bad("weight_decay must be non-negative".into());
        }
        let t = &self.training;
        if t.epochs == 0 || t.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(t.split_ratio > 0.0 && t.split_ratio <= 1.0) {
            return bad("split_ratio must lie in (0, 1]".into());
        }
        if t.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let e = &self.evaluation;
        if e.bins == 0 || e.entropy_bins == 0 || e.output_bins == 0 {
            return bad("bin counts must be positive".into());
        }
        if !(0.0..=1.0).contains(&e.threshold) {
            return bad("threshold must lie in [0, 1]".into());
        }
        if e.k_grid.is_empty() || e.k_grid.iter().any(|&k| !(k > 0.0 && k <= 100.0)) {
            return bad("k_grid values must lie in (0, 100]".into());
        }
        let a = &self.ablation;
        if !(0.0..1.0).contains(&a.dropout_rate)
            || !(0.0..=1.0).contains(&a.ls_alpha)
            || !(a.erl_beta >= 0.0)
            || a.focal_alphas.iter().any(|x| !(0.0..=1.0).contains(x))
            || a.focal_gammas.iter().any(|&g| !(g >= 0.0))
        {
            return bad("ablation strengths out of range".into());
        }
        Ok(())
    }

    /// Validated copy with the weight decay written out.
    pub fn resolved(&self) -> ExperimentResult<Self> {
        self.validate()?;
        let mut out = self.clone();
        out.optimizer.weight_decay = Some(self.optimizer.adamw(self.model.dropout_rate).weight_decay);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::LabelRule;
    use crate::model::{NodeEmbedding, Readout};

    const MINIMAL: &str = r#"
[dataset]
name = "toy"
path = "toy.csv"
smiles_column = "smiles"
label_column = "y"

[model]
node_embedding = "gat"
readout = "sum"
dropout_rate = 0.2
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.model.node_embedding, NodeEmbedding::Gat);
        assert_eq!(cfg.model.readout, Readout::Sum);
        assert_eq!(cfg.dataset.label_rule, LabelRule::Direct);
        assert!(cfg.dataset.strip_salts);
        assert_eq!(cfg.training.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(cfg.loss, LossConfig::Bce {});
        let r = cfg.resolved().unwrap();
        assert_eq!(r.optimizer.weight_decay, Some(1e-4 * (1.0 - 0.2)));
    }

    #[test]
    fn resolved_round_trips_through_toml() {
        let r = ExperimentConfig::from_toml(MINIMAL).unwrap().resolved().unwrap();
        let back = ExperimentConfig::from_toml(&r.to_toml()).unwrap();
        assert_eq!(r, back);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let extra = format!("{MINIMAL}\n[training]\nepochz = 3\n");
        assert!(ExperimentConfig::from_toml(&extra).is_err());
        let bad = format!("{MINIMAL}\n[training]\nsplit_ratio = 0.0\n");
        assert!(ExperimentConfig::from_toml(&bad).unwrap().validate().is_err());
        let loss = format!("{MINIMAL}\n[loss]\nkind = \"ls\"\nalpha = 1.5\n");
        assert!(ExperimentConfig::from_toml(&loss).unwrap().validate().is_err());
    }

    #[test]
    fn explicit_weight_decay_is_kept() {
        let text = format!("{MINIMAL}\n[optimizer]\nweight_decay = 0.0\n");
        let r = ExperimentConfig::from_toml(&text).unwrap().resolved().unwrap();
        assert_eq!(r.optimizer.weight_decay, Some(0.0));
    }
}
