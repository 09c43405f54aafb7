//! GCN/GAT node embeddings with sum or attention readouts and a sigmoid
//! classifier over the concatenated per-layer graph features.

use std::sync::Arc;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{EdgeList, Segments, Tape, Tensor, TensorError, TensorResult, Var};
use crate::featurize::{FeatureSchema, MolecularGraph};
use crate::scalar::Scalar;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MC_SAMPLES: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeEmbedding {
    Gcn,
    Gat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Readout {
    Sum,
    Attn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub node_embedding: NodeEmbedding,
    pub readout: Readout,
    #[serde(default = "defaults::num_layers")]
    pub num_layers: usize,
    #[serde(default = "defaults::hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "defaults::graph_dim")]
    pub graph_dim: usize,
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default = "defaults::mc_samples")]
    pub mc_samples: usize,
    #[serde(default = "defaults::input_dim")]
    pub input_dim: usize,
}

mod defaults {
    pub fn num_layers() -> usize {
        4
    }
    pub fn hidden_dim() -> usize {
        64
    }
    pub fn graph_dim() -> usize {
        256
    }
    pub fn mc_samples() -> usize {
        super::DEFAULT_MC_SAMPLES
    }
    pub fn input_dim() -> usize {
        crate::featurize::FeatureSchema::default().width()
    }
}

impl ModelConfig {
    /// `L = 4`, `d = 64`, `d_g = 256`, no dropout.
    pub fn new(node_embedding: NodeEmbedding, readout: Readout) -> Self {
        Self {
            node_embedding,
            readout,
            num_layers: defaults::num_layers(),
            hidden_dim: defaults::hidden_dim(),
            graph_dim: defaults::graph_dim(),
            dropout_rate: 0.0,
            mc_samples: DEFAULT_MC_SAMPLES,
            input_dim: FeatureSchema::default().width(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.num_layers < 1 {
            return bad("num_layers must be at least 1");
        }
        if self.hidden_dim < 1 || self.graph_dim < 1 || self.input_dim < 1 {
            return bad("dimensions must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if self.mc_samples < 1 {
            return bad("mc_samples must be at least 1");
        }
        Ok(())
    }

    pub fn parameter_shapes(&self) -> Vec<(String, (usize, usize), ParamKind)> {
        let (d0, d, dg, l) = (self.input_dim, self.hidden_dim, self.graph_dim, self.num_layers);
        let mut out = vec![("input_projection".to_string(), (d0, d), ParamKind::Weight)];
        for i in 0..l {
            out.push((format!("layer{i}.w"), (d, d), ParamKind::Weight));
            if self.node_embedding == NodeEmbedding::Gat {
                out.push((format!("layer{i}.w_a"), (d, d), ParamKind::Weight));
            }
        }
        for i in 0..l {
            out.push((format!("readout{i}.w_g"), (d, dg), ParamKind::Weight));
        }
        out.push(("classifier.w".to_string(), (l * dg, 1), ParamKind::Weight));
        out.push(("classifier.b".to_string(), (1, 1), ParamKind::Bias));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_shapes().iter().map(|(_, (r, c), _)| r * c).sum()
    }

    /// Short name such as `GCN+Attn`.
    pub fn architecture_name(&self) -> String {
        let e = match self.node_embedding {
            NodeEmbedding::Gcn => "GCN",
            NodeEmbedding::Gat => "GAT",
        };
        let r = match self.readout {
            Readout::Sum => "Sum",
            Readout::Attn => "Attn",
        };
        format!("{e}+{r}")
    }
}

/// Weight matrices receive weight decay, biases do not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Weight,
    Bias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T: Scalar> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor<T>,
}

/// Several graphs packed into one block-diagonal graph.
#[derive(Debug, Clone)]
pub struct GraphBatch<T: Scalar> {
    pub features: Array2<T>,
    pub edges: Arc<EdgeList>,
    pub segments: Arc<Segments>,
    pub labels: Vec<Option<bool>>,
}

impl<T: Scalar> GraphBatch<T> {
    pub fn new<'a>(graphs: impl IntoIterator<Item = &'a MolecularGraph<T>>) -> Self {
        let graphs: Vec<&MolecularGraph<T>> = graphs.into_iter().collect();
        assert!(!graphs.is_empty(), "empty batch");
        let views: Vec<_> = graphs.iter().map(|g| g.node_features.view()).collect();
        let features = ndarray::concatenate(Axis(0), &views).expect("feature widths agree");
        let edge_lists: Vec<EdgeList> = graphs.iter().map(|g| g.edges()).collect();
        Self {
            features,
            edges: Arc::new(EdgeList::block_diagonal(&edge_lists)),
            segments: Arc::new(Segments::from_sizes(graphs.iter().map(|g| g.num_nodes))),
            labels: graphs.iter().map(|g| g.label).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Labels as a `B x 1` column; panics when a graph is unlabeled.
    pub fn label_column(&self) -> Array2<T> {
        Array2::from_shape_fn((self.len(), 1), |(i, _)| {
            if self.labels[i].expect("labeled graph") {
                T::one()
            } else {
                T::zero()
            }
        })
    }
}

/// `ReLU(A H W)`.
pub fn gcn_layer<'t, T: Scalar>(h: Var<'t, T>, edges: &Arc<EdgeList>, w: Var<'t, T>) -> TensorResult<Var<'t, T>> {
    Var::spmm(edges, None, h.matmul(w)?)?.relu()
}

/// Per-edge attention `tanh((H_i W) W_a (H_j W)^T / sqrt(d))` as an `E x 1` column.
pub fn gat_attention<'t, T: Scalar>(
    h: Var<'t, T>,
    edges: &Arc<EdgeList>,
    w: Var<'t, T>,
    w_a: Var<'t, T>,
) -> TensorResult<(Var<'t, T>, Var<'t, T>)> {
    let q = h.matmul(w)?;
    let d = T::from_count(q.shape().1);
    let scores = Var::edge_dot(edges, q.matmul(w_a)?, q)?;
    Ok((scores.scalar_mul(T::one() / d.sqrt())?.tanh()?, q))
}

/// `ReLU(sum_j alpha_ij H_j W)` over the neighborhood of each node.
pub fn gat_layer<'t, T: Scalar>(
    h: Var<'t, T>,
    edges: &Arc<EdgeList>,
    w: Var<'t, T>,
    w_a: Var<'t, T>,
) -> TensorResult<Var<'t, T>> {
    let (alpha, q) = gat_attention(h, edges, w, w_a)?;
    Var::spmm(edges, Some(alpha), q)?.relu()
}

/// Pre-sigmoid sum readout: one row `sum_i H_i W_g` per graph.
pub fn sum_readout_logits<'t, T: Scalar>(
    h: Var<'t, T>,
    segments: &Arc<Segments>,
    w_g: Var<'t, T>,
) -> TensorResult<Var<'t, T>> {
    h.matmul(w_g)?.segment_sum(segments)
}

pub fn sum_readout<'t, T: Scalar>(
    h: Var<'t, T>,
    segments: &Arc<Segments>,
    w_g: Var<'t, T>,
) -> TensorResult<Var<'t, T>> {
    sum_readout_logits(h, segments, w_g)?.sigmoid()
}

/// Node weights `alpha_i = N softmax_i(1 . (H_i W_g)^T / sqrt(d_g))` within each graph.
pub fn attn_coefficients<'t, T: Scalar>(projected: Var<'t, T>, segments: &Arc<Segments>) -> TensorResult<Var<'t, T>> {
    let dg = T::from_count(projected.shape().1);
    let scores = projected.sum_axis(Axis(1))?.scalar_mul(T::one() / dg.sqrt())?;
    let sizes = projected.tape().constant(segments.size_per_row())?;
    scores.segment_softmax(segments)?.mul(sizes)
}

/// Pre-sigmoid attention readout: `sum_i alpha_i H_i W_g` per graph.
pub fn attn_readout_logits<'t, T: Scalar>(
    h: Var<'t, T>,
    segments: &Arc<Segments>,
    w_g: Var<'t, T>,
) -> TensorResult<Var<'t, T>> {
    let projected = h.matmul(w_g)?;
    let alpha = attn_coefficients(projected, segments)?;
    projected.mul(alpha)?.segment_sum(segments)
}

pub fn attn_readout<'t, T: Scalar>(
    h: Var<'t, T>,
    segments: &Arc<Segments>,
    w_g: Var<'t, T>,
) -> TensorResult<Var<'t, T>> {
    attn_readout_logits(h, segments, w_g)?.sigmoid()
}

/// `1` when `p > threshold`, else `0`.
pub fn threshold_label<T: Scalar>(p: T, threshold: T) -> bool {
    p > threshold
}

/// Parameter handles recorded on one tape, in [`GnnModel::parameters`] order.
pub struct ForwardPass<'t, T: Scalar> {
    pub probabilities: Var<'t, T>,
    pub logits: Var<'t, T>,
    pub params: Vec<Var<'t, T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McPrediction<T> {
    pub mean: T,
    pub samples: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel<T: Scalar> {
    config: ModelConfig,
    params: Vec<Parameter<T>>,
}

fn glorot<T: Scalar, R: Rng + ?Sized>(shape: (usize, usize), rng: &mut R) -> Array2<T> {
    let limit = (6.0 / (shape.0 + shape.1) as f64).sqrt();
    Array2::from_shape_simple_fn(shape, || T::lit(rng.random_range(-limit..=limit)))
}

impl<T: Scalar> GnnModel<T> {
    /// Glorot-uniform weights and a zero classifier bias, drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = config
            .parameter_shapes()
            .into_iter()
            .map(|(name, shape, kind)| {
                let value = match kind {
                    ParamKind::Weight => glorot(shape, &mut rng),
                    ParamKind::Bias => Array2::zeros(shape),
                };
                Parameter {
                    name,
                    kind,
                    tensor: Tensor::param(value),
                }
            })
            .collect();
        Ok(Self { config, params })
    }

    /// Builds a model from explicit parameter values in [`ModelConfig::parameter_shapes`] order.
    pub fn from_parameters(config: ModelConfig, values: Vec<Array2<T>>) -> Result<Self, ModelError> {
        config.validate()?;
        let shapes = config.parameter_shapes();
        if shapes.len() != values.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameter arrays, got {}",
                shapes.len(),
                values.len()
            )));
        }
        let mut params = Vec::with_capacity(shapes.len());
        for ((name, shape, kind), value) in shapes.into_iter().zip(values) {
            if value.dim() != shape {
                return Err(ModelError::Config(format!(
                    "{name}: expected {shape:?}, got {:?}",
                    value.dim()
                )));
            }
            params.push(Parameter {
                name,
                kind,
                tensor: Tensor::param(value),
            });
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameters(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn parameter(&self, name: &str) -> Option<&Parameter<T>> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Parameter<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.tensor.is_finite())
    }

    /// Records the full forward pass for a batch on `tape`.
    pub fn forward<'t, R: Rng + ?Sized>(
        &self,
        tape: &'t Tape<T>,
        batch: &GraphBatch<T>,
        mode: Mode,
        rng: &mut R,
    ) -> TensorResult<ForwardPass<'t, T>> {
        let params = self
            .params
            .iter()
            .map(|p| tape.leaf(&p.tensor))
            .collect::<TensorResult<Vec<_>>>()?;
        let cfg = &self.config;
        let training = mode == Mode::Train;
        let rate = T::lit(cfg.dropout_rate);
        let mut next = params.iter().copied();
        let mut take = || next.next().expect("parameter layout");

        let x = tape.constant(batch.features.clone())?;
        let mut h = x.matmul(take())?;
        let mut layer_params = Vec::with_capacity(cfg.num_layers);
        for _ in 0..cfg.num_layers {
            let w = take();
            let w_a = match cfg.node_embedding {
                NodeEmbedding::Gat => Some(take()),
                NodeEmbedding::Gcn => None,
            };
            layer_params.push((w, w_a));
        }
        let readouts: Vec<_> = (0..cfg.num_layers).map(|_| take()).collect();
        let w_c = take();
        let b_c = take();

        let mut graph_features = Vec::with_capacity(cfg.num_layers);
        for ((w, w_a), w_g) in layer_params.into_iter().zip(readouts) {
            let out = match w_a {
                Some(w_a) => gat_layer(h, &batch.edges, w, w_a)?,
                None => gcn_layer(h, &batch.edges, w)?,
            };
            h = out.dropout(rate, training, rng)?.add(h)?;
            let z = match cfg.readout {
                Readout::Sum => sum_readout(h, &batch.segments, w_g)?,
                Readout::Attn => attn_readout(h, &batch.segments, w_g)?,
            };
            graph_features.push(z);
        }
        let z_g = Var::concat_cols(&graph_features)?;
        let logits = z_g.matmul(w_c)?.add(b_c)?;
        Ok(ForwardPass {
            probabilities: logits.sigmoid()?,
            logits,
            params,
        })
    }

    /// Probabilities for every graph in the batch, one forward pass.
    pub fn predict_batch<R: Rng + ?Sized>(
        &self,
        batch: &GraphBatch<T>,
        mode: Mode,
        rng: &mut R,
    ) -> TensorResult<Vec<T>> {
        let tape = Tape::new();
        let pass = self.forward(&tape, batch, mode, rng)?;
        Ok(pass.probabilities.value().column(0).to_vec())
    }

    /// Eval-mode probability (dropout is the identity).
    pub fn predict_deterministic(&self, graph: &MolecularGraph<T>) -> TensorResult<T> {
        let batch = GraphBatch::new([graph]);
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        Ok(self.predict_batch(&batch, Mode::Eval, &mut unused)?[0])
    }

    /// Mean of `samples` train-mode passes with independent dropout masks.
    pub fn predict_mc_dropout<R: Rng + ?Sized>(
        &self,
        graph: &MolecularGraph<T>,
        samples: usize,
        rng: &mut R,
    ) -> TensorResult<McPrediction<T>> {
        let batch = GraphBatch::new([graph]);
        Ok(self.predict_mc_dropout_batch(&batch, samples, rng)?.remove(0))
    }

    pub fn predict_mc_dropout_batch<R: Rng + ?Sized>(
        &self,
        batch: &GraphBatch<T>,
        samples: usize,
        rng: &mut R,
    ) -> TensorResult<Vec<McPrediction<T>>> {
        assert!(samples >= 1, "at least one MC sample");
        let mut per_graph = vec![Vec::with_capacity(samples); batch.len()];
        for _ in 0..samples {
            for (acc, p) in per_graph.iter_mut().zip(self.predict_batch(batch, Mode::Train, rng)?) {
                acc.push(p);
            }
        }
        Ok(per_graph
            .into_iter()
            .map(|s| McPrediction {
                mean: running_mean(&s),
                samples: s,
            })
            .collect())
    }
}

/// Incremental mean; returns the common value exactly when all samples agree.
fn running_mean<T: Scalar>(values: &[T]) -> T {
    let mut mean = values[0];
    for (k, &v) in values.iter().enumerate().skip(1) {
        mean += (v - mean) / T::from_count(k + 1);
    }
    mean
}
