//! JSON checkpoint container.
//!
//! ```json
//! {
//!   "format": "calibgnn-checkpoint",
//!   "version": 1,
//!   "scalar": "f64",
//!   "config": { ...ModelConfig... },
//!   "parameters": [ { "name": "input_projection", "rows": 58, "cols": 64, "values": [...] }, ... ]
//! }
//! ```
//!
//! `values` are row-major. Floats are written with shortest round-trip
//! formatting, so save followed by load reproduces every bit.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GnnModel, ModelConfig, ModelError};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "calibgnn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("reading or writing {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredParameter {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Container {
    format: String,
    version: u32,
    scalar: String,
    config: ModelConfig,
    parameters: Vec<StoredParameter>,
}

fn scalar_name<T: Scalar>() -> &'static str {
    match std::mem::size_of::<T>() {
        4 => "f32",
        _ => "f64",
    }
}

pub fn to_json<T: Scalar>(model: &GnnModel<T>) -> Result<String, CheckpointError> {
    let container = Container {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        scalar: scalar_name::<T>().into(),
        config: model.config().clone(),
        parameters: model
            .parameters()
            .iter()
            .map(|p| {
                let (rows, cols) = p.tensor.shape();
                StoredParameter {
                    name: p.name.clone(),
                    rows,
                    cols,
                    values: p.tensor.data().iter().map(|v| v.as_f64()).collect(),
                }
            })
            .collect(),
    };
    Ok(serde_json::to_string(&container)?)
}

pub fn from_json<T: Scalar>(text: &str) -> Result<GnnModel<T>, CheckpointError> {
    let c: Container = serde_json::from_str(text)?;
    if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Format(format!("{} v{}", c.format, c.version)));
    }
    if c.scalar != scalar_name::<T>() {
        return Err(CheckpointError::Format(format!(
            "checkpoint stores {} but {} was requested",
            c.scalar,
            scalar_name::<T>()
        )));
    }
    let expected = c.config.parameter_shapes();
    if expected.len() != c.parameters.len() {
        return Err(CheckpointError::Format("parameter count does not match config".into()));
    }
    let mut values = Vec::with_capacity(c.parameters.len());
    for ((name, _, _), stored) in expected.iter().zip(c.parameters) {
        if *name != stored.name {
            return Err(CheckpointError::Format(format!(
                "expected {name}, found {}",
                stored.name
            )));
        }
        let data = stored.values.into_iter().map(T::lit).collect();
        let array = Array2::from_shape_vec((stored.rows, stored.cols), data)
            .map_err(|_| CheckpointError::Format(format!("{name}: value count does not match shape")))?;
        values.push(array);
    }
    Ok(GnnModel::from_parameters(c.config, values)?)
}

pub fn save<T: Scalar>(model: &GnnModel<T>, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, to_json(model)?).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load<T: Scalar>(path: &Path) -> Result<GnnModel<T>, CheckpointError> {
    let text = fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NodeEmbedding, Readout};

    fn small(embedding: NodeEmbedding) -> ModelConfig {
        ModelConfig {
            num_layers: 2,
            hidden_dim: 5,
            graph_dim: 3,
            dropout_rate: 0.1,
            ..ModelConfig::new(embedding, Readout::Attn)
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = GnnModel::<f64>::new(small(NodeEmbedding::Gat), 17).unwrap();
        let back: GnnModel<f64> = from_json(&to_json(&m).unwrap()).unwrap();
        assert_eq!(m, back);

        let m32 = GnnModel::<f32>::new(small(NodeEmbedding::Gcn), 4).unwrap();
        let back32: GnnModel<f32> = from_json(&to_json(&m32).unwrap()).unwrap();
        assert_eq!(m32, back32);
    }

    #[test]
    fn rejects_mismatched_scalar_and_format() {
        let m = GnnModel::<f64>::new(small(NodeEmbedding::Gcn), 1).unwrap();
        let text = to_json(&m).unwrap();
        assert!(matches!(from_json::<f32>(&text), Err(CheckpointError::Format(_))));
        let bad = text.replace(CHECKPOINT_FORMAT, "other");
        assert!(matches!(from_json::<f64>(&bad), Err(CheckpointError::Format(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let m = GnnModel::<f64>::new(small(NodeEmbedding::Gat), 8).unwrap();
        save(&m, &path).unwrap();
        assert_eq!(load::<f64>(&path).unwrap(), m);
    }
}
