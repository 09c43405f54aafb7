//! Graph neural networks for binary molecular property classification, with
//! calibration metrics and virtual-screening evaluation.
//!
//! Numeric code is generic over [`scalar::Scalar`]; the aliases below fix the
//! scalar to `f64`, which the experiment pipeline uses by default.

pub mod autodiff;
pub mod checkpoint;
pub mod experiment;
pub mod featurize;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod optim;
pub mod scalar;
pub mod selftest;
pub mod smiles;

pub use scalar::Scalar;

pub type Tensor = autodiff::Tensor<f64>;
pub type MolecularGraph = featurize::MolecularGraph<f64>;
pub type GnnModel = model::GnnModel<f64>;
pub type GraphBatch = model::GraphBatch<f64>;
pub type PredictionRecord = metrics::PredictionRecord<f64>;
pub type ReliabilityReport = metrics::ReliabilityReport<f64>;
pub type OptimizerState = optim::OptimizerState<f64>;

pub type Tensor32 = autodiff::Tensor<f32>;
pub type MolecularGraph32 = featurize::MolecularGraph<f32>;
pub type GnnModel32 = model::GnnModel<f32>;
