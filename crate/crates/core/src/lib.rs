//! Material prediction for CAD assemblies with graph neural networks.
//!
//! The numeric core is generic over [`Scalar`]; training runs in `f32` and
//! gradient checks in `f64`.

pub mod baselines;
pub mod catalog;
pub mod checkpoint;
pub mod corpus;
pub mod encoding;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod scalar;
pub mod split;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
