//! Deep graph neural network training with skip connections, graph
//! normalizations, random dropping and identity mapping.
//!
//! Everything numeric is generic over [`Scalar`] (`f64` or `f32`); the
//! aliases at the crate root fix the scalar to `f64`, with `F32` variants
//! for single precision.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod config;
pub mod data;
pub mod drop;
pub mod error;
pub mod layers;
pub mod model;
pub mod norm;
pub mod rng;
pub mod scalar;
pub mod skip;
pub mod sparse;
pub mod tensor;
pub mod train;

pub use autodiff::Var;
pub use config::{Backbone, Com, DropSpec, GraphDrop, NormSpec, SkipSpec, TrickConfig};
pub use data::{generate_sbm, load_dataset, store_dataset, Splits};
pub use drop::Phase;
pub use error::{Error, Result};
pub use model::Dims;
pub use rng::{Rng, Stream};
pub use scalar::Scalar;
pub use train::{aggregate_runs, train_run, EpochRecord, RunResult, TrainConfig};

pub type Tensor = tensor::Tensor<f64>;
pub type TensorF32 = tensor::Tensor<f32>;
pub type Tape = autodiff::Tape<f64>;
pub type TapeF32 = autodiff::Tape<f32>;
pub type Gradients = autodiff::Gradients<f64>;
pub type CsrMatrix = sparse::CsrMatrix<f64>;
pub type CsrGraph = sparse::CsrGraph<f64>;
pub type CsrGraphF32 = sparse::CsrGraph<f32>;
pub type NormalizedAdjacency = sparse::NormalizedAdjacency<f64>;
pub type Dataset = data::Dataset<f64>;
pub type DatasetF32 = data::Dataset<f32>;
pub type Model = model::Model<f64>;
pub type ModelParams = model::ModelParams<f64>;
