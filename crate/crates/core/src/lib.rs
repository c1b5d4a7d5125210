//! Crack segmentation with multi-path selective scanning, gated low-rank
//! convolutions and a small reverse-mode tensor engine.

pub mod ablate;
pub mod backbone;
pub mod checkpoint;
pub mod complexity;
pub mod config;
pub mod data;
pub mod error;
pub mod gbc;
pub mod gradcheck;
pub mod head;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod scan;
pub mod ssm;
pub mod tensor;
pub mod train;

pub use config::{LossConfig, NetworkConfig, RunConfig};
pub use error::{Error, Result};
pub use model::Model;
pub use tensor::{Graph, ParamId, ParamStore, Tensor, Var};
