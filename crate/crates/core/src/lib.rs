//! Two-stage learning on textual graphs: finetune a small transformer
//! encoder on the downstream task (optionally through low-rank adapters),
//! extract frozen node embeddings, then train MLP/GCN/GraphSAGE models on
//! those embeddings.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
mod bytes;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod fsio;
pub mod gnn;
pub mod graph;
pub mod heads;
pub mod hpo;
pub mod lora;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod stage1;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::RngState;
pub use tensor::{Scalar, SparseMatrix, Tensor};
