//! Stage 2: MLP, GCN and GraphSAGE over cached node features.

mod checkpoint;
mod config;
mod model;
mod train;

pub use checkpoint::{decode_gnn, encode_gnn, load_gnn, save_gnn};
pub use config::{Arch, GnnConfig, LAYER_CHOICES};
pub use model::{gcn_layer, sage_layer, BlockOps, GnnHead, GnnLayer, GnnModel, GnnShape, Propagation};
pub use train::{
    evaluate_gnn, link_eval, node_representations, predict_nodes, predict_nodes_sampled, predict_pairs, task_adjacency,
    train_gnn, GnnOutcome,
};
