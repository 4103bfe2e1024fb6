//! Sparse adjacency: CSR storage, GCN normalization, neighbor sampling,
//! and the held-out edge protocol for link prediction.

mod csr;
mod io;
mod normalize;
mod sampling;
mod split;

pub use csr::{build_csr, CsrAdjacency};
pub use io::{read_edge_list, read_split_file, write_edge_list, write_split_file};
pub use normalize::{gcn_normalize, mean_aggregation, NormalizedAdjacency};
pub use sampling::{sample_neighbors, Block, SampledSubgraph};
pub use split::{sample_non_neighbor, split_edges, Edge, EdgeSplits, SplitKind};
