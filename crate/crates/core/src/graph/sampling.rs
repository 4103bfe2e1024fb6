use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graph::CsrAdjacency;
use crate::rng::RngState;

/// Bipartite message-passing block. `src_nodes` starts with `dst_nodes`
/// in the same order, so the self row of destination `i` is source `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub dst_nodes: Vec<usize>,
    pub src_nodes: Vec<usize>,
    /// Sampled neighbors of each destination, as indices into `src_nodes`.
    pub neighbors: Vec<Vec<usize>>,
}

/// Blocks in input-to-output order; the last block's destinations are the
/// seed nodes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampledSubgraph {
    pub blocks: Vec<Block>,
}

impl SampledSubgraph {
    pub fn input_nodes(&self) -> &[usize] {
        &self.blocks[0].src_nodes
    }

    pub fn seeds(&self) -> &[usize] {
        &self.blocks.last().expect("at least one block").dst_nodes
    }
}

/// Uniform sampling without replacement of `min(fanout, degree)`
/// neighbors per node and layer. `fanouts[l]` applies to layer `l` in
/// forward order.
pub fn sample_neighbors(
    adj: &CsrAdjacency,
    seeds: &[usize],
    fanouts: &[usize],
    rng: &mut RngState,
) -> Result<SampledSubgraph> {
    if seeds.is_empty() {
        return Err(Error::Sampling("empty seed set".into()));
    }
    if fanouts.is_empty() {
        return Err(Error::Sampling("no fanouts given".into()));
    }
    if let Some(&bad) = seeds.iter().find(|&&s| s >= adj.num_nodes()) {
        return Err(Error::Index(format!("seed {bad} out of range")));
    }
    let mut frontier: Vec<usize> = Vec::with_capacity(seeds.len());
    let mut seen = HashMap::new();
    for &s in seeds {
        if seen.insert(s, frontier.len()).is_none() {
            frontier.push(s);
        }
    }
    let mut blocks = Vec::with_capacity(fanouts.len());
    for &fanout in fanouts.iter().rev() {
        let dst_nodes = frontier.clone();
        let mut src_nodes = frontier.clone();
        let mut local: HashMap<usize, usize> = src_nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut neighbors = Vec::with_capacity(dst_nodes.len());
        for &v in &dst_nodes {
            let nbrs = adj.neighbors(v);
            let picked: Vec<usize> = if fanout >= nbrs.len() {
                nbrs.to_vec()
            } else {
                rng.sample_distinct(nbrs.len(), fanout)
                    .into_iter()
                    .map(|i| nbrs[i])
                    .collect()
            };
            let ids = picked
                .into_iter()
                .map(|u| {
                    *local.entry(u).or_insert_with(|| {
                        src_nodes.push(u);
                        src_nodes.len() - 1
                    })
                })
                .collect();
            neighbors.push(ids);
        }
        frontier = src_nodes.clone();
        blocks.push(Block {
            dst_nodes,
            src_nodes,
            neighbors,
        });
    }
    blocks.reverse();
    Ok(SampledSubgraph { blocks })
}
