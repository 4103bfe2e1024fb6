use std::sync::Arc;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::gnn::Arch;
use crate::graph::{gcn_normalize, mean_aggregation, Block, CsrAdjacency};
use crate::heads::{ClassifierHead, PairHead};
use crate::nn::Linear;
use crate::rng::RngState;
use crate::stage1::{ConfigHash, Provenance, Task};
use crate::tensor::{Scalar, SparseMatrix};

/// Architecture and sizes; everything needed to rebuild the parameter
/// layout.
#[derive(Clone, Debug, PartialEq)]
pub struct GnnShape {
    pub arch: Arch,
    pub task: Task,
    pub in_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    /// Zero for link prediction.
    pub num_classes: usize,
    pub pair_hidden: usize,
    pub dropout: f64,
}

/// One message-passing layer. `neigh` is the separate neighbor transform
/// of GraphSAGE (`[out × in]`, no bias).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GnnLayer {
    pub transform: Linear,
    pub neigh: Option<ParamId>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GnnHead {
    Classifier(ClassifierHead),
    Pair(PairHead),
}

#[derive(Clone, Debug)]
pub struct GnnModel<S> {
    pub shape: GnnShape,
    pub params: ParamStore<S>,
    pub layers: Vec<GnnLayer>,
    pub head: GnnHead,
    /// Identity of the features the model was trained on.
    pub feature_provenance: Provenance,
    pub feature_hash: ConfigHash,
}

/// Full-graph propagation operators.
#[derive(Clone, Debug)]
pub struct Propagation<S> {
    pub gcn: Arc<SparseMatrix<S>>,
    pub mean: Arc<SparseMatrix<S>>,
}

impl<S: Scalar> Propagation<S> {
    pub fn new(adj: &CsrAdjacency) -> Self {
        Self {
            gcn: Arc::new(gcn_normalize(adj).matrix),
            mean: Arc::new(mean_aggregation(adj)),
        }
    }
}

/// Operators of one sampled block, mapping source rows to destination
/// rows.
#[derive(Clone, Debug)]
pub struct BlockOps<S> {
    pub num_dst: usize,
    pub gcn: Arc<SparseMatrix<S>>,
    pub mean: Arc<SparseMatrix<S>>,
}

impl<S: Scalar> BlockOps<S> {
    /// GCN weights use full-graph degrees; sampled neighbor weights are
    /// scaled by `deg / sampled` so the aggregate stays unbiased. With
    /// exhaustive fanouts this reproduces the full-graph operator.
    pub fn new(block: &Block, adj: &CsrAdjacency) -> Result<Self> {
        let (rows, cols) = (block.dst_nodes.len(), block.src_nodes.len());
        let mut row_ptr = vec![0];
        let (mut g_cols, mut g_vals) = (Vec::new(), Vec::new());
        let mut m_ptr = vec![0];
        let (mut m_cols, mut m_vals) = (Vec::new(), Vec::new());
        for (i, &v) in block.dst_nodes.iter().enumerate() {
            let dv = (adj.degree(v) + 1) as f64;
            let sampled = &block.neighbors[i];
            let scale = if sampled.is_empty() {
                0.0
            } else {
                adj.degree(v) as f64 / sampled.len() as f64
            };
            let mut entries: Vec<(usize, f64)> = sampled
                .iter()
                .map(|&j| {
                    let du = (adj.degree(block.src_nodes[j]) + 1) as f64;
                    (j, scale / (dv * du).sqrt())
                })
                .collect();
            entries.push((i, 1.0 / dv));
            entries.sort_unstable_by_key(|e| e.0);
            for (j, w) in entries {
                g_cols.push(j);
                g_vals.push(S::lit(w));
            }
            row_ptr.push(g_cols.len());
            let mut nbrs = sampled.clone();
            nbrs.sort_unstable();
            let w = 1.0 / nbrs.len().max(1) as f64;
            for j in nbrs {
                m_cols.push(j);
                m_vals.push(S::lit(w));
            }
            m_ptr.push(m_cols.len());
        }
        Ok(Self {
            num_dst: rows,
            gcn: Arc::new(SparseMatrix::new(rows, cols, row_ptr, g_cols, g_vals)?),
            mean: Arc::new(SparseMatrix::new(rows, cols, m_ptr, m_cols, m_vals)?),
        })
    }
}

/// `(C·H)·Ψᵀ + b`, linear (activation is applied by the caller).
pub fn gcn_layer<S: Scalar>(
    tape: &mut Tape<S>,
    p: &[Var],
    c: &Arc<SparseMatrix<S>>,
    h: Var,
    transform: &Linear,
) -> Result<Var> {
    let ch = tape.spmm(Arc::clone(c), h)?;
    transform.forward(tape, p, ch)
}

/// `h_self·W_selfᵀ + b + (M·H_src)·W_neighᵀ` with `M` the row-mean
/// operator; rows without neighbors get a zero neighbor term.
pub fn sage_layer<S: Scalar>(
    tape: &mut Tape<S>,
    p: &[Var],
    mean: &Arc<SparseMatrix<S>>,
    h_self: Var,
    h_src: Var,
    transform: &Linear,
    w_neigh: Var,
) -> Result<Var> {
    let s = transform.forward(tape, p, h_self)?;
    let m = tape.spmm(Arc::clone(mean), h_src)?;
    let n = tape.matmul_nt(m, w_neigh)?;
    tape.add(s, n)
}

impl<S: Scalar> GnnModel<S> {
    pub fn new(shape: GnnShape, rng: &mut RngState) -> Result<Self> {
        if shape.num_layers == 0 || shape.in_dim == 0 || shape.hidden_dim == 0 {
            return Err(Error::Config("gnn needs ≥1 layer and positive dimensions".into()));
        }
        if shape.task == Task::NodeCls && shape.num_classes < 2 {
            return Err(Error::Config("classification needs at least two classes".into()));
        }
        let mut params = ParamStore::new();
        let mut layers = Vec::with_capacity(shape.num_layers);
        for l in 0..shape.num_layers {
            let d_in = if l == 0 { shape.in_dim } else { shape.hidden_dim };
            let transform = Linear::new(&mut params, &format!("gnn.{l}.self"), d_in, shape.hidden_dim, rng);
            let neigh = (shape.arch == Arch::Sage).then(|| {
                params.add(
                    format!("gnn.{l}.neigh"),
                    crate::autodiff::xavier_uniform(shape.hidden_dim, d_in, rng),
                )
            });
            layers.push(GnnLayer { transform, neigh });
        }
        let head = match shape.task {
            Task::NodeCls => GnnHead::Classifier(ClassifierHead::new(
                &mut params,
                "gnn.head",
                shape.hidden_dim,
                shape.num_classes,
                shape.dropout,
                rng,
            )),
            Task::Link => GnnHead::Pair(PairHead::new(
                &mut params,
                "gnn.head",
                shape.hidden_dim,
                shape.pair_hidden,
                shape.dropout,
                rng,
            )),
        };
        Ok(Self {
            shape,
            params,
            layers,
            head,
            feature_provenance: Provenance::Bow,
            feature_hash: [0; 32],
        })
    }

    pub fn cast<T: Scalar>(&self) -> GnnModel<T> {
        GnnModel {
            shape: self.shape.clone(),
            params: self.params.cast(),
            layers: self.layers.clone(),
            head: self.head,
            feature_provenance: self.feature_provenance,
            feature_hash: self.feature_hash,
        }
    }

    fn between_layers(&self, tape: &mut Tape<S>, h: Var, l: usize, rng: &mut RngState, training: bool) -> Result<Var> {
        if l + 1 == self.layers.len() {
            return Ok(h);
        }
        let h = tape.relu(h);
        tape.dropout(h, self.shape.dropout, rng, training)
    }

    /// Node representations `[N × hidden]` over the whole graph.
    pub fn encode_full(
        &self,
        tape: &mut Tape<S>,
        p: &[Var],
        x: Var,
        prop: &Propagation<S>,
        rng: &mut RngState,
        training: bool,
    ) -> Result<Var> {
        let mut h = x;
        for (l, layer) in self.layers.iter().enumerate() {
            h = match self.shape.arch {
                Arch::Mlp => layer.transform.forward(tape, p, h)?,
                Arch::Gcn => gcn_layer(tape, p, &prop.gcn, h, &layer.transform)?,
                Arch::Sage => {
                    let w = p[layer.neigh.expect("sage layer has a neighbor transform")];
                    sage_layer(tape, p, &prop.mean, h, h, &layer.transform, w)?
                }
            };
            h = self.between_layers(tape, h, l, rng, training)?;
        }
        Ok(h)
    }

    /// Representations of the last block's destinations from input rows
    /// aligned with the first block's sources. MLPs ignore the blocks'
    /// edges and only follow the destination prefixes.
    pub fn encode_blocks(
        &self,
        tape: &mut Tape<S>,
        p: &[Var],
        x_input: Var,
        blocks: &[BlockOps<S>],
        rng: &mut RngState,
        training: bool,
    ) -> Result<Var> {
        if blocks.len() != self.layers.len() {
            return Err(Error::Dimension(format!(
                "{} blocks for {} layers",
                blocks.len(),
                self.layers.len()
            )));
        }
        let mut h = x_input;
        for (l, (layer, block)) in self.layers.iter().zip(blocks).enumerate() {
            let dst: Vec<usize> = (0..block.num_dst).collect();
            h = match self.shape.arch {
                Arch::Mlp => {
                    let hs = tape.gather_rows(h, &dst)?;
                    layer.transform.forward(tape, p, hs)?
                }
                Arch::Gcn => gcn_layer(tape, p, &block.gcn, h, &layer.transform)?,
                Arch::Sage => {
                    let hs = tape.gather_rows(h, &dst)?;
                    let w = p[layer.neigh.expect("sage layer has a neighbor transform")];
                    sage_layer(tape, p, &block.mean, hs, h, &layer.transform, w)?
                }
            };
            h = self.between_layers(tape, h, l, rng, training)?;
        }
        Ok(h)
    }

    /// Class logits for node representations.
    pub fn classify(&self, tape: &mut Tape<S>, p: &[Var], h: Var, rng: &mut RngState, training: bool) -> Result<Var> {
        match &self.head {
            GnnHead::Classifier(head) => head.forward(tape, p, h, rng, training),
            GnnHead::Pair(_) => Err(Error::State("link model has no classifier head".into())),
        }
    }

    /// Pair logits for row-aligned endpoint representations.
    pub fn score(
        &self,
        tape: &mut Tape<S>,
        p: &[Var],
        src: Var,
        dst: Var,
        rng: &mut RngState,
        training: bool,
    ) -> Result<Var> {
        match &self.head {
            GnnHead::Pair(head) => head.forward(tape, p, src, dst, rng, training),
            GnnHead::Classifier(_) => Err(Error::State("classification model has no pair head".into())),
        }
    }
}
