//! Tape recording and reverse sweep.

use std::sync::Arc;

use crate::autodiff::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, SparseMatrix, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

pub(crate) enum Op<S> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    MatMulNt {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    AddRow {
        a: Var,
        row: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        factor: S,
    },
    Relu {
        a: Var,
    },
    Gelu {
        a: Var,
    },
    MaskMul {
        a: Var,
        mask: Vec<S>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<S>,
        inv_std: Vec<S>,
    },
    GatherRows {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatCols {
        parts: Vec<Var>,
    },
    Attention(Box<AttentionSaved<S>>),
    MeanPool {
        x: Var,
        mask: Vec<bool>,
        batch: usize,
        len: usize,
        counts: Vec<usize>,
    },
    SpMM {
        matrix: Arc<SparseMatrix<S>>,
        x: Var,
    },
    Sum {
        a: Var,
    },
    Mean {
        a: Var,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        eps: S,
        probs: Vec<S>,
    },
    Bce {
        logits: Var,
        targets: Vec<S>,
    },
}

pub(crate) struct AttentionSaved<S> {
    pub q: Var,
    pub k: Var,
    pub v: Var,
    pub probs: Vec<S>,
    pub key_mask: Vec<bool>,
    pub len: usize,
    pub heads: usize,
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
    param: Option<ParamId>,
    grad: Option<Tensor<S>>,
}

/// A single forward pass. Build a fresh tape per step; nothing is reused
/// across steps.
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, value: Tensor<S>, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            param,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push_leaf(value, false, None)
    }

    /// Differentiable input not tied to a parameter registry.
    pub fn leaf(&mut self, value: Tensor<S>) -> Var {
        self.push_leaf(value, true, None)
    }

    /// Loads a registry parameter. Frozen parameters enter as constants.
    pub fn param(&mut self, store: &ParamStore<S>, id: ParamId) -> Var {
        let p = store.get(id);
        self.push_leaf(p.value.clone(), !p.frozen, Some(id))
    }

    pub(crate) fn push(&mut self, value: Tensor<S>, op: Op<S>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor<S>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Reverse sweep from a scalar loss. Leaf gradients accumulate across
    /// repeated calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut adj: Vec<Option<Tensor<S>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::scalar(S::ONE));
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match node.grad.as_mut() {
                    Some(acc) => add_into(acc.data_mut(), g.data()),
                    None => node.grad = Some(g),
                }
            } else {
                self.propagate(i, &g, &mut adj);
            }
        }
        Ok(())
    }

    /// Adds leaf gradients of registry parameters into the registry.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<S>) {
        for node in &self.nodes {
            if let (Some(id), Some(g)) = (node.param, node.grad.as_ref()) {
                let p = store.get_mut(id);
                if !p.frozen {
                    add_into(p.grad.data_mut(), g.data());
                }
            }
        }
    }

    /// Mutable gradient buffer for `v`, created on first use; `None` when
    /// `v` does not need a gradient.
    pub(crate) fn slot<'a>(&self, adj: &'a mut [Option<Tensor<S>>], v: Var) -> Option<&'a mut [S]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let (r, c) = self.shape(v);
        Some(adj[v.0].get_or_insert_with(|| Tensor::zeros(r, c)).data_mut())
    }

    pub(crate) fn acc(&self, adj: &mut [Option<Tensor<S>>], v: Var, g: Tensor<S>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match adj[v.0].as_mut() {
            Some(t) => add_into(t.data_mut(), g.data()),
            None => adj[v.0] = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor<S>, adj: &mut [Option<Tensor<S>>]) {
        use crate::autodiff::ops;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                if self.requires_grad(*a) {
                    let ga = g.matmul_nt(self.value(*b)).expect("shapes checked in forward");
                    self.acc(adj, *a, ga);
                }
                if self.requires_grad(*b) {
                    let gb = self.value(*a).matmul_tn(g).expect("shapes checked in forward");
                    self.acc(adj, *b, gb);
                }
            }
            Op::MatMulNt { a, b } => {
                if self.requires_grad(*a) {
                    let ga = g.matmul(self.value(*b)).expect("shapes checked in forward");
                    self.acc(adj, *a, ga);
                }
                if self.requires_grad(*b) {
                    let gb = g.matmul_tn(self.value(*a)).expect("shapes checked in forward");
                    self.acc(adj, *b, gb);
                }
            }
            Op::Add { a, b } => {
                if let Some(s) = self.slot(adj, *a) {
                    add_into(s, g.data());
                }
                if let Some(s) = self.slot(adj, *b) {
                    add_into(s, g.data());
                }
            }
            Op::Sub { a, b } => {
                if let Some(s) = self.slot(adj, *a) {
                    add_into(s, g.data());
                }
                if let Some(s) = self.slot(adj, *b) {
                    for (o, &x) in s.iter_mut().zip(g.data()) {
                        *o -= x;
                    }
                }
            }
            Op::AddRow { a, row } => {
                if let Some(s) = self.slot(adj, *a) {
                    add_into(s, g.data());
                }
                let cols = g.cols();
                if let Some(s) = self.slot(adj, *row) {
                    for r in 0..g.rows() {
                        add_into(s, g.row(r));
                    }
                    debug_assert_eq!(s.len(), cols);
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if let Some(s) = self.slot(adj, *a) {
                    for ((o, &x), &y) in s.iter_mut().zip(g.data()).zip(bv) {
                        *o += x * y;
                    }
                }
                if let Some(s) = self.slot(adj, *b) {
                    for ((o, &x), &y) in s.iter_mut().zip(g.data()).zip(av) {
                        *o += x * y;
                    }
                }
            }
            Op::Scale { a, factor } => {
                if let Some(s) = self.slot(adj, *a) {
                    for (o, &x) in s.iter_mut().zip(g.data()) {
                        *o += x * *factor;
                    }
                }
            }
            Op::Relu { a } => {
                let av = self.value(*a).data();
                if let Some(s) = self.slot(adj, *a) {
                    for ((o, &x), &y) in s.iter_mut().zip(g.data()).zip(av) {
                        if y > S::ZERO {
                            *o += x;
                        }
                    }
                }
            }
            Op::Gelu { a } => {
                let av = self.value(*a).data();
                if let Some(s) = self.slot(adj, *a) {
                    for ((o, &x), &y) in s.iter_mut().zip(g.data()).zip(av) {
                        *o += x * ops::gelu_grad(y);
                    }
                }
            }
            Op::MaskMul { a, mask } => {
                if let Some(s) = self.slot(adj, *a) {
                    for ((o, &x), &m) in s.iter_mut().zip(g.data()).zip(mask) {
                        *o += x * m;
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => ops::layer_norm_backward(self, adj, g, *x, *gain, *bias, xhat, inv_std),
            Op::GatherRows { table, ids } => {
                let cols = g.cols();
                if let Some(s) = self.slot(adj, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut s[id * cols..(id + 1) * cols], g.row(r));
                    }
                }
            }
            Op::ConcatCols { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let pc = self.shape(p).1;
                    if let Some(s) = self.slot(adj, p) {
                        for r in 0..g.rows() {
                            add_into(&mut s[r * pc..(r + 1) * pc], &g.row(r)[offset..offset + pc]);
                        }
                    }
                    offset += pc;
                }
            }
            Op::Attention(saved) => ops::attention_backward(self, adj, g, saved),
            Op::MeanPool {
                x,
                mask,
                batch,
                len,
                counts,
            } => {
                let d = g.cols();
                if let Some(s) = self.slot(adj, *x) {
                    for b in 0..*batch {
                        let inv = S::ONE / S::lit(counts[b] as f64);
                        for t in 0..*len {
                            if mask[b * len + t] {
                                let row = b * len + t;
                                for (o, &x) in s[row * d..(row + 1) * d].iter_mut().zip(g.row(b)) {
                                    *o += x * inv;
                                }
                            }
                        }
                    }
                }
            }
            Op::SpMM { matrix, x } => {
                if let Some(s) = self.slot(adj, *x) {
                    matrix.spmm_t_into(g, s);
                }
            }
            Op::Sum { a } => {
                let gv = g.data()[0];
                if let Some(s) = self.slot(adj, *a) {
                    for o in s.iter_mut() {
                        *o += gv;
                    }
                }
            }
            Op::Mean { a } => {
                let n = self.value(*a).len();
                let gv = g.data()[0] / S::lit(n as f64);
                if let Some(s) = self.slot(adj, *a) {
                    for o in s.iter_mut() {
                        *o += gv;
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                eps,
                probs,
            } => {
                let (n, k) = self.shape(*logits);
                let scale = g.data()[0] / S::lit(n as f64);
                let off = *eps / S::lit(k as f64);
                let on = S::ONE - *eps + off;
                if let Some(s) = self.slot(adj, *logits) {
                    for r in 0..n {
                        for c in 0..k {
                            let q = if c == labels[r] { on } else { off };
                            s[r * k + c] += (probs[r * k + c] - q) * scale;
                        }
                    }
                }
            }
            Op::Bce { logits, targets } => {
                let n = targets.len();
                let scale = g.data()[0] / S::lit(n as f64);
                let lv = self.value(*logits).data();
                if let Some(s) = self.slot(adj, *logits) {
                    for ((o, &x), &t) in s.iter_mut().zip(lv).zip(targets) {
                        *o += (ops::sigmoid(x) - t) * scale;
                    }
                }
            }
        }
    }
}

#[inline]
pub(crate) fn add_into<S: Scalar>(dst: &mut [S], src: &[S]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
