//! Task heads on top of node embeddings.

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::Result;
use crate::nn::Linear;
use crate::rng::RngState;
use crate::tensor::Scalar;

/// Dropout followed by a linear map to class logits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierHead {
    pub linear: Linear,
    pub dropout: f64,
}

impl ClassifierHead {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        dim: usize,
        num_classes: usize,
        dropout: f64,
        rng: &mut RngState,
    ) -> Self {
        Self {
            linear: Linear::new(store, name, dim, num_classes, rng),
            dropout,
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        p: &[Var],
        x: Var,
        rng: &mut RngState,
        training: bool,
    ) -> Result<Var> {
        let x = tape.dropout(x, self.dropout, rng, training)?;
        self.linear.forward(tape, p, x)
    }
}

/// Two-layer MLP scoring `[h_src ⊕ h_dst ⊕ h_src∘h_dst]` to one logit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairHead {
    pub hidden: Linear,
    pub out: Linear,
    pub dropout: f64,
}

impl PairHead {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        dim: usize,
        hidden: usize,
        dropout: f64,
        rng: &mut RngState,
    ) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{name}.hidden"), 3 * dim, hidden, rng),
            out: Linear::new(store, &format!("{name}.out"), hidden, 1, rng),
            dropout,
        }
    }

    /// Logits `[n × 1]` for row-aligned endpoint embeddings.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        p: &[Var],
        src: Var,
        dst: Var,
        rng: &mut RngState,
        training: bool,
    ) -> Result<Var> {
        let prod = tape.mul(src, dst)?;
        let x = tape.concat_cols(&[src, dst, prod])?;
        let x = tape.dropout(x, self.dropout, rng, training)?;
        let h = self.hidden.forward(tape, p, x)?;
        let h = tape.relu(h);
        self.out.forward(tape, p, h)
    }
}
