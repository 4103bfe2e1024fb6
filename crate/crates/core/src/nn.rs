//! Parameter handles shared by the encoder, adapters, heads and GNNs.
//! Forward passes take the vars produced by [`ParamStore::bind`].

use crate::autodiff::{xavier_uniform, ParamId, ParamStore, Tape, Var};
use crate::error::Result;
use crate::rng::RngState;
use crate::tensor::{Scalar, Tensor};

/// `y = x·Wᵀ + b` with `W` stored `[out × in]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut RngState,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), xavier_uniform(out_dim, in_dim, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, out_dim));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, p: &[Var], x: Var) -> Result<Var> {
        tape.linear(x, p[self.weight], Some(p[self.bias]))
    }

    pub fn num_params(&self) -> usize {
        self.out_dim * (self.in_dim + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, dim: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::full(1, dim, S::ONE));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, dim));
        Self { gain, bias }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, p: &[Var], x: Var) -> Result<Var> {
        tape.layer_norm(x, p[self.gain], p[self.bias], LAYER_NORM_EPS)
    }
}
