//! Low-rank adapters on frozen linear projections.

use serde::{Deserialize, Serialize};

use crate::autodiff::{normal_init, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::rng::RngState;
use crate::tensor::{Scalar, Tensor};

/// Projection names an adapter can target, per encoder layer.
pub const PROJECTION_NAMES: [&str; 6] = ["q", "k", "v", "o", "ffn_in", "ffn_out"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
    pub targets: Vec<String>,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            rank: 4,
            alpha: 16.0,
            dropout: 0.1,
            targets: vec!["q".into(), "v".into()],
        }
    }
}

impl LoraConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Config("lora rank must be at least 1".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("lora alpha {} must be positive", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("lora dropout {} outside [0, 1)", self.dropout)));
        }
        if self.targets.is_empty() {
            return Err(Error::Config("lora needs at least one target".into()));
        }
        if let Some(bad) = self.targets.iter().find(|t| !PROJECTION_NAMES.contains(&t.as_str())) {
            return Err(Error::Config(format!("unknown lora target {bad:?}")));
        }
        Ok(())
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// Frozen base projection plus trainable `A [r × in]`, `B [out × r]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoraLinear {
    pub base: Linear,
    pub a: usize,
    pub b: usize,
    pub rank: usize,
    pub scaling: f64,
    pub dropout: f64,
}

impl LoraLinear {
    /// Registers `A ~ N(0, 0.02²)` and `B = 0` and freezes the base.
    pub fn wrap<S: Scalar>(
        store: &mut ParamStore<S>,
        base: Linear,
        name: &str,
        cfg: &LoraConfig,
        rng: &mut RngState,
    ) -> Self {
        let a = store.add(format!("{name}.lora_a"), normal_init(cfg.rank, base.in_dim, 0.02, rng));
        let b = store.add(format!("{name}.lora_b"), Tensor::zeros(base.out_dim, cfg.rank));
        store.set_frozen(base.weight, true);
        store.set_frozen(base.bias, true);
        Self {
            base,
            a,
            b,
            rank: cfg.rank,
            scaling: cfg.scaling(),
            dropout: cfg.dropout,
        }
    }

    /// `x·Wᵀ + b + s·(drop(x)·Aᵀ)·Bᵀ`; dropout only while training.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        p: &[Var],
        x: Var,
        rng: &mut RngState,
        training: bool,
    ) -> Result<Var> {
        let base = self.base.forward(tape, p, x)?;
        let xd = tape.dropout(x, self.dropout, rng, training)?;
        let down = tape.matmul_nt(xd, p[self.a])?;
        let up = tape.matmul_nt(down, p[self.b])?;
        let up = tape.scale(up, S::lit(self.scaling));
        tape.add(base, up)
    }

    /// `W + s·B·A`. Only valid in eval mode, where the adapter path is
    /// deterministic.
    pub fn merged_weight<S: Scalar>(&self, store: &ParamStore<S>, training: bool) -> Result<Tensor<S>> {
        if training {
            return Err(Error::State("adapter merge requires eval mode".into()));
        }
        let ba = store.value(self.b).matmul(store.value(self.a))?;
        let s = S::lit(self.scaling);
        let mut w = store.value(self.base.weight).clone();
        for (x, &d) in w.data_mut().iter_mut().zip(ba.data()) {
            *x += s * d;
        }
        Ok(w)
    }

    pub fn num_adapter_params(&self) -> usize {
        self.rank * (self.base.in_dim + self.base.out_dim)
    }
}

/// A linear projection inside the encoder, optionally adapted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Projection {
    Plain(Linear),
    Lora(LoraLinear),
}

impl Projection {
    pub fn base(&self) -> Linear {
        match self {
            Projection::Plain(l) => *l,
            Projection::Lora(l) => l.base,
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
        match self {
            Projection::Plain(l) => l.forward(tape, p, x),
            Projection::Lora(l) => l.forward(tape, p, x, rng, training),
        }
    }
}
