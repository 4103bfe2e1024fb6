use serde::{Deserialize, Serialize};

use crate::autodiff::{normal_init, ParamId, ParamStore, Tape, Var};
use crate::corpus::TokenBatch;
use crate::error::{Error, Result};
use crate::lora::{LoraConfig, LoraLinear, Projection, PROJECTION_NAMES};
use crate::nn::{LayerNorm, Linear};
use crate::rng::RngState;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    Cls,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout_rate: f64,
    pub pooling: Pooling,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            num_layers: 2,
            num_heads: 4,
            ffn_dim: 256,
            max_len: 64,
            vocab_size: 0,
            dropout_rate: 0.1,
            pooling: Pooling::Mean,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.num_heads == 0 || !self.d_model.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible into {} heads",
                self.d_model, self.num_heads
            )));
        }
        if self.max_len < 2 {
            return Err(Error::Config(format!("max_len {} below 2", self.max_len)));
        }
        if self.vocab_size <= crate::corpus::SEP {
            return Err(Error::Config(format!(
                "vocab_size {} leaves no word ids",
                self.vocab_size
            )));
        }
        if self.num_layers == 0 || self.ffn_dim == 0 {
            return Err(Error::Config(
                "encoder needs at least one layer and a positive ffn_dim".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub ln_attn: LayerNorm,
    pub q: Projection,
    pub k: Projection,
    pub v: Projection,
    pub o: Projection,
    pub ln_ffn: LayerNorm,
    pub ffn_in: Projection,
    pub ffn_out: Projection,
}

impl EncoderLayer {
    pub fn projection_mut(&mut self, name: &str) -> Option<&mut Projection> {
        Some(match name {
            "q" => &mut self.q,
            "k" => &mut self.k,
            "v" => &mut self.v,
            "o" => &mut self.o,
            "ffn_in" => &mut self.ffn_in,
            "ffn_out" => &mut self.ffn_out,
            _ => return None,
        })
    }

    pub fn projection(&self, name: &str) -> Option<&Projection> {
        Some(match name {
            "q" => &self.q,
            "k" => &self.k,
            "v" => &self.v,
            "o" => &self.o,
            "ffn_in" => &self.ffn_in,
            "ffn_out" => &self.ffn_out,
            _ => return None,
        })
    }
}

/// Pre-layer-norm transformer encoder with learned positions and a
/// masked-LM output head.
#[derive(Clone, Debug)]
pub struct EncoderModel<S> {
    pub config: EncoderConfig,
    pub params: ParamStore<S>,
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub layers: Vec<EncoderLayer>,
    pub ln_final: LayerNorm,
    pub mlm_head: Linear,
    /// Registry size before any adapter was added.
    pub base_param_count: usize,
    pub lora: Option<LoraConfig>,
    training: bool,
}

impl<S: Scalar> EncoderModel<S> {
    pub fn new(config: EncoderConfig, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut params = ParamStore::new();
        let tok_emb = params.add("tok_emb", normal_init(config.vocab_size, d, 0.02, rng));
        let pos_emb = params.add("pos_emb", normal_init(config.max_len, d, 0.02, rng));
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let name = |s: &str| format!("layer{l}.{s}");
            let mut lin = |s: &str, i, o| Projection::Plain(Linear::new(&mut params, &name(s), i, o, rng));
            let q = lin("q", d, d);
            let k = lin("k", d, d);
            let v = lin("v", d, d);
            let o = lin("o", d, d);
            let ffn_in = lin("ffn_in", d, config.ffn_dim);
            let ffn_out = lin("ffn_out", config.ffn_dim, d);
            layers.push(EncoderLayer {
                ln_attn: LayerNorm::new(&mut params, &name("ln_attn"), d),
                q,
                k,
                v,
                o,
                ln_ffn: LayerNorm::new(&mut params, &name("ln_ffn"), d),
                ffn_in,
                ffn_out,
            });
        }
        let ln_final = LayerNorm::new(&mut params, "ln_final", d);
        let mlm_head = Linear::new(&mut params, "mlm_head", d, config.vocab_size, rng);
        let base_param_count = params.len();
        Ok(Self {
            config,
            params,
            tok_emb,
            pos_emb,
            layers,
            ln_final,
            mlm_head,
            base_param_count,
            lora: None,
            training: false,
        })
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    /// Same model in another precision.
    pub fn cast<T: Scalar>(&self) -> EncoderModel<T> {
        EncoderModel {
            config: self.config.clone(),
            params: self.params.cast(),
            tok_emb: self.tok_emb,
            pos_emb: self.pos_emb,
            layers: self.layers.clone(),
            ln_final: self.ln_final,
            mlm_head: self.mlm_head,
            base_param_count: self.base_param_count,
            lora: self.lora.clone(),
            training: self.training,
        }
    }

    pub fn bind(&self, tape: &mut Tape<S>) -> Vec<Var> {
        self.params.bind(tape)
    }

    /// Token states `[(b·L) × d]` for a batch.
    pub fn forward(&self, tape: &mut Tape<S>, p: &[Var], batch: &TokenBatch, rng: &mut RngState) -> Result<Var> {
        let (size, len) = (batch.size(), batch.len);
        if len > self.config.max_len {
            return Err(Error::Length {
                len,
                max_len: self.config.max_len,
            });
        }
        if let Some(&bad) = batch.input_ids.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::Index(format!("token id {bad} outside vocabulary")));
        }
        let training = self.training;
        let rate = self.config.dropout_rate;
        let positions: Vec<usize> = (0..size).flat_map(|_| 0..len).collect();
        let tok = tape.gather_rows(p[self.tok_emb], &batch.input_ids)?;
        let pos = tape.gather_rows(p[self.pos_emb], &positions)?;
        let x = tape.add(tok, pos)?;
        let mut x = tape.dropout(x, rate, rng, training)?;
        for layer in &self.layers {
            let h = layer.ln_attn.forward(tape, p, x)?;
            let q = layer.q.forward(tape, p, h, rng, training)?;
            let k = layer.k.forward(tape, p, h, rng, training)?;
            let v = layer.v.forward(tape, p, h, rng, training)?;
            let a = tape.attention(q, k, v, &batch.attention_mask, size, len, self.config.num_heads)?;
            let a = layer.o.forward(tape, p, a, rng, training)?;
            let a = tape.dropout(a, rate, rng, training)?;
            x = tape.add(x, a)?;
            let h = layer.ln_ffn.forward(tape, p, x)?;
            let f = layer.ffn_in.forward(tape, p, h, rng, training)?;
            let f = tape.gelu(f);
            let f = layer.ffn_out.forward(tape, p, f, rng, training)?;
            let f = tape.dropout(f, rate, rng, training)?;
            x = tape.add(x, f)?;
        }
        self.ln_final.forward(tape, p, x)
    }

    /// Pooled sentence embeddings `[b × d]`.
    pub fn embed(&self, tape: &mut Tape<S>, p: &[Var], batch: &TokenBatch, rng: &mut RngState) -> Result<Var> {
        let hidden = self.forward(tape, p, batch, rng)?;
        pool(tape, hidden, batch, self.config.pooling)
    }

    /// Eval-mode embeddings on a private tape.
    pub fn embed_batch(&self, batch: &TokenBatch) -> Result<Tensor<S>> {
        if self.training {
            return Err(Error::State("embedding extraction requires eval mode".into()));
        }
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let out = self.embed(&mut tape, &p, batch, &mut RngState::new(0))?;
        Ok(tape.value(out).clone())
    }

    /// Adds adapters to every targeted projection and freezes the base.
    pub fn wrap_lora(&mut self, cfg: &LoraConfig, rng: &mut RngState) -> Result<()> {
        cfg.validate()?;
        if self.lora.is_some() || self.params.len() != self.base_param_count {
            return Err(Error::State("model already carries adapters".into()));
        }
        self.params.freeze_all();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for target in &cfg.targets {
                let proj = layer
                    .projection_mut(target)
                    .ok_or_else(|| Error::Config(format!("unknown lora target {target:?}")))?;
                let base = proj.base();
                *proj = Projection::Lora(LoraLinear::wrap(
                    &mut self.params,
                    base,
                    &format!("layer{l}.{target}"),
                    cfg,
                    rng,
                ));
            }
        }
        self.lora = Some(cfg.clone());
        Ok(())
    }

    /// Every parameter except the unused masked-LM head becomes trainable.
    pub fn prepare_full_finetune(&mut self) -> Result<()> {
        if self.lora.is_some() {
            return Err(Error::State("full finetuning of an adapted model".into()));
        }
        self.params.unfreeze_all();
        self.params.set_frozen(self.mlm_head.weight, true);
        self.params.set_frozen(self.mlm_head.bias, true);
        Ok(())
    }

    /// Copy with every adapter folded into its base weight.
    pub fn merge_lora(&self) -> Result<EncoderModel<S>> {
        if self.training {
            return Err(Error::State("adapter merge requires eval mode".into()));
        }
        let mut merged = self.clone();
        for layer in merged.layers.iter_mut() {
            for name in PROJECTION_NAMES {
                let proj = layer.projection_mut(name).expect("known projection");
                if let Projection::Lora(l) = *proj {
                    let w = l.merged_weight(&self.params, false)?;
                    merged.params.get_mut(l.base.weight).value = w;
                    *proj = Projection::Plain(l.base);
                }
            }
        }
        merged.lora = None;
        Ok(merged)
    }

    pub fn adapters(&self) -> impl Iterator<Item = (usize, &'static str, &LoraLinear)> + '_ {
        self.layers.iter().enumerate().flat_map(|(l, layer)| {
            PROJECTION_NAMES
                .into_iter()
                .filter_map(move |name| match layer.projection(name) {
                    Some(Projection::Lora(a)) => Some((l, name, a)),
                    _ => None,
                })
        })
    }
}

pub fn mean_pool<S: Scalar>(tape: &mut Tape<S>, hidden: Var, batch: &TokenBatch) -> Result<Var> {
    tape.mean_pool(hidden, &batch.attention_mask, batch.size(), batch.len)
}

pub fn cls_pool<S: Scalar>(tape: &mut Tape<S>, hidden: Var, batch: &TokenBatch) -> Result<Var> {
    let rows: Vec<usize> = (0..batch.size()).map(|b| b * batch.len).collect();
    tape.gather_rows(hidden, &rows)
}

pub fn pool<S: Scalar>(tape: &mut Tape<S>, hidden: Var, batch: &TokenBatch, pooling: Pooling) -> Result<Var> {
    match pooling {
        Pooling::Mean => mean_pool(tape, hidden, batch),
        Pooling::Cls => cls_pool(tape, hidden, batch),
    }
}
