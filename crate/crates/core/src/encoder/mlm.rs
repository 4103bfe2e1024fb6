use crate::autodiff::{AdamW, Tape};
use crate::corpus::{TokenBatch, TokenizedTexts, UNK};
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MlmStep {
    Step(f64),
    /// No position was selected for masking.
    Skipped,
}

/// Positions chosen for masking: each valid non-cls token independently
/// with probability `mask_rate`.
pub fn select_mask_positions(batch: &TokenBatch, mask_rate: f64, rng: &mut RngState) -> Vec<usize> {
    (0..batch.input_ids.len())
        .filter(|&i| i % batch.len != 0 && batch.attention_mask[i])
        .filter(|_| rng.bernoulli(mask_rate))
        .collect()
}

/// Masked-LM loss at the selected positions, with those inputs replaced
/// by `unk`. Gradients land on the model's trainable parameters.
pub fn mlm_loss<S: Scalar>(
    model: &mut EncoderModel<S>,
    batch: &TokenBatch,
    positions: &[usize],
    rng: &mut RngState,
) -> Result<f64> {
    let mut masked = batch.clone();
    let targets: Vec<usize> = positions.iter().map(|&i| batch.input_ids[i]).collect();
    for &i in positions {
        masked.input_ids[i] = UNK;
    }
    let mut tape = Tape::new();
    let p = model.bind(&mut tape);
    let hidden = model.forward(&mut tape, &p, &masked, rng)?;
    let picked = tape.gather_rows(hidden, positions)?;
    let logits = model.mlm_head.forward(&mut tape, &p, picked)?;
    let loss = tape.cross_entropy_smoothed(logits, &targets, 0.0)?;
    let value = tape.value(loss).item()?.to_f64();
    tape.backward(loss)?;
    model.params.accumulate_from(&tape, &p);
    Ok(value)
}

/// One optimizer step of masked-LM pretraining over all encoder weights.
pub fn mlm_pretrain_step<S: Scalar>(
    model: &mut EncoderModel<S>,
    batch: &TokenBatch,
    mask_rate: f64,
    rng: &mut RngState,
    opt: &mut AdamW<S>,
) -> Result<MlmStep> {
    if !(0.0..1.0).contains(&mask_rate) {
        return Err(Error::Parameter(format!("mask rate {mask_rate} outside (0, 1)")));
    }
    let positions = select_mask_positions(batch, mask_rate, rng);
    if positions.is_empty() {
        return Ok(MlmStep::Skipped);
    }
    model.params.zero_grad();
    let loss = mlm_loss(model, batch, &positions, rng)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("masked-LM loss {loss}")));
    }
    opt.step(&mut model.params)?;
    Ok(MlmStep::Step(loss))
}

/// Masked-LM pretraining schedule over a text corpus.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlmConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub mask_rate: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl Default for MlmConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            mask_rate: 0.15,
            learning_rate: 1e-3,
            weight_decay: 0.01,
        }
    }
}

impl MlmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("mlm.batch_size must be positive".into()));
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(Error::Config(format!(
                "mlm.mask_rate {} outside (0, 1)",
                self.mask_rate
            )));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config(
                "mlm.learning_rate must be > 0 and weight_decay ≥ 0".into(),
            ));
        }
        Ok(())
    }
}

/// Runs the schedule over every text; returns the mean loss per epoch.
/// The model is left in eval mode.
pub fn mlm_pretrain<S: Scalar>(
    model: &mut EncoderModel<S>,
    texts: &TokenizedTexts,
    cfg: &MlmConfig,
    rng: &mut RngState,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay)?;
    let nodes: Vec<usize> = (0..texts.num_texts()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    model.set_training(true);
    for _ in 0..cfg.epochs {
        let batches: Vec<TokenBatch> = texts.epoch(&nodes, cfg.batch_size, Some(rng))?.collect();
        let (mut sum, mut steps) = (0.0, 0usize);
        for batch in &batches {
            if let MlmStep::Step(loss) = mlm_pretrain_step(model, batch, cfg.mask_rate, rng, &mut opt)? {
                sum += loss;
                steps += 1;
            }
        }
        history.push(if steps == 0 { f64::NAN } else { sum / steps as f64 });
    }
    model.set_training(false);
    Ok(history)
}
