use std::collections::HashMap;

use crate::autodiff::{sigmoid, softmax_rows, AdamW, ParamStore, Tape};
use crate::corpus::{TextualGraph, TokenizedTexts};
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::eval::{accuracy, link_scores, roc_auc, EpochReport, LinkScores};
use crate::graph::{sample_non_neighbor, EdgeSplits, SplitKind};
use crate::heads::{ClassifierHead, PairHead};
use crate::lora::LoraConfig;
use crate::rng::RngState;
use crate::stage1::config::{Peft, Stage1Config};
use crate::tensor::Tensor;

/// A head and its own parameter registry.
#[derive(Clone, Debug)]
pub struct HeadParams<H> {
    pub store: ParamStore<f32>,
    pub head: H,
}

impl HeadParams<ClassifierHead> {
    pub fn classifier(dim: usize, num_classes: usize, dropout: f64, rng: &mut RngState) -> Self {
        let mut store = ParamStore::new();
        let head = ClassifierHead::new(&mut store, "cls_head", dim, num_classes, dropout, rng);
        Self { store, head }
    }
}

impl HeadParams<PairHead> {
    pub fn pair(dim: usize, hidden: usize, dropout: f64, rng: &mut RngState) -> Self {
        let mut store = ParamStore::new();
        let head = PairHead::new(&mut store, "pair_head", dim, hidden, dropout, rng);
        Self { store, head }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneOutcome {
    pub reports: Vec<EpochReport>,
    /// 1-based epoch whose weights were restored; 0 means the initial
    /// weights were never beaten.
    pub best_epoch: usize,
    pub best_valid: f64,
}

/// Wraps with adapters or opens every weight for full finetuning.
pub fn prepare_for_finetune(
    model: &mut EncoderModel<f32>,
    peft: Peft,
    lora: &LoraConfig,
    rng: &mut RngState,
) -> Result<()> {
    match peft {
        Peft::Lora => model.wrap_lora(lora, rng),
        Peft::Full => model.prepare_full_finetune(),
    }
}

fn check_basic(cfg: &Stage1Config) -> Result<()> {
    if !(cfg.learning_rate >= 0.0) || cfg.batch_size == 0 {
        return Err(Error::Parameter(
            "finetuning needs lr ≥ 0 and a positive batch size".into(),
        ));
    }
    Ok(())
}

fn steps_cap(cfg: &Stage1Config) -> usize {
    if cfg.max_steps_per_epoch == 0 {
        usize::MAX
    } else {
        cfg.max_steps_per_epoch
    }
}

/// Class probabilities for `nodes` in eval mode.
pub fn predict_cls(
    model: &EncoderModel<f32>,
    head: &HeadParams<ClassifierHead>,
    texts: &TokenizedTexts,
    nodes: &[usize],
    batch_size: usize,
) -> Result<Tensor<f32>> {
    let emb = crate::stage1::embed_nodes(model, texts, nodes, batch_size)?;
    let mut tape = Tape::new();
    let p = head.store.bind(&mut tape);
    let x = tape.constant(emb);
    let logits = head.head.forward(&mut tape, &p, x, &mut RngState::new(0), false)?;
    Ok(softmax_rows(tape.value(logits)))
}

fn cls_accuracy(
    model: &EncoderModel<f32>,
    head: &HeadParams<ClassifierHead>,
    texts: &TokenizedTexts,
    nodes: &[usize],
    labels: &[usize],
    batch_size: usize,
) -> Result<f64> {
    let probs = predict_cls(model, head, texts, nodes, batch_size)?;
    let pred = crate::autodiff::argmax_rows(&probs);
    let y: Vec<usize> = nodes.iter().map(|&v| labels[v]).collect();
    accuracy(&pred, &y)
}

/// Eval-mode accuracy of the current weights on train, valid and test
/// nodes.
pub fn cls_split_accuracy(
    graph: &TextualGraph,
    texts: &TokenizedTexts,
    model: &EncoderModel<f32>,
    head: &HeadParams<ClassifierHead>,
    batch_size: usize,
) -> Result<[f64; 3]> {
    let labels = graph
        .labels
        .as_ref()
        .ok_or_else(|| Error::Data("graph has no labels".into()))?;
    let mut eval = model.clone();
    eval.set_training(false);
    let s = &graph.splits;
    Ok([
        cls_accuracy(&eval, head, texts, &s.train, labels, batch_size)?,
        cls_accuracy(&eval, head, texts, &s.valid, labels, batch_size)?,
        cls_accuracy(&eval, head, texts, &s.test, labels, batch_size)?,
    ])
}

/// Node-classification finetuning; restores the best-validation weights
/// and leaves the model in eval mode.
pub fn finetune_cls(
    graph: &TextualGraph,
    texts: &TokenizedTexts,
    model: &mut EncoderModel<f32>,
    head: &mut HeadParams<ClassifierHead>,
    cfg: &Stage1Config,
    rng: &mut RngState,
) -> Result<FinetuneOutcome> {
    check_basic(cfg)?;
    let labels = graph
        .labels
        .as_ref()
        .ok_or_else(|| Error::Data("graph has no labels".into()))?;
    if let Some(&v) = graph.splits.train.iter().find(|&&v| v >= labels.len()) {
        return Err(Error::Data(format!("train node {v} has no label")));
    }
    let mut enc_opt = AdamW::new(cfg.learning_rate, cfg.weight_decay)?;
    let mut head_opt = AdamW::new(cfg.learning_rate, cfg.weight_decay)?;
    model.set_training(false);
    let mut best_valid = cls_accuracy(model, head, texts, &graph.splits.valid, labels, cfg.batch_size)?;
    let mut best = (model.params.snapshot(), head.store.snapshot(), 0);
    let mut reports = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        model.set_training(true);
        let mut loss_sum = 0.0;
        let mut steps = 0usize;
        let batches: Vec<_> = texts
            .epoch(&graph.splits.train, cfg.batch_size, Some(rng))?
            .take(steps_cap(cfg))
            .collect();
        for batch in batches {
            model.params.zero_grad();
            head.store.zero_grad();
            let mut tape = Tape::new();
            let pe = model.bind(&mut tape);
            let ph = head.store.bind(&mut tape);
            let e = model.embed(&mut tape, &pe, &batch, rng)?;
            let logits = head.head.forward(&mut tape, &ph, e, rng, true)?;
            let y: Vec<usize> = batch.node_ids.iter().map(|&v| labels[v]).collect();
            let loss = tape.cross_entropy_smoothed(logits, &y, cfg.label_smoothing)?;
            let value = tape.value(loss).item()? as f64;
            if !value.is_finite() {
                return Err(Error::Numeric(format!("finetuning loss {value} at epoch {epoch}")));
            }
            tape.backward(loss)?;
            model.params.accumulate_from(&tape, &pe);
            head.store.accumulate_from(&tape, &ph);
            enc_opt.step(&mut model.params)?;
            head_opt.step(&mut head.store)?;
            loss_sum += value;
            steps += 1;
        }
        model.set_training(false);
        let train_acc = cls_accuracy(model, head, texts, &graph.splits.train, labels, cfg.batch_size)?;
        let valid_acc = cls_accuracy(model, head, texts, &graph.splits.valid, labels, cfg.batch_size)?;
        reports.push(EpochReport {
            epoch,
            train_loss: loss_sum / steps.max(1) as f64,
            train_metric: train_acc,
            valid_metric: valid_acc,
        });
        if valid_acc > best_valid {
            best_valid = valid_acc;
            best = (model.params.snapshot(), head.store.snapshot(), epoch);
        }
    }
    model.params.restore(&best.0)?;
    head.store.restore(&best.1)?;
    model.set_training(false);
    Ok(FinetuneOutcome {
        reports,
        best_epoch: best.2,
        best_valid,
    })
}

/// Pair-head logits for `(src, dst)` rows of an embedding matrix, eval
/// mode, in chunks.
pub fn score_pairs(head: &HeadParams<PairHead>, emb: &Tensor<f32>, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    const CHUNK: usize = 8192;
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(CHUNK) {
        let mut tape = Tape::new();
        let p = head.store.bind(&mut tape);
        let e = tape.constant(emb.clone());
        let (src, dst): (Vec<usize>, Vec<usize>) = chunk.iter().copied().unzip();
        let s = tape.gather_rows(e, &src)?;
        let d = tape.gather_rows(e, &dst)?;
        let logits = head.head.forward(&mut tape, &p, s, d, &mut RngState::new(0), false)?;
        out.extend(tape.value(logits).data().iter().map(|&v| v as f64));
    }
    Ok(out)
}

fn encoder_link_scores(
    model: &EncoderModel<f32>,
    head: &HeadParams<PairHead>,
    texts: &TokenizedTexts,
    splits: &EdgeSplits,
    which: SplitKind,
    batch_size: usize,
) -> Result<LinkScores> {
    let mut eval = model.clone();
    eval.set_training(false);
    let nodes: Vec<usize> = (0..texts.num_texts()).collect();
    let emb = crate::stage1::embed_nodes(&eval, texts, &nodes, batch_size)?;
    link_scores(splits, which, |pairs| score_pairs(head, &emb, pairs))
}

/// Valid and test link metrics of the current encoder and pair head.
pub fn link_split_scores(
    graph: &TextualGraph,
    texts: &TokenizedTexts,
    model: &EncoderModel<f32>,
    head: &HeadParams<PairHead>,
    batch_size: usize,
) -> Result<(LinkScores, LinkScores)> {
    let splits = graph
        .edge_splits
        .as_ref()
        .ok_or_else(|| Error::Data("graph has no edge splits".into()))?;
    Ok((
        encoder_link_scores(model, head, texts, splits, SplitKind::Valid, batch_size)?,
        encoder_link_scores(model, head, texts, splits, SplitKind::Test, batch_size)?,
    ))
}

/// Link finetuning on train edges with uniform negatives that avoid the
/// message graph; selection by validation MRR.
pub fn finetune_link(
    graph: &TextualGraph,
    texts: &TokenizedTexts,
    model: &mut EncoderModel<f32>,
    head: &mut HeadParams<PairHead>,
    cfg: &Stage1Config,
    rng: &mut RngState,
) -> Result<FinetuneOutcome> {
    check_basic(cfg)?;
    if cfg.link_negatives == 0 {
        return Err(Error::Parameter(
            "link finetuning needs at least one negative per positive".into(),
        ));
    }
    let splits = graph
        .edge_splits
        .as_ref()
        .ok_or_else(|| Error::Data("graph has no edge splits".into()))?;
    if splits.train.is_empty() {
        return Err(Error::Data("no train edges".into()));
    }
    let mut enc_opt = AdamW::new(cfg.learning_rate, cfg.weight_decay)?;
    let mut head_opt = AdamW::new(cfg.learning_rate, cfg.weight_decay)?;
    let valid_mrr = |m: &EncoderModel<f32>, h: &HeadParams<PairHead>| {
        encoder_link_scores(m, h, texts, splits, SplitKind::Valid, cfg.batch_size).map(|s| s.mrr)
    };
    let mut best_valid = valid_mrr(model, head)?;
    let mut best = (model.params.snapshot(), head.store.snapshot(), 0);
    let mut reports = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        model.set_training(true);
        let mut order: Vec<usize> = (0..splits.train.len()).collect();
        rng.shuffle(&mut order);
        let (mut loss_sum, mut steps) = (0.0, 0usize);
        let (mut pos_seen, mut neg_seen) = (Vec::new(), Vec::new());
        for chunk in order.chunks(cfg.batch_size).take(steps_cap(cfg)) {
            let mut src = Vec::with_capacity(chunk.len() * (1 + cfg.link_negatives));
            let mut dst = Vec::with_capacity(src.capacity());
            let mut targets = Vec::with_capacity(src.capacity());
            for &i in chunk {
                let (u, v) = splits.train[i];
                src.push(u);
                dst.push(v);
                targets.push(1.0f32);
            }
            for &i in chunk {
                let u = splits.train[i].0;
                for _ in 0..cfg.link_negatives {
                    src.push(u);
                    dst.push(sample_non_neighbor(&splits.message_graph, u, rng)?);
                    targets.push(0.0);
                }
            }
            let mut local: HashMap<usize, usize> = HashMap::new();
            let mut nodes = Vec::new();
            for &v in src.iter().chain(&dst) {
                local.entry(v).or_insert_with(|| {
                    nodes.push(v);
                    nodes.len() - 1
                });
            }
            let batch = texts.batch(&nodes)?;
            model.params.zero_grad();
            head.store.zero_grad();
            let mut tape = Tape::new();
            let pe = model.bind(&mut tape);
            let ph = head.store.bind(&mut tape);
            let e = model.embed(&mut tape, &pe, &batch, rng)?;
            let si: Vec<usize> = src.iter().map(|v| local[v]).collect();
            let di: Vec<usize> = dst.iter().map(|v| local[v]).collect();
            let hs = tape.gather_rows(e, &si)?;
            let hd = tape.gather_rows(e, &di)?;
            let logits = head.head.forward(&mut tape, &ph, hs, hd, rng, true)?;
            let loss = tape.bce_with_logits(logits, &targets)?;
            let value = tape.value(loss).item()? as f64;
            if !value.is_finite() {
                return Err(Error::Numeric(format!("link finetuning loss {value} at epoch {epoch}")));
            }
            for (&s, &t) in tape.value(logits).data().iter().zip(&targets) {
                if t == 1.0 {
                    pos_seen.push(sigmoid(s as f64));
                } else {
                    neg_seen.push(sigmoid(s as f64));
                }
            }
            tape.backward(loss)?;
            model.params.accumulate_from(&tape, &pe);
            head.store.accumulate_from(&tape, &ph);
            enc_opt.step(&mut model.params)?;
            head_opt.step(&mut head.store)?;
            loss_sum += value;
            steps += 1;
        }
        model.set_training(false);
        let valid = valid_mrr(model, head)?;
        reports.push(EpochReport {
            epoch,
            train_loss: loss_sum / steps.max(1) as f64,
            train_metric: roc_auc(&pos_seen, &neg_seen)?,
            valid_metric: valid,
        });
        if valid > best_valid {
            best_valid = valid;
            best = (model.params.snapshot(), head.store.snapshot(), epoch);
        }
    }
    model.params.restore(&best.0)?;
    head.store.restore(&best.1)?;
    model.set_training(false);
    Ok(FinetuneOutcome {
        reports,
        best_epoch: best.2,
        best_valid,
    })
}
