use std::collections::{BTreeSet, HashMap};

use crate::autodiff::{argmax_rows, softmax_rows, AdamW, Tape, Var};
use crate::corpus::TextualGraph;
use crate::error::{Error, Result};
use crate::eval::{accuracy, epochs_to_fraction, link_scores, EpochReport, LinkScores};
use crate::gnn::{BlockOps, GnnConfig, GnnModel, GnnShape, Propagation};
use crate::graph::{sample_neighbors, sample_non_neighbor, CsrAdjacency, Edge, EdgeSplits, SplitKind};
use crate::rng::RngState;
use crate::stage1::{FeatureMatrix, Task};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GnnOutcome {
    pub reports: Vec<EpochReport>,
    /// 1-based epoch whose weights were kept; 0 means the initial ones.
    pub best_epoch: usize,
    pub best_valid: f64,
    /// First epoch reaching 95% of the last epoch's validation metric.
    pub epochs_to_95: usize,
    /// Distinct positive edges that entered a training loss (link only).
    pub edge_access: BTreeSet<Edge>,
}

/// Adjacency a task trains and predicts on: the full graph for node
/// classification, train edges only for link prediction.
pub fn task_adjacency(graph: &TextualGraph, task: Task) -> Result<&CsrAdjacency> {
    match task {
        Task::NodeCls => Ok(&graph.adj),
        Task::Link => Ok(&edge_splits(graph)?.message_graph),
    }
}

fn edge_splits(graph: &TextualGraph) -> Result<&EdgeSplits> {
    graph
        .edge_splits
        .as_ref()
        .ok_or_else(|| Error::Data("graph has no edge splits".into()))
}

fn labels(graph: &TextualGraph) -> Result<&[usize]> {
    graph
        .labels
        .as_deref()
        .ok_or_else(|| Error::Data("graph has no labels".into()))
}

fn check_features(model: &GnnModel<f32>, fm: &FeatureMatrix, num_nodes: usize) -> Result<()> {
    if fm.num_nodes() != num_nodes {
        return Err(Error::Compatibility(format!(
            "features cover {} nodes, graph has {num_nodes}",
            fm.num_nodes()
        )));
    }
    if fm.dim() != model.shape.in_dim {
        return Err(Error::Compatibility(format!(
            "feature dim {} but model expects {}",
            fm.dim(),
            model.shape.in_dim
        )));
    }
    if fm.provenance != model.feature_provenance || fm.config_hash != model.feature_hash {
        return Err(Error::Compatibility(format!(
            "model was trained on {} features with another config hash than the given {} cache",
            model.feature_provenance, fm.provenance
        )));
    }
    Ok(())
}

fn check_nodes(nodes: impl IntoIterator<Item = usize>, n: usize) -> Result<()> {
    match nodes.into_iter().find(|&v| v >= n) {
        Some(v) => Err(Error::Index(format!("node {v} out of range for {n} nodes"))),
        None => Ok(()),
    }
}

/// Eval-mode representations of every node.
pub fn node_representations(model: &GnnModel<f32>, adj: &CsrAdjacency, fm: &FeatureMatrix) -> Result<Tensor<f32>> {
    check_features(model, fm, adj.num_nodes())?;
    let prop = Propagation::new(adj);
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape);
    let x = tape.constant(fm.x.clone());
    let h = model.encode_full(&mut tape, &p, x, &prop, &mut RngState::new(0), false)?;
    Ok(tape.value(h).clone())
}

/// Softmax rows for `nodes`, full-graph eval-mode forward.
pub fn predict_nodes(
    model: &GnnModel<f32>,
    adj: &CsrAdjacency,
    fm: &FeatureMatrix,
    nodes: &[usize],
) -> Result<Tensor<f32>> {
    check_nodes(nodes.iter().copied(), adj.num_nodes())?;
    let h = node_representations(model, adj, fm)?;
    classify_rows(model, &h.select_rows(nodes))
}

fn classify_rows(model: &GnnModel<f32>, h: &Tensor<f32>) -> Result<Tensor<f32>> {
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape);
    let h = tape.constant(h.clone());
    let logits = model.classify(&mut tape, &p, h, &mut RngState::new(0), false)?;
    Ok(softmax_rows(tape.value(logits)))
}

/// Softmax rows for `nodes` computed from sampled blocks. With fanouts at
/// least the maximum degree this equals [`predict_nodes`].
pub fn predict_nodes_sampled(
    model: &GnnModel<f32>,
    adj: &CsrAdjacency,
    fm: &FeatureMatrix,
    nodes: &[usize],
    fanouts: &[usize],
    rng: &mut RngState,
) -> Result<Tensor<f32>> {
    check_features(model, fm, adj.num_nodes())?;
    check_nodes(nodes.iter().copied(), adj.num_nodes())?;
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape);
    let (h, seeds) = encode_sampled(model, &mut tape, &p, adj, &fm.x, nodes, fanouts, rng, false)?;
    let rows: Vec<usize> = nodes.iter().map(|v| seeds[v]).collect();
    let h = tape.gather_rows(h, &rows)?;
    let logits = model.classify(&mut tape, &p, h, &mut RngState::new(0), false)?;
    Ok(softmax_rows(tape.value(logits)))
}

/// Pair logits for `(u, v)` pairs, full-graph eval-mode forward.
pub fn predict_pairs(
    model: &GnnModel<f32>,
    adj: &CsrAdjacency,
    fm: &FeatureMatrix,
    pairs: &[(usize, usize)],
) -> Result<Vec<f64>> {
    check_nodes(pairs.iter().flat_map(|&(u, v)| [u, v]), adj.num_nodes())?;
    let h = node_representations(model, adj, fm)?;
    score_rows(model, &h, pairs)
}

fn score_rows(model: &GnnModel<f32>, h: &Tensor<f32>, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    const CHUNK: usize = 8192;
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(CHUNK) {
        let mut tape = Tape::new();
        let p = model.params.bind(&mut tape);
        let (src, dst): (Vec<usize>, Vec<usize>) = chunk.iter().copied().unzip();
        let hs = tape.constant(h.select_rows(&src));
        let hd = tape.constant(h.select_rows(&dst));
        let logits = model.score(&mut tape, &p, hs, hd, &mut RngState::new(0), false)?;
        out.extend(tape.value(logits).data().iter().map(|&v| v as f64));
    }
    Ok(out)
}

/// Samples blocks around `seeds` and encodes them; returns the seed rows
/// and a map from node id to row.
#[allow(clippy::too_many_arguments)]
fn encode_sampled(
    model: &GnnModel<f32>,
    tape: &mut Tape<f32>,
    p: &[Var],
    adj: &CsrAdjacency,
    x: &Tensor<f32>,
    seeds: &[usize],
    fanouts: &[usize],
    rng: &mut RngState,
    training: bool,
) -> Result<(Var, HashMap<usize, usize>)> {
    let fanouts: Vec<usize> = if fanouts.len() == model.layers.len() {
        fanouts.to_vec()
    } else if model.shape.arch == crate::gnn::Arch::Mlp {
        vec![1; model.layers.len()]
    } else {
        return Err(Error::Config(format!(
            "{} fanouts for {} layers",
            fanouts.len(),
            model.layers.len()
        )));
    };
    let sub = sample_neighbors(adj, seeds, &fanouts, rng)?;
    let ops: Vec<BlockOps<f32>> = sub
        .blocks
        .iter()
        .map(|b| BlockOps::new(b, adj))
        .collect::<Result<_>>()?;
    let x_in = tape.constant(x.select_rows(sub.input_nodes()));
    let h = model.encode_blocks(tape, p, x_in, &ops, rng, training)?;
    let rows = sub.seeds().iter().enumerate().map(|(i, &v)| (v, i)).collect();
    Ok((h, rows))
}

/// Accuracy on train/valid/test nodes, or MRR on train/valid/test edges
/// for link models (train edges are ranked against `num_eval_negatives`
/// sampled non-neighbors drawn from a fixed stream).
pub fn evaluate_gnn(model: &GnnModel<f32>, graph: &TextualGraph, fm: &FeatureMatrix) -> Result<[f64; 3]> {
    let adj = task_adjacency(graph, model.shape.task)?;
    let h = node_representations(model, adj, fm)?;
    match model.shape.task {
        Task::NodeCls => {
            let y = labels(graph)?;
            let s = &graph.splits;
            let acc = |nodes: &[usize]| -> Result<f64> {
                let pred = argmax_rows(&classify_rows(model, &h.select_rows(nodes))?);
                let truth: Vec<usize> = nodes.iter().map(|&v| y[v]).collect();
                accuracy(&pred, &truth)
            };
            Ok([acc(&s.train)?, acc(&s.valid)?, acc(&s.test)?])
        }
        Task::Link => {
            let splits = edge_splits(graph)?;
            let (valid, test) = link_eval(model, &h, splits)?;
            Ok([train_edge_mrr(model, &h, splits)?, valid.mrr, test.mrr])
        }
    }
}

/// Valid and test link metrics against the fixed negative tables.
pub fn link_eval(model: &GnnModel<f32>, h: &Tensor<f32>, splits: &EdgeSplits) -> Result<(LinkScores, LinkScores)> {
    let score = |pairs: &[(usize, usize)]| score_rows(model, h, pairs);
    Ok((
        link_scores(splits, SplitKind::Valid, score)?,
        link_scores(splits, SplitKind::Test, score)?,
    ))
}

fn train_edge_mrr(model: &GnnModel<f32>, h: &Tensor<f32>, splits: &EdgeSplits) -> Result<f64> {
    crate::eval::train_edge_mrr(splits, |pairs| score_rows(model, h, pairs))
}

/// Trains a fresh model on `fm` and keeps the best-validation weights.
pub fn train_gnn(
    graph: &TextualGraph,
    fm: &FeatureMatrix,
    cfg: &GnnConfig,
    task: Task,
    rng: &mut RngState,
) -> Result<(GnnModel<f32>, GnnOutcome)> {
    cfg.check_trainable()?;
    let n = graph.num_nodes();
    let num_classes = match task {
        Task::NodeCls => {
            let y = labels(graph)?;
            if let Some(&v) = graph.splits.train.iter().find(|&&v| v >= y.len()) {
                return Err(Error::Data(format!("train node {v} has no label")));
            }
            graph.num_classes
        }
        Task::Link => {
            if edge_splits(graph)?.train.is_empty() {
                return Err(Error::Data("no train edges".into()));
            }
            0
        }
    };
    let shape = GnnShape {
        arch: cfg.arch,
        task,
        in_dim: fm.dim(),
        hidden_dim: cfg.hidden_dim,
        num_layers: cfg.num_layers,
        num_classes,
        pair_hidden: cfg.pair_hidden,
        dropout: cfg.dropout,
    };
    let mut model = GnnModel::new(shape, &mut rng.substream("init"))?;
    model.feature_provenance = fm.provenance;
    model.feature_hash = fm.config_hash;
    check_features(&model, fm, n)?;
    let outcome = match task {
        Task::NodeCls => train_cls(&mut model, graph, fm, cfg, rng)?,
        Task::Link => train_link(&mut model, graph, fm, cfg, rng)?,
    };
    Ok((model, outcome))
}

struct Selection {
    best: Vec<Tensor<f32>>,
    best_epoch: usize,
    best_valid: f64,
}

impl Selection {
    fn new(model: &GnnModel<f32>, valid: f64) -> Self {
        Self {
            best: model.params.snapshot(),
            best_epoch: 0,
            best_valid: valid,
        }
    }

    fn offer(&mut self, model: &GnnModel<f32>, epoch: usize, valid: f64) {
        if valid > self.best_valid {
            self.best = model.params.snapshot();
            self.best_epoch = epoch;
            self.best_valid = valid;
        }
    }

    fn finish(
        self,
        model: &mut GnnModel<f32>,
        reports: Vec<EpochReport>,
        edge_access: BTreeSet<Edge>,
    ) -> Result<GnnOutcome> {
        model.params.restore(&self.best)?;
        Ok(GnnOutcome {
            epochs_to_95: epochs_to_fraction(&reports, 0.95),
            reports,
            best_epoch: self.best_epoch,
            best_valid: self.best_valid,
            edge_access,
        })
    }
}

fn finite(loss: f64, epoch: usize) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Numeric(format!("gnn loss {loss} at epoch {epoch}")))
    }
}

fn train_cls(
    model: &mut GnnModel<f32>,
    graph: &TextualGraph,
    fm: &FeatureMatrix,
    cfg: &GnnConfig,
    rng: &mut RngState,
) -> Result<GnnOutcome> {
    let y = labels(graph)?;
    let prop = Propagation::new(&graph.adj);
    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay)?;
    let mut sel = Selection::new(model, evaluate_gnn(model, graph, fm)?[1]);
    let mut reports = Vec::with_capacity(cfg.epochs);
    let train = &graph.splits.train;
    for epoch in 1..=cfg.epochs {
        let (mut loss_sum, mut steps) = (0.0, 0usize);
        let batches: Vec<Vec<usize>> = if cfg.full_batch {
            vec![train.clone()]
        } else {
            let mut order = train.clone();
            rng.shuffle(&mut order);
            order.chunks(cfg.batch_size).map(<[usize]>::to_vec).collect()
        };
        for seeds in batches {
            model.params.zero_grad();
            let mut tape = Tape::new();
            let p = model.params.bind(&mut tape);
            let h = if cfg.full_batch {
                let x = tape.constant(fm.x.clone());
                let h = model.encode_full(&mut tape, &p, x, &prop, rng, true)?;
                tape.gather_rows(h, &seeds)?
            } else {
                let (h, rows) =
                    encode_sampled(model, &mut tape, &p, &graph.adj, &fm.x, &seeds, &cfg.fanouts, rng, true)?;
                let idx: Vec<usize> = seeds.iter().map(|v| rows[v]).collect();
                tape.gather_rows(h, &idx)?
            };
            let logits = model.classify(&mut tape, &p, h, rng, true)?;
            let targets: Vec<usize> = seeds.iter().map(|&v| y[v]).collect();
            let loss = tape.cross_entropy_smoothed(logits, &targets, cfg.label_smoothing)?;
            loss_sum += finite(tape.value(loss).item()? as f64, epoch)?;
            steps += 1;
            tape.backward(loss)?;
            model.params.accumulate_from(&tape, &p);
            opt.step(&mut model.params)?;
        }
        let [train_acc, valid_acc, _] = evaluate_gnn(model, graph, fm)?;
        reports.push(EpochReport {
            epoch,
            train_loss: loss_sum / steps.max(1) as f64,
            train_metric: train_acc,
            valid_metric: valid_acc,
        });
        sel.offer(model, epoch, valid_acc);
    }
    sel.finish(model, reports, BTreeSet::new())
}

fn train_link(
    model: &mut GnnModel<f32>,
    graph: &TextualGraph,
    fm: &FeatureMatrix,
    cfg: &GnnConfig,
    rng: &mut RngState,
) -> Result<GnnOutcome> {
    let splits = edge_splits(graph)?;
    let adj = &splits.message_graph;
    let prop = Propagation::new(adj);
    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay)?;
    let valid_mrr = |m: &GnnModel<f32>| -> Result<f64> {
        let h = node_representations(m, adj, fm)?;
        Ok(link_scores(splits, SplitKind::Valid, |pairs| score_rows(m, &h, pairs))?.mrr)
    };
    let mut sel = Selection::new(model, valid_mrr(model)?);
    let mut reports = Vec::with_capacity(cfg.epochs);
    let mut access = BTreeSet::new();
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..splits.train.len()).collect();
        rng.shuffle(&mut order);
        let (mut loss_sum, mut steps) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let mut src = Vec::with_capacity(2 * chunk.len());
            let mut dst = Vec::with_capacity(2 * chunk.len());
            let mut targets = Vec::with_capacity(2 * chunk.len());
            for &i in chunk {
                let (u, v) = splits.train[i];
                access.insert((u, v));
                src.push(u);
                dst.push(v);
                targets.push(1.0f32);
            }
            for &i in chunk {
                let u = splits.train[i].0;
                src.push(u);
                dst.push(sample_non_neighbor(adj, u, rng)?);
                targets.push(0.0);
            }
            model.params.zero_grad();
            let mut tape = Tape::new();
            let p = model.params.bind(&mut tape);
            let (h, rows) = if cfg.full_batch {
                let x = tape.constant(fm.x.clone());
                (model.encode_full(&mut tape, &p, x, &prop, rng, true)?, None)
            } else {
                let mut seeds: Vec<usize> = src.iter().chain(&dst).copied().collect();
                seeds.sort_unstable();
                seeds.dedup();
                let (h, rows) = encode_sampled(model, &mut tape, &p, adj, &fm.x, &seeds, &cfg.fanouts, rng, true)?;
                (h, Some(rows))
            };
            let row = |v: &usize| rows.as_ref().map_or(*v, |r| r[v]);
            let si: Vec<usize> = src.iter().map(row).collect();
            let di: Vec<usize> = dst.iter().map(row).collect();
            let hs = tape.gather_rows(h, &si)?;
            let hd = tape.gather_rows(h, &di)?;
            let logits = model.score(&mut tape, &p, hs, hd, rng, true)?;
            let loss = tape.bce_with_logits(logits, &targets)?;
            loss_sum += finite(tape.value(loss).item()? as f64, epoch)?;
            steps += 1;
            tape.backward(loss)?;
            model.params.accumulate_from(&tape, &p);
            opt.step(&mut model.params)?;
        }
        let valid = valid_mrr(model)?;
        let h = node_representations(model, adj, fm)?;
        reports.push(EpochReport {
            epoch,
            train_loss: loss_sum / steps.max(1) as f64,
            train_metric: train_edge_mrr(model, &h, splits)?,
            valid_metric: valid,
        });
        sel.offer(model, epoch, valid);
    }
    sel.finish(model, reports, access)
}
