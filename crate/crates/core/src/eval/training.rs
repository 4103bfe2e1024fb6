use crate::error::{Error, Result};
use crate::eval::{hits_at_k, mrr, roc_auc};
use crate::graph::{sample_non_neighbor, Edge, EdgeSplits, SplitKind};
use crate::rng::RngState;

#[derive(Clone, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_metric: f64,
    pub valid_metric: f64,
}

/// First 1-based epoch whose validation metric reaches `fraction` of the
/// last epoch's; 0 for an empty history.
pub fn epochs_to_fraction(reports: &[EpochReport], fraction: f64) -> usize {
    let Some(last) = reports.last() else { return 0 };
    let target = fraction * last.valid_metric;
    reports
        .iter()
        .find(|r| r.valid_metric >= target)
        .map_or(last.epoch, |r| r.epoch)
}

/// Link metrics of held-out positives against their fixed negatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkScores {
    pub mrr: f64,
    pub hits_at_10: f64,
    pub auc: f64,
}

/// Scores the positives of `which` and their negative tables with
/// `score`, which maps `(u, v)` pairs to logits.
pub fn link_scores(
    splits: &EdgeSplits,
    which: SplitKind,
    score: impl Fn(&[(usize, usize)]) -> Result<Vec<f64>>,
) -> Result<LinkScores> {
    let (pos, negs) = match which {
        SplitKind::Valid => (&splits.valid, &splits.valid_negatives),
        SplitKind::Test => (&splits.test, &splits.test_negatives),
        SplitKind::Train => return Err(Error::Protocol("train edges carry no fixed negatives".into())),
    };
    let pos_scores = score(pos)?;
    let neg_pairs: Vec<(usize, usize)> = pos
        .iter()
        .zip(negs)
        .flat_map(|(&(u, _), ws)| ws.iter().map(move |&w| (u, w)))
        .collect();
    let flat = score(&neg_pairs)?;
    let mut neg_scores = Vec::with_capacity(pos.len());
    let mut offset = 0;
    for ws in negs {
        neg_scores.push(flat[offset..offset + ws.len()].to_vec());
        offset += ws.len();
    }
    let k = 10.min(negs.first().map_or(1, |n| n.len() + 1));
    Ok(LinkScores {
        mrr: mrr(&pos_scores, &neg_scores)?,
        hits_at_10: hits_at_k(&pos_scores, &neg_scores, k)?,
        auc: roc_auc(&pos_scores, &flat)?,
    })
}

/// MRR of (at most 1000, evenly strided) train edges, each ranked against
/// `num_eval_negatives` non-neighbors from a fixed stream.
pub fn train_edge_mrr(splits: &EdgeSplits, score: impl Fn(&[(usize, usize)]) -> Result<Vec<f64>>) -> Result<f64> {
    const MAX_EDGES: usize = 1000;
    let k = splits.num_eval_negatives().max(1);
    let mut rng = RngState::new(0).substream("train-edge-eval");
    let step = splits.train.len().div_ceil(MAX_EDGES).max(1);
    let edges: Vec<Edge> = splits.train.iter().step_by(step).copied().collect();
    let mut pairs = Vec::with_capacity(edges.len() * (k + 1));
    for &(u, v) in &edges {
        pairs.push((u, v));
        for _ in 0..k {
            pairs.push((u, sample_non_neighbor(&splits.message_graph, u, &mut rng)?));
        }
    }
    let scores = score(&pairs)?;
    let (pos, negs): (Vec<f64>, Vec<Vec<f64>>) = scores.chunks(k + 1).map(|c| (c[0], c[1..].to_vec())).unzip();
    mrr(&pos, &negs)
}
