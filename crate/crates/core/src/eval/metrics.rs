use crate::error::{Error, Result};

pub fn accuracy(pred: &[usize], labels: &[usize]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Metric("accuracy of an empty set".into()));
    }
    if pred.len() != labels.len() {
        return Err(Error::Metric(format!(
            "{} predictions for {} labels",
            pred.len(),
            labels.len()
        )));
    }
    let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// `1 + #{neg > pos} + #{neg = pos}/2`.
pub fn rank(pos: f64, negs: &[f64]) -> Result<f64> {
    if negs.is_empty() {
        return Err(Error::Metric("ranking needs at least one negative".into()));
    }
    if pos.is_nan() || negs.iter().any(|n| n.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    let above = negs.iter().filter(|&&n| n > pos).count() as f64;
    let tied = negs.iter().filter(|&&n| n == pos).count() as f64;
    Ok(1.0 + above + tied / 2.0)
}

fn ranks(pos: &[f64], negs: &[Vec<f64>]) -> Result<Vec<f64>> {
    if pos.is_empty() {
        return Err(Error::Metric("no positives to rank".into()));
    }
    if pos.len() != negs.len() {
        return Err(Error::Metric(format!(
            "{} positives, {} negative lists",
            pos.len(),
            negs.len()
        )));
    }
    pos.iter().zip(negs).map(|(&p, n)| rank(p, n)).collect()
}

/// Mean reciprocal rank of each positive against its own negatives.
pub fn mrr(pos: &[f64], negs: &[Vec<f64>]) -> Result<f64> {
    let r = ranks(pos, negs)?;
    Ok(r.iter().map(|x| 1.0 / x).sum::<f64>() / r.len() as f64)
}

pub fn hits_at_k(pos: &[f64], negs: &[Vec<f64>], k: usize) -> Result<f64> {
    let r = ranks(pos, negs)?;
    if let Some(n) = negs.iter().find(|n| k == 0 || k > n.len() + 1) {
        return Err(Error::Parameter(format!("k = {k} outside [1, {}]", n.len() + 1)));
    }
    Ok(r.iter().filter(|&&x| x <= k as f64).count() as f64 / r.len() as f64)
}

/// Probability a random positive outscores a random negative, ties
/// counting one half.
pub fn roc_auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Metric("ROC area needs both classes".into()));
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    if all.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::Metric("NaN score".into()));
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        rank_sum += avg * all[i..j].iter().filter(|x| x.1).count() as f64;
        i = j;
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Mean and sample standard deviation (the latter only for two or more
/// values).
pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() >= 2).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, std)
}
