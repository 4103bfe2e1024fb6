use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Nonnegative member weights, normalized to sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSpec {
    weights: Vec<f64>,
}

impl EnsembleSpec {
    pub fn uniform(members: usize) -> Result<Self> {
        Self::weighted(&vec![1.0; members])
    }

    pub fn weighted(weights: &[f64]) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::Ensemble(format!("{} members; need at least 2", weights.len())));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Ensemble("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Ensemble("weights sum to zero".into()));
        }
        Ok(Self {
            weights: weights.iter().map(|w| w / total).collect(),
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Elementwise weighted mean of same-shaped prediction matrices.
pub fn ensemble(members: &[Tensor<f64>], spec: &EnsembleSpec) -> Result<Tensor<f64>> {
    if members.len() != spec.weights.len() {
        return Err(Error::Ensemble(format!(
            "{} members for {} weights",
            members.len(),
            spec.weights.len()
        )));
    }
    let shape = members[0].shape();
    if let Some(bad) = members.iter().find(|m| m.shape() != shape) {
        return Err(Error::Ensemble(format!(
            "member shape {:?} differs from {:?}",
            bad.shape(),
            shape
        )));
    }
    let mut out = Tensor::zeros(shape.0, shape.1);
    for (m, &w) in members.iter().zip(&spec.weights) {
        for (o, &v) in out.data_mut().iter_mut().zip(m.data()) {
            *o += w * v;
        }
    }
    Ok(out)
}
