use crate::autodiff::params::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// AdamW hyperparameters and moment state for one parameter registry.
#[derive(Clone, Debug)]
pub struct AdamW<S> {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    first_moment: Vec<Vec<S>>,
    second_moment: Vec<Vec<S>>,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Result<Self> {
        Self::with_betas(learning_rate, weight_decay, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(learning_rate: f64, weight_decay: f64, beta1: f64, beta2: f64, epsilon: f64) -> Result<Self> {
        if !(learning_rate >= 0.0) || !learning_rate.is_finite() {
            return Err(Error::Parameter(format!("learning rate {learning_rate}")));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::Parameter(format!("betas ({beta1}, {beta2}) outside [0, 1)")));
        }
        if weight_decay < 0.0 || epsilon <= 0.0 {
            return Err(Error::Parameter("negative weight decay or non-positive epsilon".into()));
        }
        Ok(Self {
            learning_rate,
            weight_decay,
            beta1,
            beta2,
            epsilon,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update of every non-frozen parameter from its accumulated grad.
    /// Gradients are left in place; callers zero them.
    pub fn step(&mut self, store: &mut ParamStore<S>) -> Result<()> {
        if self.first_moment.len() < store.len() {
            for (id, p) in store.iter().skip(self.first_moment.len()) {
                debug_assert_eq!(id, self.first_moment.len());
                self.first_moment.push(vec![S::ZERO; p.value.len()]);
                self.second_moment.push(vec![S::ZERO; p.value.len()]);
            }
        }
        self.step_count += 1;
        let hp = AdamHyper {
            lr: self.learning_rate,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        };
        for (id, p) in store.iter_mut().enumerate() {
            if p.frozen {
                continue;
            }
            let (m, v) = (&mut self.first_moment[id], &mut self.second_moment[id]);
            if m.len() != p.value.len() {
                return Err(Error::Dimension(format!("optimizer state shape for {}", p.name)));
            }
            adamw_update(p.value.data_mut(), p.grad.data(), m, v, self.step_count, &hp)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// Single AdamW update at 1-based `step`. Weight decay scales the parameter
/// directly and never enters the moment estimates.
pub fn adamw_update<S: Scalar>(
    param: &mut [S],
    grad: &[S],
    m: &mut [S],
    v: &mut [S],
    step: u64,
    hp: &AdamHyper,
) -> Result<()> {
    if param.len() != grad.len() || param.len() != m.len() || param.len() != v.len() {
        return Err(Error::Dimension(format!(
            "adamw: param {} grad {} moments {}/{}",
            param.len(),
            grad.len(),
            m.len(),
            v.len()
        )));
    }
    let b1 = S::lit(hp.beta1);
    let b2 = S::lit(hp.beta2);
    let c1 = S::lit(1.0 - hp.beta1.powi(step as i32));
    let c2 = S::lit(1.0 - hp.beta2.powi(step as i32));
    let lr = S::lit(hp.lr);
    let decay = S::ONE - lr * S::lit(hp.weight_decay);
    let eps = S::lit(hp.epsilon);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (S::ONE - b1) * g;
        v[i] = b2 * v[i] + (S::ONE - b2) * g * g;
        let mhat = m[i] / c1;
        let vhat = v[i] / c2;
        param[i] = param[i] * decay - lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}
