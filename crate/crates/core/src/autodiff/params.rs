use crate::autodiff::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{Scalar, Tensor};

pub type ParamId = usize;

#[derive(Clone, Debug)]
pub struct Param<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
    pub frozen: bool,
}

/// Ordered parameter registry. Registry order is the checkpoint order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamId {
        let (r, c) = value.shape();
        self.params.push(Param {
            name: name.into(),
            value,
            grad: Tensor::zeros(r, c),
            frozen: false,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<S> {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<S> {
        &mut self.params[id]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<S>)> {
        self.params.iter().enumerate()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<S>> {
        self.params.iter_mut()
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.params[id].frozen = frozen;
    }

    pub fn freeze_all(&mut self) {
        for p in &mut self.params {
            p.frozen = true;
        }
    }

    pub fn unfreeze_all(&mut self) {
        for p in &mut self.params {
            p.frozen = false;
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(S::ZERO);
        }
    }

    pub fn num_trainable(&self) -> usize {
        self.params.iter().filter(|p| !p.frozen).map(|p| p.value.len()).sum()
    }

    pub fn num_total(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Loads every parameter onto `tape`; the result is indexed by id.
    pub fn bind(&self, tape: &mut Tape<S>) -> Vec<Var> {
        (0..self.params.len()).map(|id| tape.param(self, id)).collect()
    }

    /// Adds the tape gradients of vars returned by [`ParamStore::bind`]
    /// into the matching non-frozen parameters.
    pub fn accumulate_from(&mut self, tape: &Tape<S>, bound: &[Var]) {
        for (p, &v) in self.params.iter_mut().zip(bound) {
            if p.frozen {
                continue;
            }
            if let Some(g) = tape.grad(v) {
                for (a, &b) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
        }
    }

    /// Copies of every parameter value, in registry order.
    pub fn snapshot(&self) -> Vec<Tensor<S>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, values: &[Tensor<S>]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::State(format!(
                "snapshot has {} tensors, registry {}",
                values.len(),
                self.params.len()
            )));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.value.shape() != v.shape() {
                return Err(Error::Dimension(format!("snapshot shape mismatch for {}", p.name)));
            }
            p.value = v.clone();
        }
        Ok(())
    }

    /// Same registry in another precision (used to build 64-bit twins of
    /// 32-bit models for verification).
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                    frozen: p.frozen,
                })
                .collect(),
        }
    }
}

/// Linear weights: uniform in ±√(6/(fan_in+fan_out)).
pub fn xavier_uniform<S: Scalar>(rows: usize, cols: usize, rng: &mut RngState) -> Tensor<S> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_fn(rows, cols, |_, _| S::lit(rng.uniform_range(-bound, bound)))
}

pub fn normal_init<S: Scalar>(rows: usize, cols: usize, std: f64, rng: &mut RngState) -> Tensor<S> {
    Tensor::from_fn(rows, cols, |_, _| S::lit(std * rng.normal()))
}
