//! Finite-difference verification of analytic gradients (64-bit only).

use crate::autodiff::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Central-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Elementwise errors are measured relative to `max(|analytic|, |numeric|,
/// floor)`, so entries whose true gradient is tiny are judged on absolute
/// error instead of amplifying difference noise.
pub const GRAD_CHECK_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input index, element index)` of the worst element.
    pub worst: (usize, usize),
    pub checked: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// Compares the tape gradient of scalar `f` at `point` with central
/// differences. `f` is re-run on a fresh tape for every perturbation.
pub fn grad_check<F>(f: F, point: &[Tensor<f64>], tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).item()?;
        if !v.is_finite() {
            return Err(Error::Check(format!("non-finite function value {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).item()?.is_finite() {
        return Err(Error::Check("non-finite function value".into()));
    }
    tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(point)
        .map(|(&v, p)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols()))
        })
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        checked: 0,
        tolerance,
    };
    let mut probe: Vec<Tensor<f64>> = point.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        for j in 0..grad.len() {
            let orig = probe[i].data()[j];
            probe[i].data_mut()[j] = orig + GRAD_CHECK_STEP;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = orig - GRAD_CHECK_STEP;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
            let a = grad.data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            if !rel.is_finite() {
                return Err(Error::Check(format!("non-finite gradient at input {i}[{j}]")));
            }
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (i, j);
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
