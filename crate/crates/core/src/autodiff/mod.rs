//! Reverse-mode automatic differentiation over dense matrices, plus the
//! optimizer, initializers and losses used by both training stages.

mod gradcheck;
mod ops;
mod optim;
mod params;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport, GRAD_CHECK_FLOOR, GRAD_CHECK_STEP};
pub use ops::{sigmoid, softplus};
pub use optim::{adamw_update, AdamHyper, AdamW};
pub use params::{normal_init, xavier_uniform, Param, ParamId, ParamStore};
pub use tape::{Tape, Var};

use crate::tensor::{Scalar, Tensor};

/// Row-wise softmax of a plain tensor.
pub fn softmax_rows<S: Scalar>(logits: &Tensor<S>) -> Tensor<S> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        if row.is_empty() {
            continue;
        }
        let mx = row.iter().copied().fold(row[0], S::max);
        let mut total = S::ZERO;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    out
}

/// Index of the largest entry in each row (first on ties).
pub fn argmax_rows<S: Scalar>(t: &Tensor<S>) -> Vec<usize> {
    (0..t.rows())
        .map(|r| {
            let row = t.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}
