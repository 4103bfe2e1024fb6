//! Differentiable operations recorded on a [`Tape`].

use std::sync::Arc;

use rayon::prelude::*;

use crate::autodiff::tape::{add_into, AttentionSaved, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{Scalar, SparseMatrix, Tensor};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub(crate) fn gelu<S: Scalar>(x: S) -> S {
    let u = S::lit(GELU_C) * (x + S::lit(GELU_A) * x * x * x);
    S::lit(0.5) * x * (S::ONE + u.tanh())
}

#[inline]
pub(crate) fn gelu_grad<S: Scalar>(x: S) -> S {
    let u = S::lit(GELU_C) * (x + S::lit(GELU_A) * x * x * x);
    let t = u.tanh();
    let du = S::lit(GELU_C) * (S::ONE + S::lit(3.0 * GELU_A) * x * x);
    S::lit(0.5) * (S::ONE + t) + S::lit(0.5) * x * (S::ONE - t * t) * du
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::ZERO {
        S::ONE / (S::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::ONE + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
#[inline]
pub fn softplus<S: Scalar>(x: S) -> S {
    x.max(S::ZERO) + (S::ONE + (-x.abs()).exp()).ln()
}

fn same_shape<S: Scalar>(tape: &Tape<S>, a: Var, b: Var, what: &str) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::Dimension(format!(
            "{what}: {:?} vs {:?}",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    Ok(())
}

impl<S: Scalar> Tape<S> {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul { a, b }, &[a, b]))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_nt(self.value(b))?;
        Ok(self.push(out, Op::MatMulNt { a, b }, &[a, b]))
    }

    /// `x · Wᵀ + b` with `W` stored `[out × in]` and `b` as `[1 × out]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul_nt(x, weight)?;
        match bias {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "add")?;
        let mut out = self.value(a).clone();
        add_into(out.data_mut(), self.value(b).data());
        Ok(self.push(out, Op::Add { a, b }, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "sub")?;
        let mut out = self.value(a).clone();
        for (o, &x) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o -= x;
        }
        Ok(self.push(out, Op::Sub { a, b }, &[a, b]))
    }

    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, cols) = self.shape(a);
        if self.shape(row) != (1, cols) {
            return Err(Error::Dimension(format!(
                "add_row: row {:?} for {} columns",
                self.shape(row),
                cols
            )));
        }
        let mut out = self.value(a).clone();
        let rv = self.value(row).data().to_vec();
        if cols > 0 {
            for chunk in out.data_mut().chunks_mut(cols) {
                add_into(chunk, &rv);
            }
        }
        Ok(self.push(out, Op::AddRow { a, row }, &[a, row]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, a, b, "mul")?;
        let mut out = self.value(a).clone();
        for (o, &x) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= x;
        }
        Ok(self.push(out, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: S) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale { a, factor }, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(S::ZERO));
        self.push(out, Op::Relu { a }, &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        self.push(out, Op::Gelu { a }, &[a])
    }

    /// Inverted dropout: in training each element is zeroed with probability
    /// `rate` and survivors are scaled by `1/(1−rate)`. Eval mode is the
    /// identity and records nothing.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut RngState, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Parameter(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep = S::lit(1.0 / (1.0 - rate));
        let n = self.value(x).len();
        let mask: Vec<S> = (0..n)
            .map(|_| if rng.bernoulli(rate) { S::ZERO } else { keep })
            .collect();
        let mut out = self.value(x).clone();
        for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        Ok(self.push(out, Op::MaskMul { a: x, mask }, &[x]))
    }

    /// Per-row normalization to zero mean and unit (biased) variance followed
    /// by an affine map. A row whose variance plus `eps` is zero maps to
    /// `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (n, d) = self.shape(x);
        if d == 0 {
            return Err(Error::Dimension("layer_norm over zero features".into()));
        }
        if eps < 0.0 {
            return Err(Error::Parameter(format!("layer_norm eps {eps} < 0")));
        }
        if self.shape(gain) != (1, d) || self.shape(bias) != (1, d) {
            return Err(Error::Dimension(format!(
                "layer_norm gain/bias must be 1x{d}, got {:?}/{:?}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let xv = self.value(x);
        let gv = self.value(gain).data();
        let bv = self.value(bias).data();
        let mut xhat = vec![S::ZERO; n * d];
        let mut inv_std = vec![S::ZERO; n];
        let mut out = Tensor::zeros(n, d);
        let dd = S::lit(d as f64);
        for r in 0..n {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<S>() / dd;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / dd;
            let denom = var + S::lit(eps);
            let inv = if denom > S::ZERO {
                S::ONE / denom.sqrt()
            } else {
                S::ZERO
            };
            inv_std[r] = inv;
            let o = out.row_mut(r);
            for c in 0..d {
                let h = (row[c] - mean) * inv;
                xhat[r * d + c] = h;
                o[c] = h * gv[c] + bv[c];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    /// Rows of `table` picked by `ids` (embedding lookup, row selection).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (n, _) = self.shape(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
            return Err(Error::Index(format!("row {bad} of a {n}-row table")));
        }
        let out = self.value(table).select_rows(ids);
        Ok(self.push(
            out,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.shape(p).0)
            .ok_or_else(|| Error::Dimension("concat of nothing".into()))?;
        if parts.iter().any(|&p| self.shape(p).0 != rows) {
            return Err(Error::Dimension("concat_cols row mismatch".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatCols { parts: parts.to_vec() }, parts))
    }

    /// Multi-head scaled dot-product attention over `batch` sequences of
    /// `len` positions. `q`, `k`, `v` are `[(batch·len) × d]`; keys whose
    /// `key_mask` entry is false receive exactly zero weight.
    #[allow(clippy::too_many_arguments)]
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        key_mask: &[bool],
        batch: usize,
        len: usize,
        heads: usize,
    ) -> Result<Var> {
        let (rows, d) = self.shape(q);
        if self.shape(k) != (rows, d) || self.shape(v) != (rows, d) {
            return Err(Error::Dimension("attention q/k/v shapes differ".into()));
        }
        if rows != batch * len || key_mask.len() != rows {
            return Err(Error::Dimension(format!(
                "attention over {rows} rows with batch {batch} × len {len}"
            )));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Dimension(format!("{d} features over {heads} heads")));
        }
        let dh = d / heads;
        let scale = S::lit(1.0 / (dh as f64).sqrt());
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut out = Tensor::zeros(rows, d);
        let mut probs = vec![S::ZERO; batch * heads * len * len];
        if rows > 0 && d > 0 {
            out.data_mut()
                .par_chunks_mut(len * d)
                .zip(probs.par_chunks_mut(heads * len * len))
                .enumerate()
                .for_each(|(b, (o, p))| {
                    let base = b * len * d;
                    let mask = &key_mask[b * len..(b + 1) * len];
                    for h in 0..heads {
                        let off = h * dh;
                        let ph = &mut p[h * len * len..(h + 1) * len * len];
                        for i in 0..len {
                            let qi = &qv[base + i * d + off..base + i * d + off + dh];
                            let row = &mut ph[i * len..(i + 1) * len];
                            let mut mx: Option<S> = None;
                            for j in 0..len {
                                if mask[j] {
                                    let kj = &kv[base + j * d + off..base + j * d + off + dh];
                                    let s = dot(qi, kj) * scale;
                                    row[j] = s;
                                    mx = Some(mx.map_or(s, |m: S| m.max(s)));
                                }
                            }
                            let Some(mx) = mx else { continue };
                            let mut total = S::ZERO;
                            for j in 0..len {
                                if mask[j] {
                                    let e = (row[j] - mx).exp();
                                    row[j] = e;
                                    total += e;
                                } else {
                                    row[j] = S::ZERO;
                                }
                            }
                            let oi = &mut o[i * d + off..i * d + off + dh];
                            for j in 0..len {
                                if mask[j] {
                                    row[j] = row[j] / total;
                                    let w = row[j];
                                    let vj = &vv[base + j * d + off..base + j * d + off + dh];
                                    for (x, &y) in oi.iter_mut().zip(vj) {
                                        *x += w * y;
                                    }
                                }
                            }
                        }
                    }
                });
        }
        Ok(self.push(
            out,
            Op::Attention(Box::new(AttentionSaved {
                q,
                k,
                v,
                probs,
                key_mask: key_mask.to_vec(),
                len,
                heads,
            })),
            &[q, k, v],
        ))
    }

    /// Mean over the rows of each sequence where `mask` is set. Input is
    /// `[(batch·len) × d]`, output `[batch × d]`.
    pub fn mean_pool(&mut self, x: Var, mask: &[bool], batch: usize, len: usize) -> Result<Var> {
        let (rows, d) = self.shape(x);
        if rows != batch * len || mask.len() != rows {
            return Err(Error::Dimension(format!(
                "mean_pool over {rows} rows with batch {batch} × len {len}"
            )));
        }
        let mut counts = vec![0usize; batch];
        let mut out = Tensor::zeros(batch, d);
        let xv = self.value(x);
        for b in 0..batch {
            let o = out.row_mut(b);
            for t in 0..len {
                if mask[b * len + t] {
                    counts[b] += 1;
                    add_into(o, xv.row(b * len + t));
                }
            }
            if counts[b] == 0 {
                return Err(Error::Pooling(format!("row {b} has no valid tokens")));
            }
            let inv = S::ONE / S::lit(counts[b] as f64);
            for v in o.iter_mut() {
                *v *= inv;
            }
        }
        Ok(self.push(
            out,
            Op::MeanPool {
                x,
                mask: mask.to_vec(),
                batch,
                len,
                counts,
            },
            &[x],
        ))
    }

    /// Sparse-dense product with a constant sparse operator.
    pub fn spmm(&mut self, matrix: Arc<SparseMatrix<S>>, x: Var) -> Result<Var> {
        let out = matrix.spmm(self.value(x))?;
        Ok(self.push(out, Op::SpMM { matrix, x }, &[x]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { a }, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().copied().sum::<S>() / S::lit(t.len().max(1) as f64);
        self.push(Tensor::scalar(s), Op::Mean { a }, &[a])
    }

    /// Mean over rows of `−Σ_c q_c log softmax(logits)_c` with the smoothed
    /// target `q = (1−ε)·onehot + ε/K`.
    pub fn cross_entropy_smoothed(&mut self, logits: Var, labels: &[usize], epsilon: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&epsilon) {
            return Err(Error::Parameter(format!("label smoothing {epsilon} outside [0, 1)")));
        }
        let (n, k) = self.shape(logits);
        if labels.len() != n || n == 0 {
            return Err(Error::Dimension(format!("{} labels for {n} logit rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Index(format!("label {bad} with {k} classes")));
        }
        let eps = S::lit(epsilon);
        let off = eps / S::lit(k as f64);
        let on = S::ONE - eps + off;
        let lv = self.value(logits);
        let mut probs = vec![S::ZERO; n * k];
        let mut total = S::ZERO;
        for r in 0..n {
            let row = lv.row(r);
            let mx = row.iter().copied().fold(row[0], S::max);
            let z: S = row.iter().map(|&x| (x - mx).exp()).sum();
            let lse = mx + z.ln();
            let mut expected = S::ZERO;
            for c in 0..k {
                probs[r * k + c] = (row[c] - lse).exp();
                let q = if c == labels[r] { on } else { off };
                expected += q * row[c];
            }
            total += lse - expected;
        }
        let loss = total / S::lit(n as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                eps,
                probs,
            },
            &[logits],
        ))
    }

    /// Mean binary cross-entropy on raw scores; targets must be 0 or 1.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[S]) -> Result<Var> {
        let n = self.value(logits).len();
        if targets.len() != n || n == 0 {
            return Err(Error::Dimension(format!("{} targets for {n} logits", targets.len())));
        }
        if targets.iter().any(|&t| t != S::ZERO && t != S::ONE) {
            return Err(Error::Value("bce targets must be 0 or 1".into()));
        }
        let total: S = self
            .value(logits)
            .data()
            .iter()
            .zip(targets)
            .map(|(&s, &t)| softplus(s) - t * s)
            .sum();
        let loss = total / S::lit(n as f64);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
        ))
    }
}

#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut s = S::ZERO;
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn layer_norm_backward<S: Scalar>(
    tape: &Tape<S>,
    adj: &mut [Option<Tensor<S>>],
    g: &Tensor<S>,
    x: Var,
    gain: Var,
    bias: Var,
    xhat: &[S],
    inv_std: &[S],
) {
    let (n, d) = g.shape();
    if let Some(s) = tape.slot(adj, bias) {
        for r in 0..n {
            add_into(s, g.row(r));
        }
    }
    if let Some(s) = tape.slot(adj, gain) {
        for r in 0..n {
            for c in 0..d {
                s[c] += g.get(r, c) * xhat[r * d + c];
            }
        }
    }
    let gv = tape.value(gain).data().to_vec();
    if let Some(s) = tape.slot(adj, x) {
        let dd = S::lit(d as f64);
        for r in 0..n {
            let gh: Vec<S> = (0..d).map(|c| g.get(r, c) * gv[c]).collect();
            let sum_gh: S = gh.iter().copied().sum();
            let sum_ghx: S = gh.iter().zip(&xhat[r * d..(r + 1) * d]).map(|(&a, &b)| a * b).sum();
            let scale = inv_std[r] / dd;
            for c in 0..d {
                s[r * d + c] += scale * (dd * gh[c] - sum_gh - xhat[r * d + c] * sum_ghx);
            }
        }
    }
}

pub(crate) fn attention_backward<S: Scalar>(
    tape: &Tape<S>,
    adj: &mut [Option<Tensor<S>>],
    g: &Tensor<S>,
    saved: &AttentionSaved<S>,
) {
    let AttentionSaved {
        q,
        k,
        v,
        probs,
        key_mask,
        len,
        heads,
        ..
    } = saved;
    let (len, heads) = (*len, *heads);
    let (rows, d) = g.shape();
    if rows == 0 || d == 0 {
        return;
    }
    let dh = d / heads;
    let scale = S::lit(1.0 / (dh as f64).sqrt());
    let (qv, kv, vv) = (tape.value(*q).data(), tape.value(*k).data(), tape.value(*v).data());
    let mut gq = vec![S::ZERO; rows * d];
    let mut gk = vec![S::ZERO; rows * d];
    let mut gv = vec![S::ZERO; rows * d];
    gq.par_chunks_mut(len * d)
        .zip(gk.par_chunks_mut(len * d))
        .zip(gv.par_chunks_mut(len * d))
        .enumerate()
        .for_each(|(b, ((gqb, gkb), gvb))| {
            let base = b * len * d;
            let mask = &key_mask[b * len..(b + 1) * len];
            let gb = &g.data()[base..base + len * d];
            let mut gp = vec![S::ZERO; len];
            for h in 0..heads {
                let off = h * dh;
                let ph = &probs[(b * heads + h) * len * len..(b * heads + h + 1) * len * len];
                for i in 0..len {
                    let gi = &gb[i * d + off..i * d + off + dh];
                    let pi = &ph[i * len..(i + 1) * len];
                    let mut weighted = S::ZERO;
                    for j in 0..len {
                        if mask[j] {
                            let vj = &vv[base + j * d + off..base + j * d + off + dh];
                            gp[j] = dot(gi, vj);
                            weighted += pi[j] * gp[j];
                            for (o, &x) in gvb[j * d + off..j * d + off + dh].iter_mut().zip(gi) {
                                *o += pi[j] * x;
                            }
                        }
                    }
                    let qi = &qv[base + i * d + off..base + i * d + off + dh];
                    for j in 0..len {
                        if !mask[j] {
                            continue;
                        }
                        let gs = pi[j] * (gp[j] - weighted) * scale;
                        if gs == S::ZERO {
                            continue;
                        }
                        let kj = &kv[base + j * d + off..base + j * d + off + dh];
                        for (o, &x) in gqb[i * d + off..i * d + off + dh].iter_mut().zip(kj) {
                            *o += gs * x;
                        }
                        for (o, &x) in gkb[j * d + off..j * d + off + dh].iter_mut().zip(qi) {
                            *o += gs * x;
                        }
                    }
                }
            }
        });
    for (var, grad) in [(*q, gq), (*k, gk), (*v, gv)] {
        if tape.requires_grad(var) {
            tape.acc(adj, var, Tensor::new(rows, d, grad).expect("sized above"));
        }
    }
}
