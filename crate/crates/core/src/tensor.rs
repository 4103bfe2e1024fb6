//! Dense row-major matrices and the scalar abstraction shared by the
//! 32-bit training path and the 64-bit verification path.

use std::fmt;
use std::iter::Sum;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Floating point element type. Training runs in `f32`; gradient checks
/// and oracle comparisons run in `f64`.
pub trait Scalar:
    Copy
    + Default
    + PartialOrd
    + Send
    + Sync
    + Sum
    + fmt::Debug
    + fmt::Display
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;

    fn lit(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;

    fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }

    /// `c = a · b` (or `c += a · b` when `accumulate`), with row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        c: &mut [Self],
        accumulate: bool,
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            #[inline]
            fn lit(x: f64) -> Self {
                x as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }
            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }

            fn gemm_raw(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                c: &mut [Self],
                accumulate: bool,
            ) {
                debug_assert!(c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    if !accumulate {
                        c[..m * n].fill(0.0);
                    }
                    return;
                }
                let max_a = (m as isize - 1) * rsa + (k as isize - 1) * csa;
                let max_b = (k as isize - 1) * rsb + (n as isize - 1) * csb;
                assert!((max_a as usize) < a.len() && (max_b as usize) < b.len());
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: the asserts above bound every strided read of `a` and
                // `b`; `c` is dense row-major with at least m*n elements.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Below this many multiply-adds a product runs on the calling thread.
const PARALLEL_FLOPS: usize = 1 << 18;

/// Row-major `rows × cols` matrix. Vectors are `1 × n` or `n × 1`.
#[derive(Clone, PartialEq)]
pub struct Tensor<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: fmt::Debug> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor[{}x{}]", self.rows, self.cols)?;
        if self.data.len() <= 16 {
            write!(f, "{:?}", self.data)?;
        }
        Ok(())
    }
}

impl<S: Scalar> Tensor<S> {
    pub fn new(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} elements cannot fill a {rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::ZERO; rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize, value: S) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = S::ONE;
        }
        t
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a tensor from nested rows; all rows must share a length.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn scalar(value: S) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![value],
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Single element of a `1 × 1` tensor.
    pub fn item(&self) -> Result<S> {
        if self.data.len() != 1 {
            return Err(Error::Shape(format!(
                "expected a scalar, got {}x{}",
                self.rows, self.cols
            )));
        }
        Ok(self.data[0])
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| T::lit(x.to_f64())).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Rows selected by index, in order.
    pub fn select_rows(&self, ids: &[usize]) -> Self {
        let mut data = Vec::with_capacity(ids.len() * self.cols);
        for &i in ids {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: ids.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(gemm(self, false, other, false))
    }

    /// `self · otherᵀ`
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "matmul_nt {}x{} by ({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(gemm(self, false, other, true))
    }

    /// `selfᵀ · other`
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::Dimension(format!(
                "matmul_tn ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(gemm(self, true, other, false))
    }
}

/// Dense product with optional transposition of either operand. Large
/// products split the output rows across threads; every output element is
/// computed by one thread in a fixed order, so results do not depend on the
/// thread count.
fn gemm<S: Scalar>(a: &Tensor<S>, a_t: bool, b: &Tensor<S>, b_t: bool) -> Tensor<S> {
    let (m, k) = if a_t { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let n = if b_t { b.rows } else { b.cols };
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let mut out = Tensor::zeros(m, n);
    if m == 0 || n == 0 {
        return out;
    }
    let threads = rayon::current_num_threads();
    if m * n * k < PARALLEL_FLOPS || threads == 1 || m < 2 {
        S::gemm_raw(m, k, n, &a.data, rsa, csa, &b.data, rsb, csb, &mut out.data, false);
        return out;
    }
    let rows_per = m.div_ceil(threads * 2).max(1);
    out.data
        .par_chunks_mut(rows_per * n)
        .enumerate()
        .for_each(|(chunk, c)| {
            let r0 = chunk * rows_per;
            let mc = c.len() / n;
            let offset = r0 as isize * rsa;
            S::gemm_raw(
                mc,
                k,
                n,
                &a.data[offset as usize..],
                rsa,
                csa,
                &b.data,
                rsb,
                csb,
                c,
                false,
            );
        });
    out
}

/// Compressed sparse row matrix with explicit values; `rows × cols` need
/// not be square (sampled message-passing blocks are bipartite).
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix<S> {
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<S>,
}

impl<S: Scalar> SparseMatrix<S> {
    pub fn new(rows: usize, cols: usize, row_ptr: Vec<usize>, col_idx: Vec<usize>, values: Vec<S>) -> Result<Self> {
        if row_ptr.len() != rows + 1
            || row_ptr[0] != 0
            || row_ptr.windows(2).any(|w| w[0] > w[1])
            || row_ptr[rows] != col_idx.len()
            || col_idx.len() != values.len()
            || col_idx.iter().any(|&c| c >= cols)
        {
            return Err(Error::Dimension("malformed sparse matrix".into()));
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// `(col, value)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, S)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> S {
        self.row(r).find(|&(col, _)| col == c).map_or(S::ZERO, |(_, v)| v)
    }

    pub fn to_dense(&self) -> Tensor<S> {
        let mut t = Tensor::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                t.data[r * self.cols + c] += v;
            }
        }
        t
    }

    /// `self · x` for dense `x`.
    pub fn spmm(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        if x.rows != self.cols {
            return Err(Error::Dimension(format!(
                "spmm {}x{} by {}x{}",
                self.rows, self.cols, x.rows, x.cols
            )));
        }
        let d = x.cols;
        let mut out = Tensor::zeros(self.rows, d);
        if d == 0 {
            return Ok(out);
        }
        out.data.par_chunks_mut(d).enumerate().for_each(|(r, dst)| {
            for (c, w) in self.row(r) {
                for (o, &v) in dst.iter_mut().zip(x.row(c)) {
                    *o += w * v;
                }
            }
        });
        Ok(out)
    }

    /// `selfᵀ · g`, accumulated into `out` (shape `cols × d`).
    pub fn spmm_t_into(&self, g: &Tensor<S>, out: &mut [S]) {
        let d = g.cols;
        for r in 0..self.rows {
            let grow = g.row(r);
            for (c, w) in self.row(r) {
                for (o, &v) in out[c * d..(c + 1) * d].iter_mut().zip(grow) {
                    *o += w * v;
                }
            }
        }
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for i in 0..self.cols {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![S::ZERO; self.nnz()];
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                let slot = next[c];
                col_idx[slot] = r;
                values[slot] = v;
                next[c] += 1;
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            row_ptr,
            col_idx,
            values,
        }
    }
}
