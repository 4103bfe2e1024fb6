use crate::graph::CsrAdjacency;
use crate::tensor::{Scalar, SparseMatrix};

/// Symmetrically normalized adjacency with self loops:
/// `C = D̂^{-1/2} (A + I) D̂^{-1/2}`, `d̂_i = deg(i) + 1`.
#[derive(Clone, Debug)]
pub struct NormalizedAdjacency<S> {
    pub matrix: SparseMatrix<S>,
}

pub fn gcn_normalize<S: Scalar>(adj: &CsrAdjacency) -> NormalizedAdjacency<S> {
    let n = adj.num_nodes();
    let deg: Vec<f64> = (0..n).map(|v| (adj.degree(v) + 1) as f64).collect();
    let weight = |u: usize, v: usize| S::lit(1.0 / (deg[u] * deg[v]).sqrt());
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(adj.num_edges() + n);
    let mut values = Vec::with_capacity(adj.num_edges() + n);
    row_ptr.push(0);
    for u in 0..n {
        let mut inserted = false;
        for &v in adj.neighbors(u) {
            if !inserted && v > u {
                col_idx.push(u);
                values.push(weight(u, u));
                inserted = true;
            }
            col_idx.push(v);
            values.push(weight(u, v));
        }
        if !inserted {
            col_idx.push(u);
            values.push(weight(u, u));
        }
        row_ptr.push(col_idx.len());
    }
    NormalizedAdjacency {
        matrix: SparseMatrix {
            rows: n,
            cols: n,
            row_ptr,
            col_idx,
            values,
        },
    }
}

/// Row-normalized adjacency without self loops (`1/deg(v)` per neighbor);
/// isolated nodes get an empty row, i.e. a zero neighbor mean.
pub fn mean_aggregation<S: Scalar>(adj: &CsrAdjacency) -> SparseMatrix<S> {
    let n = adj.num_nodes();
    let values = (0..n)
        .flat_map(|u| {
            let d = adj.degree(u);
            std::iter::repeat_n(S::lit(1.0 / d.max(1) as f64), d)
        })
        .collect();
    SparseMatrix {
        rows: n,
        cols: n,
        row_ptr: adj.row_ptr().to_vec(),
        col_idx: adj.col_idx().to_vec(),
        values,
    }
}
