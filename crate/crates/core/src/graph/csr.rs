use crate::error::{Error, Result};

/// Undirected simple graph in CSR form; each edge is stored in both rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsrAdjacency {
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    num_nodes: usize,
}

impl CsrAdjacency {
    /// Builds from raw CSR arrays, checking every structural invariant.
    pub fn from_parts(num_nodes: usize, row_ptr: Vec<usize>, col_idx: Vec<usize>) -> Result<Self> {
        let adj = Self {
            row_ptr,
            col_idx,
            num_nodes,
        };
        adj.validate()?;
        Ok(adj)
    }

    pub fn empty(num_nodes: usize) -> Self {
        Self {
            row_ptr: vec![0; num_nodes + 1],
            col_idx: Vec::new(),
            num_nodes,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Directed entry count (twice the undirected edge count).
    pub fn num_edges(&self) -> usize {
        self.col_idx.len()
    }

    pub fn num_undirected_edges(&self) -> usize {
        self.col_idx.len() / 2
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[v]..self.row_ptr[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.row_ptr[v + 1] - self.row_ptr[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.num_nodes && self.neighbors(u).binary_search(&v).is_ok()
    }

    pub fn mean_degree(&self) -> f64 {
        if self.num_nodes == 0 {
            0.0
        } else {
            self.num_edges() as f64 / self.num_nodes as f64
        }
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.num_undirected_edges());
        for u in 0..self.num_nodes {
            for &v in self.neighbors(u) {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.num_nodes).all(|u| self.neighbors(u).iter().all(|&v| self.has_edge(v, u)))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes;
        if self.row_ptr.len() != n + 1 || self.row_ptr[0] != 0 {
            return Err(Error::Dimension(
                "row_ptr must have num_nodes+1 entries starting at 0".into(),
            ));
        }
        if self.row_ptr.windows(2).any(|w| w[0] > w[1]) || self.row_ptr[n] != self.col_idx.len() {
            return Err(Error::Dimension(
                "row_ptr not monotone or does not end at num_edges".into(),
            ));
        }
        for u in 0..n {
            let row = self.neighbors(u);
            if row.iter().any(|&v| v >= n) {
                return Err(Error::Index(format!("neighbor of {u} out of range")));
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Dimension(format!("row {u} not strictly increasing")));
            }
            if row.binary_search(&u).is_ok() {
                return Err(Error::Dimension(format!("self loop at {u}")));
            }
        }
        if !self.is_symmetric() {
            return Err(Error::Dimension("adjacency not symmetric".into()));
        }
        Ok(())
    }
}

/// Symmetrized, deduplicated, loop-free, sorted CSR from an edge list.
pub fn build_csr(edges: &[(usize, usize)], num_nodes: usize) -> Result<CsrAdjacency> {
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
    for &(u, v) in edges {
        if u >= num_nodes || v >= num_nodes {
            return Err(Error::Index(format!("edge ({u}, {v}) with {num_nodes} nodes")));
        }
        if u != v {
            rows[u].push(v);
            rows[v].push(u);
        }
    }
    let mut row_ptr = Vec::with_capacity(num_nodes + 1);
    let mut col_idx = Vec::new();
    row_ptr.push(0);
    for mut row in rows {
        row.sort_unstable();
        row.dedup();
        col_idx.extend(row);
        row_ptr.push(col_idx.len());
    }
    Ok(CsrAdjacency {
        row_ptr,
        col_idx,
        num_nodes,
    })
}
