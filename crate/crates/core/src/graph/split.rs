use crate::error::{Error, Result};
use crate::graph::{build_csr, CsrAdjacency};
use crate::rng::RngState;

pub type Edge = (usize, usize);

/// Held-out edge protocol for link prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeSplits {
    pub train: Vec<Edge>,
    pub valid: Vec<Edge>,
    pub test: Vec<Edge>,
    /// For each valid positive `(u, v)`, destinations `w` such that `(u, w)`
    /// is not an edge of the full graph.
    pub valid_negatives: Vec<Vec<usize>>,
    pub test_negatives: Vec<Vec<usize>>,
    /// Graph over the train edges only; the only structure link models see.
    pub message_graph: CsrAdjacency,
}

impl EdgeSplits {
    pub fn num_eval_negatives(&self) -> usize {
        self.valid_negatives
            .first()
            .or(self.test_negatives.first())
            .map_or(0, Vec::len)
    }

    pub fn positives(&self, which: SplitKind) -> &[Edge] {
        match which {
            SplitKind::Train => &self.train,
            SplitKind::Valid => &self.valid,
            SplitKind::Test => &self.test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SplitKind {
    Train,
    Valid,
    Test,
}

impl SplitKind {
    pub fn code(self) -> char {
        match self {
            SplitKind::Train => 't',
            SplitKind::Valid => 'v',
            SplitKind::Test => 's',
        }
    }

    pub fn from_code(c: &str) -> Option<Self> {
        match c {
            "t" => Some(SplitKind::Train),
            "v" => Some(SplitKind::Valid),
            "s" => Some(SplitKind::Test),
            _ => None,
        }
    }
}

const NEGATIVE_RETRIES: usize = 1000;

/// Uniform destination `w ≠ u` with `(u, w)` absent from `adj`.
pub fn sample_non_neighbor(adj: &CsrAdjacency, u: usize, rng: &mut RngState) -> Result<usize> {
    let n = adj.num_nodes();
    if n < 2 || adj.degree(u) + 1 >= n {
        return Err(Error::Protocol(format!("node {u} is adjacent to every other node")));
    }
    for _ in 0..NEGATIVE_RETRIES {
        let w = rng.below(n);
        if w != u && !adj.has_edge(u, w) {
            return Ok(w);
        }
    }
    Err(Error::Protocol(format!(
        "no non-neighbor of {u} found in {NEGATIVE_RETRIES} draws"
    )))
}

/// Removes `valid_frac` and `test_frac` of the undirected edges from the
/// message graph and attaches `num_eval_negatives` fixed negatives to every
/// held-out positive.
pub fn split_edges(
    adj: &CsrAdjacency,
    valid_frac: f64,
    test_frac: f64,
    num_eval_negatives: usize,
    rng: &mut RngState,
) -> Result<EdgeSplits> {
    if valid_frac < 0.0 || test_frac < 0.0 || valid_frac + test_frac >= 1.0 {
        return Err(Error::Parameter(format!(
            "split fractions {valid_frac} + {test_frac} must be nonnegative and sum below 1"
        )));
    }
    let mut edges = adj.edges();
    rng.shuffle(&mut edges);
    let m = edges.len();
    let n_valid = (valid_frac * m as f64).round() as usize;
    let n_test = (test_frac * m as f64).round() as usize;
    let valid: Vec<Edge> = edges[..n_valid].to_vec();
    let test: Vec<Edge> = edges[n_valid..n_valid + n_test].to_vec();
    let mut train: Vec<Edge> = edges[n_valid + n_test..].to_vec();
    train.sort_unstable();
    let negatives = |pos: &[Edge], rng: &mut RngState| -> Result<Vec<Vec<usize>>> {
        pos.iter()
            .map(|&(u, _)| {
                (0..num_eval_negatives)
                    .map(|_| sample_non_neighbor(adj, u, rng))
                    .collect()
            })
            .collect()
    };
    let valid_negatives = negatives(&valid, rng)?;
    let test_negatives = negatives(&test, rng)?;
    let message_graph = build_csr(&train, adj.num_nodes())?;
    Ok(EdgeSplits {
        train,
        valid,
        test,
        valid_negatives,
        test_negatives,
        message_graph,
    })
}
