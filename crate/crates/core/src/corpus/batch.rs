use crate::corpus::vocab::{tokenize, Vocab, PAD};
use crate::error::{Error, Result};
use crate::rng::RngState;

/// Token ids and attention mask for `size` rows of `len` positions, row
/// major. Each row's mask is a non-empty prefix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBatch {
    pub input_ids: Vec<usize>,
    pub attention_mask: Vec<bool>,
    pub node_ids: Vec<usize>,
    pub len: usize,
}

impl TokenBatch {
    pub fn size(&self) -> usize {
        self.node_ids.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[bool]) {
        let r = i * self.len..(i + 1) * self.len;
        (&self.input_ids[r.clone()], &self.attention_mask[r])
    }

    /// Same rows widened with `extra` pad columns.
    pub fn padded(&self, extra: usize) -> TokenBatch {
        let len = self.len + extra;
        let mut input_ids = Vec::with_capacity(self.size() * len);
        let mut attention_mask = Vec::with_capacity(self.size() * len);
        for i in 0..self.size() {
            let (ids, mask) = self.row(i);
            input_ids.extend_from_slice(ids);
            input_ids.extend(std::iter::repeat_n(PAD, extra));
            attention_mask.extend_from_slice(mask);
            attention_mask.extend(std::iter::repeat_n(false, extra));
        }
        TokenBatch {
            input_ids,
            attention_mask,
            node_ids: self.node_ids.clone(),
            len,
        }
    }
}

/// Every node's text tokenized once to `max_len`.
#[derive(Clone, Debug)]
pub struct TokenizedTexts {
    max_len: usize,
    ids: Vec<Vec<usize>>,
    valid: Vec<usize>,
}

impl TokenizedTexts {
    pub fn new<S: AsRef<str>>(texts: &[S], vocab: &Vocab, max_len: usize) -> Result<Self> {
        let mut ids = Vec::with_capacity(texts.len());
        let mut valid = Vec::with_capacity(texts.len());
        for t in texts {
            let (row, mask) = tokenize(t.as_ref(), vocab, max_len)?;
            valid.push(mask.iter().filter(|&&m| m).count());
            ids.push(row);
        }
        Ok(Self { max_len, ids, valid })
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn num_texts(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self, node: usize) -> &[usize] {
        &self.ids[node][..self.valid[node]]
    }

    /// Batch of the given nodes, trimmed to the longest row among them.
    pub fn batch(&self, nodes: &[usize]) -> Result<TokenBatch> {
        if let Some(&bad) = nodes.iter().find(|&&n| n >= self.ids.len()) {
            return Err(Error::Index(format!("node {bad} has no text")));
        }
        let len = nodes.iter().map(|&n| self.valid[n]).max().unwrap_or(1);
        let mut input_ids = Vec::with_capacity(nodes.len() * len);
        let mut attention_mask = Vec::with_capacity(nodes.len() * len);
        for &n in nodes {
            input_ids.extend_from_slice(&self.ids[n][..len]);
            attention_mask.extend((0..len).map(|i| i < self.valid[n]));
        }
        Ok(TokenBatch {
            input_ids,
            attention_mask,
            node_ids: nodes.to_vec(),
            len,
        })
    }

    /// One epoch over `node_ids`, shuffled when `rng` is given. The last
    /// batch may be short.
    pub fn epoch(&self, node_ids: &[usize], batch_size: usize, rng: Option<&mut RngState>) -> Result<Batches<'_>> {
        if node_ids.is_empty() {
            return Err(Error::Iteration("no nodes to batch".into()));
        }
        if batch_size == 0 {
            return Err(Error::Parameter("batch size 0".into()));
        }
        if let Some(&bad) = node_ids.iter().find(|&&n| n >= self.ids.len()) {
            return Err(Error::Index(format!("node {bad} has no text")));
        }
        let mut order = node_ids.to_vec();
        if let Some(rng) = rng {
            rng.shuffle(&mut order);
        }
        Ok(Batches {
            texts: self,
            order,
            batch_size,
            next: 0,
        })
    }
}

pub struct Batches<'a> {
    texts: &'a TokenizedTexts,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

impl Iterator for Batches<'_> {
    type Item = TokenBatch;

    fn next(&mut self) -> Option<TokenBatch> {
        if self.next >= self.order.len() {
            return None;
        }
        let end = (self.next + self.batch_size).min(self.order.len());
        let nodes = &self.order[self.next..end];
        self.next = end;
        Some(self.texts.batch(nodes).expect("node ids checked when tokenized"))
    }
}

/// Tokenizes `texts` and batches `node_ids` for one epoch.
pub fn batch_texts<S: AsRef<str>>(
    texts: &[S],
    node_ids: &[usize],
    vocab: &Vocab,
    max_len: usize,
    batch_size: usize,
    rng: Option<&mut RngState>,
) -> Result<Vec<TokenBatch>> {
    let tokenized = TokenizedTexts::new(texts, vocab, max_len)?;
    Ok(tokenized.epoch(node_ids, batch_size, rng)?.collect())
}
