use serde::{Deserialize, Serialize};

use crate::corpus::textual_graph::{NodeSplits, TextualGraph};
use crate::error::{Error, Result};
use crate::graph::{build_csr, split_edges};
use crate::rng::RngState;

/// Stochastic-block-model graph with bag-of-words documents whose words
/// come from a class-private block with probability
/// `semantic_correlation`, otherwise from a shared block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticTgConfig {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub intra_edge_prob: f64,
    pub inter_edge_prob: f64,
    pub words_per_doc: usize,
    pub class_vocab_size: usize,
    pub shared_vocab_size: usize,
    pub semantic_correlation: f64,
    /// Zipf exponent of word frequencies inside the shared block; 0 is
    /// uniform.
    pub shared_zipf: f64,
    /// Label-independent topics partitioning the shared block; each
    /// document draws its shared words from one topic. 0 keeps the block
    /// whole.
    pub num_topics: usize,
    /// Hold out edges for link prediction.
    pub link_split: bool,
    pub valid_edge_frac: f64,
    pub test_edge_frac: f64,
    pub num_eval_negatives: usize,
    pub seed: u64,
}

impl Default for SyntheticTgConfig {
    fn default() -> Self {
        Self {
            num_nodes: 1000,
            num_classes: 4,
            intra_edge_prob: 0.2,
            inter_edge_prob: 0.02,
            words_per_doc: 40,
            class_vocab_size: 200,
            shared_vocab_size: 500,
            semantic_correlation: 0.8,
            shared_zipf: 0.0,
            num_topics: 0,
            link_split: false,
            valid_edge_frac: 0.1,
            test_edge_frac: 0.1,
            num_eval_negatives: 100,
            seed: 0,
        }
    }
}

impl SyntheticTgConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {x} outside [0, 1]")))
            }
        };
        unit("intra_edge_prob", self.intra_edge_prob)?;
        unit("inter_edge_prob", self.inter_edge_prob)?;
        unit("semantic_correlation", self.semantic_correlation)?;
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes = {} below 2", self.num_classes)));
        }
        if self.num_nodes < self.num_classes {
            return Err(Error::Config("fewer nodes than classes".into()));
        }
        if self.words_per_doc == 0 || self.class_vocab_size == 0 || self.shared_vocab_size == 0 {
            return Err(Error::Config(
                "document length and vocabulary blocks must be positive".into(),
            ));
        }
        if !(self.shared_zipf >= 0.0) {
            return Err(Error::Config(format!("shared_zipf = {}", self.shared_zipf)));
        }
        if self.num_topics > self.shared_vocab_size {
            return Err(Error::Config(format!(
                "{} topics for {} shared words",
                self.num_topics, self.shared_vocab_size
            )));
        }
        Ok(())
    }

    /// Expected degree under the block model with uniform classes.
    pub fn expected_degree(&self) -> f64 {
        let (n, k) = (self.num_nodes as f64, self.num_classes as f64);
        n * (self.intra_edge_prob / k + self.inter_edge_prob * (k - 1.0) / k)
    }

    pub fn vocab_bound(&self) -> usize {
        self.class_vocab_size * self.num_classes + self.shared_vocab_size + 4
    }
}

/// Word `i` of the generator's global word list: class blocks first, then
/// the shared block.
pub fn synthetic_word(i: usize) -> String {
    format!("w{i}")
}

pub fn generate_synthetic_tg(cfg: &SyntheticTgConfig) -> Result<TextualGraph> {
    cfg.validate()?;
    if cfg.intra_edge_prob == 0.0 && cfg.inter_edge_prob == 0.0 {
        return Err(Error::Generation("p = q = 0 yields an edgeless graph".into()));
    }
    let root = RngState::new(cfg.seed);
    let (n, k) = (cfg.num_nodes, cfg.num_classes);

    let mut rng = root.substream("labels");
    let labels: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();

    let mut rng = root.substream("edges");
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] {
                cfg.intra_edge_prob
            } else {
                cfg.inter_edge_prob
            };
            if rng.bernoulli(p) {
                edges.push((i, j));
            }
        }
    }
    let adj = build_csr(&edges, n)?;

    let shared_base = cfg.class_vocab_size * k;
    let topics = cfg.num_topics.max(1);
    let topic_size = cfg.shared_vocab_size / topics;
    let mut cumulative = Vec::with_capacity(topic_size);
    let mut total = 0.0;
    for r in 0..topic_size {
        total += ((r + 1) as f64).powf(-cfg.shared_zipf);
        cumulative.push(total);
    }
    let doc_topics: Vec<usize> = {
        let mut rng = root.substream("topics");
        (0..n)
            .map(|_| if cfg.num_topics == 0 { 0 } else { rng.below(topics) })
            .collect()
    };
    let mut rng = root.substream("texts");
    let texts: Vec<String> = labels
        .iter()
        .zip(&doc_topics)
        .map(|(&y, &t)| {
            (0..cfg.words_per_doc)
                .map(|_| {
                    let id = if rng.bernoulli(cfg.semantic_correlation) {
                        y * cfg.class_vocab_size + rng.below(cfg.class_vocab_size)
                    } else {
                        shared_base + t * topic_size + rng.weighted(&cumulative)
                    };
                    synthetic_word(id)
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    root.substream("splits").shuffle(&mut order);
    let n_train = n * 6 / 10;
    let n_valid = n * 2 / 10;
    let splits = NodeSplits {
        train: order[..n_train].to_vec(),
        valid: order[n_train..n_train + n_valid].to_vec(),
        test: order[n_train + n_valid..].to_vec(),
    };

    let edge_splits = if cfg.link_split {
        Some(split_edges(
            &adj,
            cfg.valid_edge_frac,
            cfg.test_edge_frac,
            cfg.num_eval_negatives,
            &mut root.substream("edge-splits"),
        )?)
    } else {
        None
    };

    Ok(TextualGraph {
        adj,
        texts,
        labels: Some(labels),
        num_classes: k,
        splits,
        edge_splits,
    })
}
