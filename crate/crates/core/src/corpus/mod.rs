//! Text ingestion, word-level tokenization, batching, and the synthetic
//! textual-graph generator.

mod batch;
mod synthetic;
mod textual_graph;
mod vocab;

pub use batch::{batch_texts, Batches, TokenBatch, TokenizedTexts};
pub use synthetic::{generate_synthetic_tg, synthetic_word, SyntheticTgConfig};
pub use textual_graph::{load_tsv, load_tsv_for, read_labels, write_labels, write_tsv, NodeSplits, TextualGraph};
pub use vocab::{build_vocab, tokenize, words, Vocab, CLS, PAD, SEP, UNK};
