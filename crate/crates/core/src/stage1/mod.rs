//! Stage 1: supervised finetuning of the encoder, frozen embedding
//! extraction, bag-of-words baselines and the feature cache.

mod config;
mod features;
mod finetune;

pub(crate) use config::in_range;
pub use config::{Peft, Stage1Config, Task};
pub use features::{
    bow_features, cache_read, cache_write, config_hash, embed_nodes, extract_embeddings, hex, ConfigHash,
    FeatureMatrix, Provenance,
};
pub use finetune::{
    cls_split_accuracy, finetune_cls, finetune_link, link_split_scores, predict_cls, prepare_for_finetune, score_pairs,
    FinetuneOutcome, HeadParams,
};
