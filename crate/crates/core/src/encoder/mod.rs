//! Compact transformer encoder, pooling, masked-LM pretraining and
//! checkpoints.

mod checkpoint;
mod mlm;
mod model;

pub use checkpoint::{decode_encoder, encode_encoder, load_encoder, save_encoder};
pub use mlm::{mlm_loss, mlm_pretrain, mlm_pretrain_step, select_mask_positions, MlmConfig, MlmStep};
pub use model::{cls_pool, mean_pool, pool, EncoderConfig, EncoderLayer, EncoderModel, Pooling};
