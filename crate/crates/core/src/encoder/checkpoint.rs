//! Encoder checkpoint: magic `STGM`, version, config, base parameter blobs
//! in registry order, then an optional adapter section.

use std::path::Path;

use crate::bytes::{ByteReader, ByteWriter};
use crate::encoder::{EncoderConfig, EncoderModel, Pooling};
use crate::error::{Error, Result};
use crate::fsio::{read_artifact, write_atomic};
use crate::lora::LoraConfig;
use crate::rng::RngState;

const MAGIC: &[u8; 4] = b"STGM";
const VERSION: u32 = 1;

pub fn encode_encoder(model: &EncoderModel<f32>) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    let c = &model.config;
    for v in [c.d_model, c.num_layers, c.num_heads, c.ffn_dim, c.max_len, c.vocab_size] {
        w.u32(v as u32);
    }
    w.f64(c.dropout_rate);
    w.u8(match c.pooling {
        Pooling::Mean => 0,
        Pooling::Cls => 1,
    });
    w.u32(model.base_param_count as u32);
    for id in 0..model.base_param_count {
        w.tensor(model.params.value(id));
    }
    match &model.lora {
        None => w.u8(0),
        Some(cfg) => {
            w.u8(1);
            w.u32(cfg.rank as u32);
            w.f64(cfg.alpha);
            w.f64(cfg.dropout);
            w.u32(cfg.targets.len() as u32);
            for t in &cfg.targets {
                w.str(t);
            }
            let adapters: Vec<_> = model.adapters().collect();
            w.u32(adapters.len() as u32);
            for (_, _, a) in adapters {
                w.tensor(model.params.value(a.a));
                w.tensor(model.params.value(a.b));
            }
        }
    }
    w.buf
}

pub fn decode_encoder(bytes: &[u8]) -> Result<EncoderModel<f32>> {
    let mut r = ByteReader::new(bytes, Error::Checkpoint);
    r.expect_magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let dropout_rate = r.f64()?;
    let pooling = match r.u8()? {
        0 => Pooling::Mean,
        1 => Pooling::Cls,
        t => return Err(Error::Checkpoint(format!("unknown pooling tag {t}"))),
    };
    let config = EncoderConfig {
        d_model: dims[0],
        num_layers: dims[1],
        num_heads: dims[2],
        ffn_dim: dims[3],
        max_len: dims[4],
        vocab_size: dims[5],
        dropout_rate,
        pooling,
    };
    let mut model = EncoderModel::<f32>::new(config, &mut RngState::new(0))
        .map_err(|e| Error::Checkpoint(format!("invalid stored config: {e}")))?;
    let count = r.u32()? as usize;
    if count != model.base_param_count {
        return Err(Error::Checkpoint(format!(
            "{count} stored tensors, architecture has {}",
            model.base_param_count
        )));
    }
    for id in 0..count {
        load_into(&mut model, id, &mut r)?;
    }
    if r.u8()? == 1 {
        let rank = r.u32()? as usize;
        let alpha = r.f64()?;
        let dropout = r.f64()?;
        let n = r.u32()? as usize;
        let targets = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let cfg = LoraConfig {
            rank,
            alpha,
            dropout,
            targets,
        };
        model
            .wrap_lora(&cfg, &mut RngState::new(0))
            .map_err(|e| Error::Checkpoint(format!("invalid adapter section: {e}")))?;
        let ids: Vec<(usize, usize)> = model.adapters().map(|(_, _, a)| (a.a, a.b)).collect();
        if r.u32()? as usize != ids.len() {
            return Err(Error::Checkpoint("adapter count mismatch".into()));
        }
        for (a, b) in ids {
            load_into(&mut model, a, &mut r)?;
            load_into(&mut model, b, &mut r)?;
        }
    }
    r.finish()?;
    Ok(model)
}

fn load_into(model: &mut EncoderModel<f32>, id: usize, r: &mut ByteReader<'_>) -> Result<()> {
    let t = r.tensor()?;
    let p = model.params.get_mut(id);
    if p.value.shape() != t.shape() {
        return Err(Error::Checkpoint(format!(
            "{} stored as {:?}, expected {:?}",
            p.name,
            t.shape(),
            p.value.shape()
        )));
    }
    p.value = t;
    Ok(())
}

pub fn save_encoder(path: &Path, model: &EncoderModel<f32>) -> Result<()> {
    write_atomic(path, &encode_encoder(model))
}

pub fn load_encoder(path: &Path) -> Result<EncoderModel<f32>> {
    decode_encoder(&read_artifact(path)?)
}
