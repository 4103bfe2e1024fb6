//! GNN checkpoint: magic `STGG`, version, shape, feature identity, then
//! every parameter in registry order.

use std::path::Path;

use crate::bytes::{ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::fsio::{read_artifact, write_atomic};
use crate::gnn::{Arch, GnnModel, GnnShape};
use crate::rng::RngState;
use crate::stage1::{Provenance, Task};

const MAGIC: &[u8; 4] = b"STGG";
const VERSION: u32 = 1;

pub fn encode_gnn(model: &GnnModel<f32>) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    let s = &model.shape;
    w.u8(s.arch.tag());
    w.u8(match s.task {
        Task::NodeCls => 0,
        Task::Link => 1,
    });
    for v in [s.in_dim, s.hidden_dim, s.num_layers, s.num_classes, s.pair_hidden] {
        w.u32(v as u32);
    }
    w.f64(s.dropout);
    w.u8(model.feature_provenance.tag());
    w.bytes(&model.feature_hash);
    w.u32(model.params.len() as u32);
    for (_, p) in model.params.iter() {
        w.tensor(&p.value);
    }
    w.buf
}

pub fn decode_gnn(bytes: &[u8]) -> Result<GnnModel<f32>> {
    let mut r = ByteReader::new(bytes, Error::Checkpoint);
    r.expect_magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let arch = Arch::from_tag(r.u8()?).ok_or_else(|| Error::Checkpoint("unknown architecture tag".into()))?;
    let task = match r.u8()? {
        0 => Task::NodeCls,
        1 => Task::Link,
        t => return Err(Error::Checkpoint(format!("unknown task tag {t}"))),
    };
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let shape = GnnShape {
        arch,
        task,
        in_dim: dims[0],
        hidden_dim: dims[1],
        num_layers: dims[2],
        num_classes: dims[3],
        pair_hidden: dims[4],
        dropout: r.f64()?,
    };
    let provenance = Provenance::from_tag(r.u8()?).ok_or_else(|| Error::Checkpoint("unknown provenance tag".into()))?;
    let mut hash = [0u8; 32];
    hash.copy_from_slice(r.take(32)?);
    let mut model = GnnModel::<f32>::new(shape, &mut RngState::new(0))
        .map_err(|e| Error::Checkpoint(format!("invalid stored shape: {e}")))?;
    model.feature_provenance = provenance;
    model.feature_hash = hash;
    let count = r.u32()? as usize;
    if count != model.params.len() {
        return Err(Error::Checkpoint(format!(
            "{count} stored tensors, architecture has {}",
            model.params.len()
        )));
    }
    for id in 0..count {
        let t = r.tensor()?;
        let p = model.params.get_mut(id);
        if p.value.shape() != t.shape() {
            return Err(Error::Checkpoint(format!("{} stored with the wrong shape", p.name)));
        }
        p.value = t;
    }
    r.finish()?;
    Ok(model)
}

pub fn save_gnn(path: &Path, model: &GnnModel<f32>) -> Result<()> {
    write_atomic(path, &encode_gnn(model))
}

pub fn load_gnn(path: &Path) -> Result<GnnModel<f32>> {
    decode_gnn(&read_artifact(path)?)
}
