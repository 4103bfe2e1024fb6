use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::bytes::{ByteReader, ByteWriter};
use crate::corpus::{words, TokenizedTexts, Vocab};
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::fsio::{read_artifact, write_atomic};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Bow,
    Fixed,
    Simteg,
    SimtegFull,
}

impl Provenance {
    pub fn tag(self) -> u8 {
        match self {
            Provenance::Bow => 0,
            Provenance::Fixed => 1,
            Provenance::Simteg => 2,
            Provenance::SimtegFull => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Provenance::Bow,
            1 => Provenance::Fixed,
            2 => Provenance::Simteg,
            3 => Provenance::SimtegFull,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Provenance::Bow => "bow",
            Provenance::Fixed => "fixed",
            Provenance::Simteg => "simteg",
            Provenance::SimtegFull => "simteg-full",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Provenance::Bow,
            Provenance::Fixed,
            Provenance::Simteg,
            Provenance::SimtegFull,
        ]
        .into_iter()
        .find(|p| p.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown feature source {s:?}")))
    }
}

pub type ConfigHash = [u8; 32];

/// SHA-256 of a canonical description of the producing configuration.
pub fn config_hash(description: &str) -> ConfigHash {
    Sha256::digest(description.as_bytes()).into()
}

pub fn hex(hash: &ConfigHash) -> String {
    hash.iter().map(|b| format!("{b:02x}")).collect()
}

/// Node features; row `i` belongs to node `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub x: Tensor<f32>,
    pub provenance: Provenance,
    pub config_hash: ConfigHash,
}

const MAGIC: &[u8; 4] = b"STGX";
const VERSION: u32 = 1;

impl FeatureMatrix {
    pub fn new(x: Tensor<f32>, provenance: Provenance, config_hash: ConfigHash) -> Result<Self> {
        if !x.all_finite() {
            return Err(Error::Numeric(format!("non-finite {provenance} features")));
        }
        Ok(Self {
            x,
            provenance,
            config_hash,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.x.rows()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u64(self.x.rows() as u64);
        w.u32(self.x.cols() as u32);
        w.u8(self.provenance.tag());
        w.bytes(&self.config_hash);
        for v in self.x.data() {
            w.bytes(&v.to_le_bytes());
        }
        w.buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, Error::Cache);
        r.expect_magic(MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Cache(format!("unsupported cache version {version}")));
        }
        let n = usize::try_from(r.u64()?).map_err(|_| Error::Cache("row count overflow".into()))?;
        let d = r.u32()? as usize;
        let tag = r.u8()?;
        let provenance =
            Provenance::from_tag(tag).ok_or_else(|| Error::Cache(format!("unknown provenance tag {tag}")))?;
        let config_hash: ConfigHash = r.take(32)?.try_into().expect("32 bytes");
        let len = n.checked_mul(d).ok_or_else(|| Error::Cache("size overflow".into()))?;
        let data = r.f32s(len)?;
        r.finish()?;
        Ok(Self {
            x: Tensor::new(n, d, data)?,
            provenance,
            config_hash,
        })
    }
}

pub fn cache_write(path: &Path, fm: &FeatureMatrix) -> Result<()> {
    if !fm.x.all_finite() {
        return Err(Error::Cache("refusing to cache non-finite features".into()));
    }
    write_atomic(path, &fm.encode())
}

pub fn cache_read(path: &Path) -> Result<FeatureMatrix> {
    FeatureMatrix::decode(&read_artifact(path)?)
}

/// L2-normalized term frequencies over the `d_cap` most frequent
/// vocabulary tokens.
pub fn bow_features<S: AsRef<str>>(texts: &[S], vocab: &Vocab, d_cap: usize) -> Tensor<f32> {
    let cap = d_cap.min(vocab.words().len());
    let first = crate::corpus::SEP + 1;
    let mut x = Tensor::zeros(texts.len(), cap);
    for (i, t) in texts.iter().enumerate() {
        let row = x.row_mut(i);
        for w in words(t.as_ref()) {
            let id = vocab.id(&w);
            if id >= first && id < first + cap {
                row[id - first] += 1.0;
            }
        }
        let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    x
}

/// Eval-mode pooled embeddings of `nodes`, row-aligned, computed in
/// independent batches.
pub fn embed_nodes(
    model: &EncoderModel<f32>,
    texts: &TokenizedTexts,
    nodes: &[usize],
    batch_size: usize,
) -> Result<Tensor<f32>> {
    if batch_size == 0 {
        return Err(Error::Parameter("batch size 0".into()));
    }
    let parts: Vec<Tensor<f32>> = nodes
        .par_chunks(batch_size)
        .map(|chunk| {
            let batch = texts.batch(chunk)?;
            model.embed_batch(&batch).map_err(|e| match e {
                Error::Pooling(msg) => Error::Pooling(format!("nodes {chunk:?}: {msg}")),
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    let d = model.config.d_model;
    let mut data = Vec::with_capacity(nodes.len() * d);
    for p in parts {
        data.extend(p.into_data());
    }
    Tensor::new(nodes.len(), d, data)
}

/// Embeddings of every node in id order. Adapters are merged into a copy
/// first.
pub fn extract_embeddings(model: &EncoderModel<f32>, texts: &TokenizedTexts, batch_size: usize) -> Result<Tensor<f32>> {
    let mut eval = if model.lora.is_some() {
        let mut m = model.clone();
        m.set_training(false);
        m.merge_lora()?
    } else {
        model.clone()
    };
    eval.set_training(false);
    let nodes: Vec<usize> = (0..texts.num_texts()).collect();
    embed_nodes(&eval, texts, &nodes, batch_size)
}
