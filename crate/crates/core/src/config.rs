//! Run configuration: one TOML file with `[data]`, `[encoder]`, `[lora]`,
//! `[stage1]`, `[gnn]`, `[eval]` and `[hpo]` sections plus a global seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::SyntheticTgConfig;
use crate::encoder::{EncoderConfig, MlmConfig};
use crate::error::{Error, Result};
use crate::fsio::read_text;
use crate::gnn::{Arch, GnnConfig};
use crate::lora::LoraConfig;
use crate::rng::RngState;
use crate::stage1::{Provenance, Stage1Config, Task};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Directory of a saved textual graph; a synthetic one is generated
    /// when absent.
    pub input: Option<PathBuf>,
    pub min_freq: usize,
    /// Bag-of-words width (most frequent tokens kept).
    pub bow_dim: usize,
    pub synthetic: SyntheticTgConfig,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            input: None,
            min_freq: 1,
            bow_dim: 64,
            synthetic: SyntheticTgConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    /// `vocab_size` is filled in from the built vocabulary.
    pub model: EncoderConfig,
    pub mlm: MlmConfig,
    pub embed_batch_size: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        Self {
            model: EncoderConfig::default(),
            mlm: MlmConfig::default(),
            embed_batch_size: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Feature sources the pipeline builds and trains on. `simteg` is the
    /// adapter-finetuned encoder, `simteg-full` the fully finetuned one.
    pub sources: Vec<Provenance>,
    pub archs: Vec<Arch>,
    /// Seeded GNN runs per (source, arch).
    pub runs: usize,
    /// Report labels (`<source>-<arch>`) for the structure-gain deltas.
    pub strong: Option<String>,
    pub mlp_reference: Option<String>,
    pub sage_reference: Option<String>,
    pub project_sample_per_class: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            sources: vec![Provenance::Bow, Provenance::Fixed, Provenance::Simteg],
            archs: vec![Arch::Sage],
            runs: 1,
            strong: None,
            mlp_reference: None,
            sage_reference: None,
            project_sample_per_class: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HpoSection {
    pub lm_trials: usize,
    pub gnn_trials: usize,
    /// Replacement `[lo, hi]` bounds for continuous LM parameters.
    pub lm_ranges: BTreeMap<String, [f64; 2]>,
    pub gnn_ranges: BTreeMap<String, [f64; 2]>,
}

impl Default for HpoSection {
    fn default() -> Self {
        Self {
            lm_trials: 10,
            gnn_trials: 20,
            lm_ranges: BTreeMap::new(),
            gnn_ranges: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub task: Task,
    pub data: DataSection,
    pub encoder: EncoderSection,
    pub lora: LoraConfig,
    pub stage1: Stage1Config,
    pub gnn: GnnConfig,
    pub eval: EvalSection,
    pub hpo: HpoSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with(text, &[])
    }

    /// Parses `text`, then applies `key.path=value` overrides (values are
    /// TOML literals; bare words are taken as strings).
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => read_text(p)?,
            None => String::new(),
        };
        Self::from_toml_with(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.data.synthetic.validate()?;
        if self.data.bow_dim == 0 {
            return Err(Error::Config("data.bow_dim must be positive".into()));
        }
        let mut model = self.encoder.model.clone();
        model.vocab_size = model.vocab_size.max(4);
        model.validate()?;
        self.encoder.mlm.validate()?;
        if self.encoder.embed_batch_size == 0 {
            return Err(Error::Config("encoder.embed_batch_size must be positive".into()));
        }
        self.lora.validate()?;
        self.stage1.validate()?;
        self.gnn.validate()?;
        if self.eval.sources.is_empty() || self.eval.archs.is_empty() || self.eval.runs == 0 {
            return Err(Error::Config("eval needs sources, archs and at least one run".into()));
        }
        if self.hpo.lm_trials == 0 || self.hpo.gnn_trials == 0 {
            return Err(Error::Config("hpo trial budgets must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Root of a named randomness stream (`data`, `lm`, `gnn`, `eval`).
    pub fn stream(&self, name: &str) -> RngState {
        RngState::new(self.seed).substream(name)
    }

    /// Generator settings with edge splits switched on for link
    /// prediction. The generator seed comes from the data stream, forked
    /// by `data.synthetic.seed` so the graph can be redrawn on its own.
    pub fn synthetic(&self) -> SyntheticTgConfig {
        let mut cfg = self.data.synthetic.clone();
        cfg.seed = self.stream("data").fork(cfg.seed).next_u64();
        if self.task == Task::Link {
            cfg.link_split = true;
        }
        cfg
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let value = parse_value(raw.trim());
    let path: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = path.split_last().expect("split yields one item");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {p} is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
