use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stage1::in_range;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Mlp,
    Gcn,
    #[default]
    Sage,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Mlp => "mlp",
            Arch::Gcn => "gcn",
            Arch::Sage => "sage",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Arch::Mlp => 0,
            Arch::Gcn => 1,
            Arch::Sage => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Arch::Mlp),
            1 => Some(Arch::Gcn),
            2 => Some(Arch::Sage),
            _ => None,
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Arch::Mlp),
            "gcn" => Ok(Arch::Gcn),
            "sage" => Ok(Arch::Sage),
            _ => Err(Error::Config(format!("unknown architecture {s:?}"))),
        }
    }
}

pub const LAYER_CHOICES: [usize; 5] = [2, 3, 4, 6, 8];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GnnConfig {
    pub arch: Arch,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Node classification only.
    pub label_smoothing: f64,
    pub epochs: usize,
    pub full_batch: bool,
    /// Neighbors sampled per layer, input layer first. Mini-batch only.
    pub fanouts: Vec<usize>,
    /// Seed nodes (classification) or positive edges (link) per step.
    pub batch_size: usize,
    pub pair_hidden: usize,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Sage,
            num_layers: 2,
            hidden_dim: 256,
            dropout: 0.5,
            learning_rate: 1e-2,
            weight_decay: 1e-6,
            label_smoothing: 0.1,
            epochs: 100,
            full_batch: true,
            fanouts: vec![15, 10],
            batch_size: 256,
            pair_hidden: 64,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<()> {
        if !LAYER_CHOICES.contains(&self.num_layers) {
            return Err(Error::Config(format!(
                "gnn.num_layers {} not in {LAYER_CHOICES:?}",
                self.num_layers
            )));
        }
        in_range("gnn.dropout", self.dropout, 0.1, 0.8)?;
        in_range("gnn.learning_rate", self.learning_rate, 1e-4, 1e-2)?;
        in_range("gnn.weight_decay", self.weight_decay, 1e-7, 1e-4)?;
        in_range("gnn.label_smoothing", self.label_smoothing, 0.1, 0.7)?;
        self.check_trainable()
    }

    /// Looser check used by the trainer: any non-negative rate and
    /// probabilities in `[0, 1)`, so ablations such as `lr = 0` run.
    pub fn check_trainable(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::Config("gnn.num_layers must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Parameter(
                "gnn learning rate and weight decay must be ≥ 0".into(),
            ));
        }
        for (name, v) in [("dropout", self.dropout), ("label_smoothing", self.label_smoothing)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("gnn.{name} = {v} outside [0, 1)")));
            }
        }
        if self.hidden_dim == 0 || self.pair_hidden == 0 || self.batch_size == 0 {
            return Err(Error::Config("gnn dimensions and batch size must be positive".into()));
        }
        if !self.full_batch && self.arch != Arch::Mlp && self.fanouts.len() != self.num_layers {
            return Err(Error::Config(format!(
                "gnn.fanouts has {} entries for {} layers",
                self.fanouts.len(),
                self.num_layers
            )));
        }
        if self.fanouts.contains(&0) {
            return Err(Error::Config("gnn.fanouts entries must be positive".into()));
        }
        Ok(())
    }
}
