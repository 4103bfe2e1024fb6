use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Peft {
    #[default]
    Lora,
    Full,
}

impl Peft {
    pub fn name(self) -> &'static str {
        match self {
            Peft::Lora => "lora",
            Peft::Full => "full",
        }
    }
}

impl std::str::FromStr for Peft {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lora" => Ok(Peft::Lora),
            "full" => Ok(Peft::Full),
            other => Err(Error::Config(format!("unknown finetuning mode {other:?} (lora, full)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    #[default]
    NodeCls,
    Link,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::NodeCls => "nodecls",
            Task::Link => "link",
        }
    }

    pub fn metric(self) -> &'static str {
        match self {
            Task::NodeCls => "accuracy",
            Task::Link => "mrr",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nodecls" => Ok(Task::NodeCls),
            "link" => Ok(Task::Link),
            _ => Err(Error::Config(format!("unknown task {s:?}"))),
        }
    }
}

/// Supervised finetuning of the encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Config {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Node classification only.
    pub label_smoothing: f64,
    pub header_dropout: f64,
    pub peft: Peft,
    pub epochs: usize,
    pub batch_size: usize,
    /// Hidden width of the link-pair head.
    pub pair_hidden: usize,
    /// Negatives drawn per positive edge in link finetuning.
    pub link_negatives: usize,
    /// Caps optimizer steps per epoch; 0 means a full pass.
    pub max_steps_per_epoch: usize,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            learning_rate: 3e-3,
            weight_decay: 1e-6,
            label_smoothing: 0.1,
            header_dropout: 0.2,
            peft: Peft::Lora,
            epochs: 5,
            batch_size: 32,
            pair_hidden: 64,
            link_negatives: 1,
            max_steps_per_epoch: 0,
        }
    }
}

pub(crate) fn in_range(name: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if (lo..=hi).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {v} outside [{lo}, {hi}]")))
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<()> {
        in_range("stage1.learning_rate", self.learning_rate, 1e-6, 1e-2)?;
        in_range("stage1.weight_decay", self.weight_decay, 1e-7, 1e-4)?;
        in_range("stage1.label_smoothing", self.label_smoothing, 0.1, 0.7)?;
        in_range("stage1.header_dropout", self.header_dropout, 0.1, 0.8)?;
        if self.epochs == 0 || self.batch_size == 0 || self.pair_hidden == 0 {
            return Err(Error::Config(
                "stage1 epochs, batch_size and pair_hidden must be positive".into(),
            ));
        }
        if self.link_negatives == 0 {
            return Err(Error::Config("stage1.link_negatives must be positive".into()));
        }
        Ok(())
    }
}
