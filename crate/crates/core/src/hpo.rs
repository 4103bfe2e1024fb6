//! Uniform random search over the LM and GNN hyperparameter spaces.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gnn::{GnnConfig, LAYER_CHOICES};
use crate::lora::LoraConfig;
use crate::rng::RngState;
use crate::stage1::{Stage1Config, Task};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchStage {
    Lm,
    Gnn,
}

impl std::str::FromStr for SearchStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lm" => Ok(SearchStage::Lm),
            "gnn" => Ok(SearchStage::Gnn),
            _ => Err(Error::Config(format!("unknown search stage {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ParamSpec {
    Continuous { lo: f64, hi: f64 },
    Discrete(Vec<f64>),
}

impl ParamSpec {
    /// Log-uniform when `lo > 0` and the range spans two decades or more.
    pub fn is_log_scale(&self) -> bool {
        matches!(*self, ParamSpec::Continuous { lo, hi } if lo > 0.0 && hi / lo >= 100.0)
    }

    pub fn sample(&self, rng: &mut RngState) -> f64 {
        match self {
            ParamSpec::Continuous { lo, hi } if self.is_log_scale() => {
                rng.uniform_range(lo.ln(), hi.ln()).exp().clamp(*lo, *hi)
            }
            ParamSpec::Continuous { lo, hi } => rng.uniform_range(*lo, *hi),
            ParamSpec::Discrete(values) => values[rng.below(values.len())],
        }
    }
}

/// Ordered parameter specs for one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    pub stage: SearchStage,
    pub params: Vec<(String, ParamSpec)>,
}

fn cont(name: &str, lo: f64, hi: f64) -> (String, ParamSpec) {
    (name.to_string(), ParamSpec::Continuous { lo, hi })
}

fn disc(name: &str, values: &[f64]) -> (String, ParamSpec) {
    (name.to_string(), ParamSpec::Discrete(values.to_vec()))
}

impl SearchSpace {
    /// Encoder finetuning space; link prediction has no label smoothing.
    pub fn lm(task: Task) -> Self {
        let mut params = vec![
            cont("learning_rate", 1e-6, 1e-4),
            cont("weight_decay", 1e-7, 1e-4),
            cont("label_smoothing", 0.1, 0.7),
            cont("header_dropout", 0.1, 0.8),
            disc("lora_rank", &[1.0, 2.0, 4.0, 8.0]),
            disc("lora_alpha", &[4.0, 8.0, 16.0, 32.0]),
            cont("lora_dropout", 0.1, 0.8),
        ];
        if task == Task::Link {
            params.retain(|(n, _)| n != "label_smoothing");
        }
        Self {
            stage: SearchStage::Lm,
            params,
        }
    }

    pub fn gnn(task: Task) -> Self {
        let layers: Vec<f64> = LAYER_CHOICES.iter().map(|&l| l as f64).collect();
        let mut params = vec![
            cont("learning_rate", 1e-4, 1e-2),
            cont("weight_decay", 1e-7, 1e-4),
            cont("label_smoothing", 0.1, 0.7),
            cont("dropout", 0.1, 0.8),
            disc("num_layers", &layers),
        ];
        if task == Task::Link {
            params.retain(|(n, _)| n != "label_smoothing");
        }
        Self {
            stage: SearchStage::Gnn,
            params,
        }
    }

    pub fn for_stage(stage: SearchStage, task: Task) -> Self {
        match stage {
            SearchStage::Lm => Self::lm(task),
            SearchStage::Gnn => Self::gnn(task),
        }
    }

    /// Replaces the bounds of continuous parameters.
    pub fn with_ranges(mut self, ranges: &BTreeMap<String, [f64; 2]>) -> Result<Self> {
        for (name, &[lo, hi]) in ranges {
            let slot = self
                .params
                .iter_mut()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::Config(format!("search space has no parameter {name:?}")))?;
            if !matches!(slot.1, ParamSpec::Continuous { .. }) {
                return Err(Error::Config(format!("{name} is discrete")));
            }
            slot.1 = ParamSpec::Continuous { lo, hi };
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, spec) in &self.params {
            match spec {
                ParamSpec::Continuous { lo, hi } if !(lo < hi) || !lo.is_finite() || !hi.is_finite() => {
                    return Err(Error::Config(format!("{name}: empty range [{lo}, {hi}]")));
                }
                ParamSpec::Discrete(v) if v.is_empty() => {
                    return Err(Error::Config(format!("{name}: no values")));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Sampled values in space order.
pub type TrialConfig = Vec<(String, f64)>;

pub fn sample_trial(space: &SearchSpace, rng: &mut RngState) -> TrialConfig {
    space
        .params
        .iter()
        .map(|(name, spec)| (name.clone(), spec.sample(rng)))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrialStatus {
    Ok,
    Failed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub id: usize,
    pub config: TrialConfig,
    /// Validation metric; `None` when the trial failed.
    pub objective: Option<f64>,
    pub status: TrialStatus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub best: Trial,
    pub trials: Vec<Trial>,
}

/// Runs `budget` trials in id order. Trial `i` draws its config from
/// fork `i` of the seed stream, so the sequence does not depend on
/// objective outcomes. Failures are logged; ties keep the earlier trial.
pub fn run_search(
    space: &SearchSpace,
    budget: usize,
    mut objective: impl FnMut(usize, &TrialConfig) -> Result<f64>,
    seed: u64,
) -> Result<SearchResult> {
    space.validate()?;
    if budget == 0 {
        return Err(Error::Parameter("search budget must be ≥ 1".into()));
    }
    let root = RngState::new(seed).substream("search");
    let mut trials = Vec::with_capacity(budget);
    for id in 0..budget {
        let config = sample_trial(space, &mut root.fork(id as u64));
        let (objective, status) = match objective(id, &config) {
            Ok(v) if v.is_finite() => (Some(v), TrialStatus::Ok),
            Ok(v) => (None, TrialStatus::Failed(format!("non-finite objective {v}"))),
            Err(e) => (None, TrialStatus::Failed(e.to_string())),
        };
        trials.push(Trial {
            id,
            config,
            objective,
            status,
        });
    }
    let best = trials
        .iter()
        .filter_map(|t| t.objective.map(|o| (o, t)))
        .fold(None::<(f64, &Trial)>, |acc, (o, t)| match acc {
            Some((b, _)) if b >= o => acc,
            _ => Some((o, t)),
        })
        .map(|(_, t)| t.clone())
        .ok_or_else(|| Error::Search(format!("all {budget} trials failed")))?;
    Ok(SearchResult { best, trials })
}

/// `trial_id,<params…>,objective,status` with one row per trial.
pub fn trials_csv(result: &SearchResult) -> String {
    let mut out = String::from("trial_id");
    if let Some(first) = result.trials.first() {
        for (name, _) in &first.config {
            write!(out, ",{name}").expect("string write");
        }
    }
    out.push_str(",objective,status\n");
    for t in &result.trials {
        write!(out, "{}", t.id).expect("string write");
        for (_, v) in &t.config {
            write!(out, ",{v}").expect("string write");
        }
        let objective = t.objective.map_or(String::new(), |o| o.to_string());
        let status = match &t.status {
            TrialStatus::Ok => "ok".to_string(),
            TrialStatus::Failed(msg) => format!("failed: {}", msg.replace([',', '\n'], ";")),
        };
        writeln!(out, ",{objective},{status}").expect("string write");
    }
    out
}

fn lookup(config: &TrialConfig, name: &str) -> Option<f64> {
    config.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
}

/// Writes sampled LM values into the stage-1 and adapter configs.
pub fn apply_lm(config: &TrialConfig, stage1: &mut Stage1Config, lora: &mut LoraConfig) {
    if let Some(v) = lookup(config, "learning_rate") {
        stage1.learning_rate = v;
    }
    if let Some(v) = lookup(config, "weight_decay") {
        stage1.weight_decay = v;
    }
    if let Some(v) = lookup(config, "label_smoothing") {
        stage1.label_smoothing = v;
    }
    if let Some(v) = lookup(config, "header_dropout") {
        stage1.header_dropout = v;
    }
    if let Some(v) = lookup(config, "lora_rank") {
        lora.rank = v as usize;
    }
    if let Some(v) = lookup(config, "lora_alpha") {
        lora.alpha = v;
    }
    if let Some(v) = lookup(config, "lora_dropout") {
        lora.dropout = v;
    }
}

pub fn apply_gnn(config: &TrialConfig, gnn: &mut GnnConfig) {
    if let Some(v) = lookup(config, "learning_rate") {
        gnn.learning_rate = v;
    }
    if let Some(v) = lookup(config, "weight_decay") {
        gnn.weight_decay = v;
    }
    if let Some(v) = lookup(config, "label_smoothing") {
        gnn.label_smoothing = v;
    }
    if let Some(v) = lookup(config, "dropout") {
        gnn.dropout = v;
    }
    if let Some(v) = lookup(config, "num_layers") {
        gnn.num_layers = v as usize;
        if gnn.fanouts.len() != gnn.num_layers {
            let last = gnn.fanouts.last().copied().unwrap_or(10);
            gnn.fanouts.resize(gnn.num_layers, last);
        }
    }
}
