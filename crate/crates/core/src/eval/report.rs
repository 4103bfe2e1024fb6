use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::eval::metrics::mean_std;

/// Metrics of one seeded run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub seed: u64,
    pub train: f64,
    pub valid: f64,
    pub test: f64,
    /// Secondary values such as `hits@10` or `epochs_to_95`.
    pub extra: BTreeMap<String, f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Per-split metrics over seeded runs of one model/feature combination.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub label: String,
    pub task: String,
    pub metric: String,
    pub config_hash: String,
    pub num_eval_negatives: usize,
    pub runs: Vec<RunMetrics>,
}

impl EvalReport {
    pub fn seeds(&self) -> Vec<u64> {
        self.runs.iter().map(|r| r.seed).collect()
    }

    pub fn values(&self, split: Split) -> Vec<f64> {
        self.runs
            .iter()
            .map(|r| match split {
                Split::Train => r.train,
                Split::Valid => r.valid,
                Split::Test => r.test,
            })
            .collect()
    }

    pub fn mean(&self, split: Split) -> f64 {
        mean_std(&self.values(split)).0
    }

    pub fn std(&self, split: Split) -> Option<f64> {
        mean_std(&self.values(split)).1
    }

    pub fn extra_mean(&self, key: &str) -> Option<f64> {
        let vals: Option<Vec<f64>> = self.runs.iter().map(|r| r.extra.get(key).copied()).collect();
        vals.filter(|v| !v.is_empty()).map(|v| mean_std(&v).0)
    }

    /// Train minus test metric, averaged over runs.
    pub fn delta_overfit(&self) -> f64 {
        self.mean(Split::Train) - self.mean(Split::Test)
    }

    /// Flat `key = value` text.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").expect("string write");
        kv("label", self.label.clone());
        kv("task", self.task.clone());
        kv("metric", self.metric.clone());
        kv("config_hash", self.config_hash.clone());
        kv("num_eval_negatives", self.num_eval_negatives.to_string());
        kv(
            "seeds",
            self.seeds().iter().map(u64::to_string).collect::<Vec<_>>().join(","),
        );
        for (name, split) in [("train", Split::Train), ("valid", Split::Valid), ("test", Split::Test)] {
            kv(&format!("{name}.mean"), format!("{:.6}", self.mean(split)));
            if let Some(s) = self.std(split) {
                kv(&format!("{name}.std"), format!("{s:.6}"));
            }
        }
        kv("delta_overfit", format!("{:.6}", self.delta_overfit()));
        for r in &self.runs {
            kv(&format!("run.{}.train", r.seed), format!("{:?}", r.train));
            kv(&format!("run.{}.valid", r.seed), format!("{:?}", r.valid));
            kv(&format!("run.{}.test", r.seed), format!("{:?}", r.test));
            for (k, v) in &r.extra {
                kv(&format!("run.{}.{k}", r.seed), format!("{v:?}"));
            }
        }
        out
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once(" = ").ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: "expected `key = value`".into(),
            })?;
            map.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| {
            map.get(k).cloned().ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("missing {k}"),
            })
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::Parse {
                line: 0,
                msg: format!("bad number for {k}"),
            })
        };
        let seeds_field = get("seeds")?;
        let seeds: Vec<u64> = if seeds_field.is_empty() {
            Vec::new()
        } else {
            seeds_field
                .split(',')
                .map(|s| {
                    s.parse().map_err(|_| Error::Parse {
                        line: 0,
                        msg: format!("bad seed {s:?}"),
                    })
                })
                .collect::<Result<_>>()?
        };
        let mut runs = Vec::new();
        for seed in seeds {
            let prefix = format!("run.{seed}.");
            let mut extra = BTreeMap::new();
            for (k, v) in map.range(prefix.clone()..) {
                let Some(rest) = k.strip_prefix(&prefix) else { break };
                if !matches!(rest, "train" | "valid" | "test") {
                    extra.insert(
                        rest.to_string(),
                        v.parse().map_err(|_| Error::Parse {
                            line: 0,
                            msg: format!("bad number for {k}"),
                        })?,
                    );
                }
            }
            runs.push(RunMetrics {
                seed,
                train: num(&format!("{prefix}train"))?,
                valid: num(&format!("{prefix}valid"))?,
                test: num(&format!("{prefix}test"))?,
                extra,
            });
        }
        Ok(Self {
            label: get("label")?,
            task: get("task")?,
            metric: get("metric")?,
            config_hash: get("config_hash")?,
            num_eval_negatives: num("num_eval_negatives")? as usize,
            runs,
        })
    }

    pub const CSV_HEADER: &'static str =
        "label,task,metric,seeds,train_mean,valid_mean,test_mean,test_std,delta_overfit,config_hash";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{},{:.6},{}",
            self.label,
            self.task,
            self.metric,
            self.seeds().iter().map(u64::to_string).collect::<Vec<_>>().join(";"),
            self.mean(Split::Train),
            self.mean(Split::Valid),
            self.mean(Split::Test),
            self.std(Split::Test).map_or(String::new(), |s| format!("{s:.6}")),
            self.delta_overfit(),
            self.config_hash
        )
    }
}

/// Test-metric difference `a − b`; both reports must share task, metric
/// and seeds.
pub fn delta(a: &EvalReport, b: &EvalReport) -> Result<f64> {
    if a.task != b.task || a.metric != b.metric {
        return Err(Error::Comparison(format!(
            "{} ({}/{}) vs {} ({}/{})",
            a.label, a.task, a.metric, b.label, b.task, b.metric
        )));
    }
    if a.seeds() != b.seeds() {
        return Err(Error::Comparison(format!(
            "{} and {} ran on different seeds",
            a.label, b.label
        )));
    }
    Ok(a.mean(Split::Test) - b.mean(Split::Test))
}

/// One row per report plus structure-gain deltas for a designated strong
/// model: `Δ_MLP = strong − mlp`, `Δ_GNN = strong − sage`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonTable {
    pub rows: Vec<(String, f64, Option<f64>)>,
    pub delta_mlp: Option<f64>,
    pub delta_gnn: Option<f64>,
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,test_mean,test_std\n");
        for (label, mean, std) in &self.rows {
            let std = std.map_or(String::new(), |s| format!("{s:.6}"));
            writeln!(out, "{label},{mean:.6},{std}").expect("string write");
        }
        if let Some(d) = self.delta_mlp {
            writeln!(out, "delta_mlp,{d:.6},").expect("string write");
        }
        if let Some(d) = self.delta_gnn {
            writeln!(out, "delta_gnn,{d:.6},").expect("string write");
        }
        out
    }
}

pub fn compare_report(
    reports: &[EvalReport],
    strong: Option<&str>,
    mlp: Option<&str>,
    sage: Option<&str>,
) -> Result<ComparisonTable> {
    let first = reports.first().ok_or_else(|| Error::Comparison("no reports".into()))?;
    for r in reports {
        delta(first, r)?;
    }
    let find = |label: &str| {
        reports
            .iter()
            .find(|r| r.label == label)
            .ok_or_else(|| Error::Comparison(format!("no report labelled {label:?}")))
    };
    let delta_to = |other: Option<&str>| -> Result<Option<f64>> {
        match (strong, other) {
            (Some(s), Some(o)) => Ok(Some(delta(find(s)?, find(o)?)?)),
            _ => Ok(None),
        }
    };
    Ok(ComparisonTable {
        rows: reports
            .iter()
            .map(|r| (r.label.clone(), r.mean(Split::Test), r.std(Split::Test)))
            .collect(),
        delta_mlp: delta_to(mlp)?,
        delta_gnn: delta_to(sage)?,
    })
}
