mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use simteg::gnn::Arch;
use simteg::hpo::SearchStage;
use simteg::stage1::{Peft, Provenance, Task};
use simteg::Error;

/// Two-stage textual graph learning: finetune a text encoder, freeze its
/// embeddings, train a GNN on them.
#[derive(Parser, Debug)]
#[command(name = "simteg", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// `section.key=value` override, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Run directory holding every artifact.
    #[arg(long, default_value = "run", global = true)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate (or ingest `data.input`) and store the textual graph.
    GenData,
    /// Masked-LM pretraining of a fresh encoder; writes the fixed encoder.
    PretrainMlm,
    /// Finetune the pretrained encoder on the task.
    Finetune {
        #[arg(long)]
        task: Option<Task>,
        #[arg(long, default_value = "lora")]
        peft: Peft,
    },
    /// Extract frozen node embeddings from an encoder checkpoint.
    Embed {
        #[arg(long)]
        ckpt: PathBuf,
        /// Feature source recorded in the cache; inferred from an
        /// `encoder-<source>.stgm` file name when omitted.
        #[arg(long)]
        source: Option<Provenance>,
        /// Cache path; defaults to `features/<source>.stgx`.
        #[arg(long = "features-out")]
        features_out: Option<PathBuf>,
    },
    /// Bag-of-words baseline features.
    Bow,
    /// Train GNN runs on a feature cache and write their report.
    TrainGnn {
        #[arg(long)]
        arch: Option<Arch>,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        task: Option<Task>,
    },
    /// Compare GNN reports, or score one checkpoint with `--model`.
    Evaluate {
        /// Report files; defaults to every GNN report in the run.
        #[arg(long = "report")]
        reports: Vec<PathBuf>,
        #[arg(long, requires = "features")]
        model: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Weighted average of several models' class probabilities.
    Ensemble {
        /// One per member, in member order; uniform when omitted.
        #[arg(long, value_delimiter = ',')]
        weights: Vec<f64>,
        #[arg(long = "model", required = true)]
        models: Vec<PathBuf>,
        /// Feature cache per member, in member order.
        #[arg(long = "features", required = true)]
        features: Vec<PathBuf>,
    },
    /// Random hyperparameter search over one stage.
    Search {
        #[arg(long)]
        stage: SearchStage,
        #[arg(long)]
        trials: Option<usize>,
        /// Feature cache the GNN stage trains on.
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Two-dimensional PCA projection of a feature cache as CSV.
    ProjectFeatures {
        #[arg(long)]
        features: PathBuf,
        #[arg(long = "csv-out")]
        csv_out: Option<PathBuf>,
    },
    /// Every stage end to end.
    Pipeline {
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// 0 ok, 2 config, 3 missing upstream artifact, 4 numeric failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Parse { .. }) => 2,
        Some(Error::Dependency(_)) => 3,
        Some(Error::Numeric(_)) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli.global, cli.command) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
