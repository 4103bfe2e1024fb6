//! Stage functions shared by the CLI subcommands and the end-to-end
//! `pipeline` run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::autodiff::argmax_rows;
use crate::config::RunConfig;
use crate::corpus::{build_vocab, generate_synthetic_tg, TextualGraph, TokenizedTexts, Vocab};
use crate::encoder::{mlm_pretrain, save_encoder, EncoderModel};
use crate::error::{Error, Result};
use crate::eval::{accuracy, compare_report, ensemble, EnsembleSpec, EvalReport, RunMetrics};
use crate::fsio::write_text;
use crate::gnn::{predict_nodes, save_gnn, train_gnn, Arch, GnnModel, GnnOutcome};
use crate::lora::LoraConfig;
use crate::rng::RngState;
use crate::stage1::{
    bow_features, cache_write, cls_split_accuracy, config_hash, extract_embeddings, finetune_cls, finetune_link, hex,
    link_split_scores, prepare_for_finetune, FeatureMatrix, FinetuneOutcome, HeadParams, Peft, Provenance, Task,
};
use crate::tensor::Tensor;

/// Artifact locations under one run directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.txt")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn encoder(&self, source: Provenance) -> PathBuf {
        self.root.join(format!("encoder-{source}.stgm"))
    }

    pub fn mlm_history(&self) -> PathBuf {
        self.root.join("mlm.csv")
    }

    pub fn stage1_history(&self, source: Provenance) -> PathBuf {
        self.root.join(format!("stage1-{source}.csv"))
    }

    pub fn features(&self, source: Provenance) -> PathBuf {
        self.root.join("features").join(format!("{source}.stgx"))
    }

    pub fn gnn(&self, source: Provenance, arch: Arch, run: usize) -> PathBuf {
        self.root.join("gnn").join(format!("{source}-{arch}-{run}.stgg"))
    }

    /// Stage-1 report of a finetuned encoder.
    pub fn lm_report(&self, source: Provenance) -> PathBuf {
        self.root.join("lm").join(format!("{source}.txt"))
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn report(&self, label: &str) -> PathBuf {
        self.reports().join(format!("{label}.txt"))
    }

    pub fn comparison(&self) -> PathBuf {
        self.root.join("comparison.csv")
    }
}

/// Graph plus its vocabulary and tokenized texts.
pub struct Prepared {
    pub graph: TextualGraph,
    pub vocab: Vocab,
    pub texts: TokenizedTexts,
}

pub fn load_graph(cfg: &RunConfig) -> Result<TextualGraph> {
    let graph = match &cfg.data.input {
        Some(dir) => TextualGraph::load(dir)?,
        None => generate_synthetic_tg(&cfg.synthetic())?,
    };
    if cfg.task == Task::Link && graph.edge_splits.is_none() {
        return Err(Error::Data("link prediction needs edge splits".into()));
    }
    Ok(graph)
}

/// Vocabulary from train-split texts; every node is tokenized with it.
pub fn prepare(cfg: &RunConfig, graph: TextualGraph) -> Result<Prepared> {
    let train: Vec<&str> = graph.splits.train.iter().map(|&v| graph.texts[v].as_str()).collect();
    let vocab = build_vocab(&train, cfg.data.min_freq)?;
    let texts = TokenizedTexts::new(&graph.texts, &vocab, cfg.encoder.model.max_len)?;
    Ok(Prepared { graph, vocab, texts })
}

/// Graph and vocabulary previously written under `layout`; the vocabulary
/// is rebuilt from the train split when no file exists.
pub fn open_prepared(cfg: &RunConfig, layout: &Layout) -> Result<Prepared> {
    let graph = TextualGraph::load(&layout.data())?;
    let vocab = if layout.vocab().exists() {
        Vocab::load(&layout.vocab())?
    } else {
        let train: Vec<&str> = graph.splits.train.iter().map(|&v| graph.texts[v].as_str()).collect();
        build_vocab(&train, cfg.data.min_freq)?
    };
    let texts = TokenizedTexts::new(&graph.texts, &vocab, cfg.encoder.model.max_len)?;
    Ok(Prepared { graph, vocab, texts })
}

pub fn mlm_history_csv(history: &[f64]) -> String {
    let mut csv = String::from("epoch,mlm_loss\n");
    for (i, l) in history.iter().enumerate() {
        writeln!(csv, "{},{l}", i + 1).expect("string write");
    }
    csv
}

pub fn stage1_history_csv(outcome: &FinetuneOutcome) -> String {
    let mut csv = String::from("epoch,train_loss,train_metric,valid_metric\n");
    for r in &outcome.reports {
        writeln!(
            csv,
            "{},{},{},{}",
            r.epoch, r.train_loss, r.train_metric, r.valid_metric
        )
        .expect("string write");
    }
    csv
}

/// Fresh encoder sized to the vocabulary, masked-LM pretrained.
pub fn pretrain_encoder(cfg: &RunConfig, p: &Prepared) -> Result<(EncoderModel<f32>, Vec<f64>)> {
    let lm = cfg.stream("lm");
    let mut model_cfg = cfg.encoder.model.clone();
    model_cfg.vocab_size = p.vocab.len();
    let mut model = EncoderModel::new(model_cfg, &mut lm.substream("init"))?;
    let history = mlm_pretrain(&mut model, &p.texts, &cfg.encoder.mlm, &mut lm.substream("mlm"))?;
    Ok((model, history))
}

pub struct Stage1Run {
    pub model: EncoderModel<f32>,
    pub outcome: FinetuneOutcome,
    /// Train/valid/test metric of the encoder with its task head.
    pub metrics: RunMetrics,
}

impl Stage1Run {
    pub fn report(&self, cfg: &RunConfig, graph: &TextualGraph, source: Provenance) -> EvalReport {
        EvalReport {
            label: format!("{source}-lm"),
            task: cfg.task.name().to_string(),
            metric: cfg.task.metric().to_string(),
            config_hash: hex(&feature_hash(cfg, source)),
            num_eval_negatives: graph.edge_splits.as_ref().map_or(0, |s| s.num_eval_negatives()),
            runs: vec![self.metrics.clone()],
        }
    }
}

pub fn peft_provenance(peft: Peft) -> Provenance {
    match peft {
        Peft::Lora => Provenance::Simteg,
        Peft::Full => Provenance::SimtegFull,
    }
}

/// Finetunes a copy of `base` on the configured task.
pub fn finetune_encoder(cfg: &RunConfig, p: &Prepared, base: &EncoderModel<f32>, peft: Peft) -> Result<Stage1Run> {
    let mut rng = cfg
        .stream("lm")
        .substream("finetune")
        .substream(peft_provenance(peft).name());
    let mut model = base.clone();
    prepare_for_finetune(&mut model, peft, &cfg.lora, &mut rng)?;
    let mut stage1 = cfg.stage1.clone();
    stage1.peft = peft;
    let d = model.config.d_model;
    let bs = cfg.encoder.embed_batch_size;
    let (outcome, [train, valid, test], extra) = match cfg.task {
        Task::NodeCls => {
            let mut head = HeadParams::classifier(d, p.graph.num_classes, stage1.header_dropout, &mut rng);
            let outcome = finetune_cls(&p.graph, &p.texts, &mut model, &mut head, &stage1, &mut rng)?;
            let acc = cls_split_accuracy(&p.graph, &p.texts, &model, &head, bs)?;
            (outcome, acc, BTreeMap::new())
        }
        Task::Link => {
            let mut head = HeadParams::pair(d, stage1.pair_hidden, stage1.header_dropout, &mut rng);
            let outcome = finetune_link(&p.graph, &p.texts, &mut model, &mut head, &stage1, &mut rng)?;
            let (valid, test) = link_split_scores(&p.graph, &p.texts, &model, &head, bs)?;
            let train = outcome.reports.last().map_or(f64::NAN, |r| r.train_metric);
            let extra = BTreeMap::from([
                ("valid_hits@10".to_string(), valid.hits_at_10),
                ("test_hits@10".to_string(), test.hits_at_10),
                ("test_auc".to_string(), test.auc),
            ]);
            (outcome, [train, valid.mrr, test.mrr], extra)
        }
    };
    let metrics = RunMetrics {
        seed: cfg.seed,
        train,
        valid,
        test,
        extra,
    };
    Ok(Stage1Run {
        model,
        outcome,
        metrics,
    })
}

/// Identity of a feature cache: everything upstream of it.
pub fn feature_hash(cfg: &RunConfig, provenance: Provenance) -> [u8; 32] {
    let mut desc = format!(
        "seed={}\ntask={}\nsource={provenance}\n{}",
        cfg.seed,
        cfg.task.name(),
        toml::to_string(&cfg.data).expect("serializes")
    );
    if provenance != Provenance::Bow {
        desc.push_str(&toml::to_string(&cfg.encoder).expect("serializes"));
    }
    if matches!(provenance, Provenance::Simteg | Provenance::SimtegFull) {
        desc.push_str(&toml::to_string(&cfg.stage1).expect("serializes"));
    }
    if provenance == Provenance::Simteg {
        desc.push_str(&toml::to_string::<LoraConfig>(&cfg.lora).expect("serializes"));
    }
    config_hash(&desc)
}

pub fn bow_matrix(cfg: &RunConfig, p: &Prepared) -> Result<FeatureMatrix> {
    FeatureMatrix::new(
        bow_features(&p.graph.texts, &p.vocab, cfg.data.bow_dim),
        Provenance::Bow,
        feature_hash(cfg, Provenance::Bow),
    )
}

pub fn encoder_matrix(
    cfg: &RunConfig,
    p: &Prepared,
    model: &EncoderModel<f32>,
    provenance: Provenance,
) -> Result<FeatureMatrix> {
    FeatureMatrix::new(
        extract_embeddings(model, &p.texts, cfg.encoder.embed_batch_size)?,
        provenance,
        feature_hash(cfg, provenance),
    )
}

pub struct GnnRuns {
    pub report: EvalReport,
    pub models: Vec<GnnModel<f32>>,
    pub outcomes: Vec<GnnOutcome>,
}

/// Stream of GNN run `run`; shared by every feature source so reports
/// compare on identical seeds.
pub fn gnn_stream(cfg: &RunConfig, arch: Arch, run: usize) -> RngState {
    cfg.stream("gnn").substream(arch.name()).fork(run as u64)
}

/// `eval.runs` seeded trainings of `arch` on `fm`.
pub fn gnn_report(cfg: &RunConfig, graph: &TextualGraph, fm: &FeatureMatrix, arch: Arch) -> Result<GnnRuns> {
    let mut gcfg = cfg.gnn.clone();
    gcfg.arch = arch;
    let mut runs = Vec::with_capacity(cfg.eval.runs);
    let mut models = Vec::with_capacity(cfg.eval.runs);
    let mut outcomes = Vec::with_capacity(cfg.eval.runs);
    for run in 0..cfg.eval.runs {
        let (model, outcome) = train_gnn(graph, fm, &gcfg, cfg.task, &mut gnn_stream(cfg, arch, run))?;
        let [train, valid, test] = crate::gnn::evaluate_gnn(&model, graph, fm)?;
        let mut extra = BTreeMap::from([
            ("epochs_to_95".to_string(), outcome.epochs_to_95 as f64),
            ("best_epoch".to_string(), outcome.best_epoch as f64),
        ]);
        if cfg.task == Task::Link {
            let adj = crate::gnn::task_adjacency(graph, cfg.task)?;
            let h = crate::gnn::node_representations(&model, adj, fm)?;
            let splits = graph.edge_splits.as_ref().expect("checked by training");
            let (v, t) = crate::gnn::link_eval(&model, &h, splits)?;
            extra.insert("valid_hits@10".into(), v.hits_at_10);
            extra.insert("test_hits@10".into(), t.hits_at_10);
        }
        runs.push(RunMetrics {
            seed: run as u64,
            train,
            valid,
            test,
            extra,
        });
        models.push(model);
        outcomes.push(outcome);
    }
    let num_eval_negatives = graph.edge_splits.as_ref().map_or(0, |s| s.num_eval_negatives());
    Ok(GnnRuns {
        report: EvalReport {
            label: format!("{}-{}", fm.provenance, arch),
            task: cfg.task.name().to_string(),
            metric: cfg.task.metric().to_string(),
            config_hash: hex(&fm.config_hash),
            num_eval_negatives,
            runs,
        },
        models,
        outcomes,
    })
}

/// Class probabilities of every node under a node-classification model.
pub fn class_probabilities(model: &GnnModel<f32>, graph: &TextualGraph, fm: &FeatureMatrix) -> Result<Tensor<f64>> {
    let nodes: Vec<usize> = (0..graph.num_nodes()).collect();
    Ok(predict_nodes(model, &graph.adj, fm, &nodes)?.cast())
}

/// Train/valid/test accuracy of row-aligned class probabilities.
pub fn split_accuracy(graph: &TextualGraph, probs: &Tensor<f64>) -> Result<[f64; 3]> {
    let labels = graph
        .labels
        .as_deref()
        .ok_or_else(|| Error::Data("graph has no labels".into()))?;
    let acc = |nodes: &[usize]| -> Result<f64> {
        let pred = argmax_rows(&probs.select_rows(nodes));
        let truth: Vec<usize> = nodes.iter().map(|&v| labels[v]).collect();
        accuracy(&pred, &truth)
    };
    let s = &graph.splits;
    Ok([acc(&s.train)?, acc(&s.valid)?, acc(&s.test)?])
}

/// Accuracies of each member followed by those of their weighted average.
pub fn ensemble_accuracy(graph: &TextualGraph, members: &[Tensor<f64>], spec: &EnsembleSpec) -> Result<Vec<[f64; 3]>> {
    let mut out = members
        .iter()
        .map(|m| split_accuracy(graph, m))
        .collect::<Result<Vec<_>>>()?;
    out.push(split_accuracy(graph, &ensemble(members, spec)?)?);
    Ok(out)
}

/// Paths written by [`run_pipeline`].
#[derive(Clone, Debug, Default)]
pub struct PipelineArtifacts {
    pub paths: Vec<PathBuf>,
    pub comparison: PathBuf,
}

fn record(paths: &mut Vec<PathBuf>, path: PathBuf) -> PathBuf {
    paths.push(path.clone());
    path
}

/// Saves the models and report of one source/arch combination.
pub fn save_gnn_runs(layout: &Layout, source: Provenance, arch: Arch, runs: &GnnRuns) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for (i, m) in runs.models.iter().enumerate() {
        save_gnn(&record(&mut paths, layout.gnn(source, arch, i)), m)?;
    }
    write_text(
        &record(&mut paths, layout.report(&runs.report.label)),
        &runs.report.to_kv(),
    )?;
    Ok(paths)
}

/// Writes `reports/gnn.csv` and the comparison table for `reports`.
pub fn write_comparison(cfg: &RunConfig, layout: &Layout, reports: &[EvalReport]) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    let mut csv = String::from(EvalReport::CSV_HEADER);
    csv.push('\n');
    for r in reports {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    write_text(&record(&mut paths, layout.reports().join("gnn.csv")), &csv)?;
    let table = compare_report(
        reports,
        cfg.eval.strong.as_deref(),
        cfg.eval.mlp_reference.as_deref(),
        cfg.eval.sage_reference.as_deref(),
    )?;
    write_text(&record(&mut paths, layout.comparison()), &table.to_csv())?;
    Ok(paths)
}

/// gen-data → pretrain-mlm → fixed features → finetune → simteg features
/// → GNNs per source and arch → reports → comparison table.
pub fn run_pipeline(cfg: &RunConfig, out: &Path) -> Result<PipelineArtifacts> {
    let layout = Layout::new(out);
    let mut paths = Vec::new();
    let graph = load_graph(cfg)?;
    graph.save(&record(&mut paths, layout.data()))?;
    let p = prepare(cfg, graph)?;
    p.vocab.save(&record(&mut paths, layout.vocab()))?;
    write_text(&record(&mut paths, layout.config()), &cfg.to_toml())?;

    let needs_encoder = cfg.eval.sources.iter().any(|&s| s != Provenance::Bow);
    let base = if needs_encoder {
        let (model, history) = pretrain_encoder(cfg, &p)?;
        save_encoder(&record(&mut paths, layout.encoder(Provenance::Fixed)), &model)?;
        write_text(&record(&mut paths, layout.mlm_history()), &mlm_history_csv(&history))?;
        Some(model)
    } else {
        None
    };

    let mut reports = Vec::new();
    let mut lm_reports = String::from(EvalReport::CSV_HEADER);
    lm_reports.push('\n');
    for &source in &cfg.eval.sources {
        let fm = match source {
            Provenance::Bow => bow_matrix(cfg, &p)?,
            Provenance::Fixed => encoder_matrix(cfg, &p, base.as_ref().expect("encoder built"), source)?,
            Provenance::Simteg | Provenance::SimtegFull => {
                let peft = if source == Provenance::Simteg {
                    Peft::Lora
                } else {
                    Peft::Full
                };
                let run = finetune_encoder(cfg, &p, base.as_ref().expect("encoder built"), peft)?;
                save_encoder(&record(&mut paths, layout.encoder(source)), &run.model)?;
                write_text(
                    &record(&mut paths, layout.stage1_history(source)),
                    &stage1_history_csv(&run.outcome),
                )?;
                lm_reports.push_str(&run.report(cfg, &p.graph, source).csv_row());
                lm_reports.push('\n');
                encoder_matrix(cfg, &p, &run.model, source)?
            }
        };
        cache_write(&record(&mut paths, layout.features(source)), &fm)?;
        for &arch in &cfg.eval.archs {
            let runs = gnn_report(cfg, &p.graph, &fm, arch)?;
            paths.extend(save_gnn_runs(&layout, source, arch, &runs)?);
            reports.push(runs.report);
        }
    }
    write_text(&record(&mut paths, layout.reports().join("stage1.csv")), &lm_reports)?;
    paths.extend(write_comparison(cfg, &layout, &reports)?);
    Ok(PipelineArtifacts {
        paths,
        comparison: layout.comparison(),
    })
}
