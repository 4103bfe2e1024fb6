use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use simteg::config::RunConfig;
use simteg::corpus::TextualGraph;
use simteg::encoder::{load_encoder, save_encoder};
use simteg::eval::{project_2d, scatter_ratio, EnsembleSpec, EvalReport, RunMetrics};
use simteg::fsio::write_text;
use simteg::gnn::{evaluate_gnn, load_gnn, train_gnn};
use simteg::hpo::{apply_gnn, apply_lm, run_search, trials_csv, SearchSpace, SearchStage};
use simteg::pipeline::{
    bow_matrix, class_probabilities, encoder_matrix, ensemble_accuracy, finetune_encoder, gnn_report, gnn_stream,
    load_graph, mlm_history_csv, open_prepared, peft_provenance, prepare, pretrain_encoder, run_pipeline,
    save_gnn_runs, stage1_history_csv, write_comparison, Layout,
};
use simteg::stage1::{cache_read, cache_write, hex, Provenance, Task};

use crate::{Command, Global};

fn load_config(global: &Global, extra: &[String]) -> Result<RunConfig> {
    let mut overrides = global.overrides.clone();
    overrides.extend_from_slice(extra);
    Ok(RunConfig::load(global.config.as_deref(), &overrides)?)
}

fn task_override(task: Option<Task>) -> Vec<String> {
    task.map(|t| vec![format!("task=\"{}\"", t.name())]).unwrap_or_default()
}

/// Feature source from an `encoder-<source>.stgm` file name.
fn source_from_checkpoint(path: &Path) -> Option<Provenance> {
    path.file_stem()?.to_str()?.strip_prefix("encoder-")?.parse().ok()
}

/// Runs one subcommand; returns the artifact paths it wrote.
pub fn run(global: &Global, command: Command) -> Result<Vec<PathBuf>> {
    let layout = Layout::new(&global.out);
    match command {
        Command::GenData => {
            let cfg = load_config(global, &[])?;
            let p = prepare(&cfg, load_graph(&cfg)?)?;
            p.graph.save(&layout.data())?;
            p.vocab.save(&layout.vocab())?;
            write_text(&layout.config(), &cfg.to_toml())?;
            Ok(vec![layout.data(), layout.vocab(), layout.config()])
        }
        Command::PretrainMlm => {
            let cfg = load_config(global, &[])?;
            let p = open_prepared(&cfg, &layout)?;
            if !layout.vocab().exists() {
                p.vocab.save(&layout.vocab())?;
            }
            let (model, history) = pretrain_encoder(&cfg, &p)?;
            save_encoder(&layout.encoder(Provenance::Fixed), &model)?;
            write_text(&layout.mlm_history(), &mlm_history_csv(&history))?;
            Ok(vec![layout.encoder(Provenance::Fixed), layout.mlm_history()])
        }
        Command::Finetune { task, peft } => {
            let cfg = load_config(global, &task_override(task))?;
            let base = load_encoder(&layout.encoder(Provenance::Fixed))?;
            let p = open_prepared(&cfg, &layout)?;
            let source = peft_provenance(peft);
            let run = finetune_encoder(&cfg, &p, &base, peft)?;
            save_encoder(&layout.encoder(source), &run.model)?;
            write_text(&layout.stage1_history(source), &stage1_history_csv(&run.outcome))?;
            write_text(&layout.lm_report(source), &run.report(&cfg, &p.graph, source).to_kv())?;
            eprintln!(
                "{source}: train {:.4} valid {:.4} test {:.4} ({})",
                run.metrics.train,
                run.metrics.valid,
                run.metrics.test,
                cfg.task.metric()
            );
            Ok(vec![
                layout.encoder(source),
                layout.stage1_history(source),
                layout.lm_report(source),
            ])
        }
        Command::Embed {
            ckpt,
            source,
            features_out,
        } => {
            let cfg = load_config(global, &[])?;
            let model = load_encoder(&ckpt)?;
            let source = source
                .or_else(|| source_from_checkpoint(&ckpt))
                .context("cannot infer the feature source from the checkpoint name; pass --source")?;
            if source == Provenance::Bow {
                bail!("bag-of-words features come from the `bow` subcommand");
            }
            let p = open_prepared(&cfg, &layout)?;
            let fm = encoder_matrix(&cfg, &p, &model, source)?;
            let path = features_out.unwrap_or_else(|| layout.features(source));
            cache_write(&path, &fm)?;
            Ok(vec![path])
        }
        Command::Bow => {
            let cfg = load_config(global, &[])?;
            let p = open_prepared(&cfg, &layout)?;
            cache_write(&layout.features(Provenance::Bow), &bow_matrix(&cfg, &p)?)?;
            Ok(vec![layout.features(Provenance::Bow)])
        }
        Command::TrainGnn { arch, features, task } => {
            let cfg = load_config(global, &task_override(task))?;
            let fm = cache_read(&features)?;
            let graph = TextualGraph::load(&layout.data())?;
            let arch = arch.unwrap_or(cfg.gnn.arch);
            let runs = gnn_report(&cfg, &graph, &fm, arch)?;
            eprintln!(
                "{}: test {} {:.4}",
                runs.report.label,
                runs.report.metric,
                runs.report.mean(simteg::eval::Split::Test)
            );
            Ok(save_gnn_runs(&layout, fm.provenance, arch, &runs)?)
        }
        Command::Evaluate {
            reports,
            model,
            features,
        } => {
            let cfg = load_config(global, &[])?;
            if let (Some(model_path), Some(features)) = (model, features) {
                return evaluate_checkpoint(&cfg, &layout, &model_path, &features);
            }
            let paths = if reports.is_empty() {
                default_reports(&layout)?
            } else {
                reports
            };
            if paths.is_empty() {
                return Err(simteg::Error::Dependency(layout.reports()).into());
            }
            let reports = paths
                .iter()
                .map(|p| {
                    let text = simteg::fsio::read_text(p)?;
                    EvalReport::from_kv(&text).with_context(|| format!("reading {}", p.display()))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(write_comparison(&cfg, &layout, &reports)?)
        }
        Command::Ensemble {
            weights,
            models,
            features,
        } => {
            let cfg = load_config(global, &[])?;
            if models.len() != features.len() {
                bail!("{} models but {} feature caches", models.len(), features.len());
            }
            let spec = if weights.is_empty() {
                EnsembleSpec::uniform(models.len())?
            } else {
                EnsembleSpec::weighted(&weights)?
            };
            if cfg.task != Task::NodeCls {
                bail!("ensembling combines class probabilities; it needs the node classification task");
            }
            let graph = TextualGraph::load(&layout.data())?;
            let mut members = Vec::with_capacity(models.len());
            for (m, f) in models.iter().zip(&features) {
                members.push(class_probabilities(&load_gnn(m)?, &graph, &cache_read(f)?)?);
            }
            let acc = ensemble_accuracy(&graph, &members, &spec)?;
            let mut csv = String::from("member,weight,train,valid,test\n");
            for (i, [tr, va, te]) in acc.iter().enumerate() {
                let (name, w) = match models.get(i) {
                    Some(m) => (m.display().to_string(), spec.weights()[i].to_string()),
                    None => ("ensemble".to_string(), String::new()),
                };
                writeln!(csv, "{name},{w},{tr:.6},{va:.6},{te:.6}").expect("string write");
            }
            let path = layout.reports().join("ensemble.csv");
            write_text(&path, &csv)?;
            Ok(vec![path])
        }
        Command::Search {
            stage,
            trials,
            features,
        } => {
            let cfg = load_config(global, &[])?;
            search(&cfg, &layout, stage, trials, features)
        }
        Command::ProjectFeatures { features, csv_out } => {
            let cfg = load_config(global, &[])?;
            let fm = cache_read(&features)?;
            let graph = TextualGraph::load(&layout.data())?;
            let labels = graph.labels.as_deref().context("projection needs node labels")?;
            let mut rng = cfg.stream("eval").substream("projection");
            let proj = project_2d(&fm.x, labels, cfg.eval.project_sample_per_class, &mut rng)?;
            eprintln!("{}: scatter ratio {:.4}", fm.provenance, scatter_ratio(&fm.x, labels)?);
            let path = csv_out.unwrap_or_else(|| layout.root.join(format!("projection-{}.csv", fm.provenance)));
            write_text(&path, &proj.to_csv())?;
            Ok(vec![path])
        }
        Command::Pipeline { rho, seed } => {
            let mut extra = Vec::new();
            if let Some(r) = rho {
                extra.push(format!("data.synthetic.semantic_correlation={r}"));
            }
            if let Some(s) = seed {
                extra.push(format!("seed={s}"));
            }
            let cfg = load_config(global, &extra)?;
            Ok(run_pipeline(&cfg, &layout.root)?.paths)
        }
    }
}

/// GNN reports under `reports/`, sorted by name.
fn default_reports(layout: &Layout) -> Result<Vec<PathBuf>> {
    let dir = layout.reports();
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(&dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    out.sort();
    Ok(out)
}

fn evaluate_checkpoint(cfg: &RunConfig, layout: &Layout, model_path: &Path, features: &Path) -> Result<Vec<PathBuf>> {
    let model = load_gnn(model_path)?;
    let fm = cache_read(features)?;
    let graph = TextualGraph::load(&layout.data())?;
    let [train, valid, test] = evaluate_gnn(&model, &graph, &fm)?;
    let stem = model_path
        .file_stem()
        .map_or("model".into(), |s| s.to_string_lossy().into_owned());
    let report = EvalReport {
        label: format!("eval-{stem}"),
        task: model.shape.task.name().to_string(),
        metric: model.shape.task.metric().to_string(),
        config_hash: hex(&fm.config_hash),
        num_eval_negatives: graph.edge_splits.as_ref().map_or(0, |s| s.num_eval_negatives()),
        runs: vec![RunMetrics {
            seed: cfg.seed,
            train,
            valid,
            test,
            extra: Default::default(),
        }],
    };
    eprintln!("{}: train {train:.4} valid {valid:.4} test {test:.4}", report.label);
    let path = layout.root.join(format!("{}.txt", report.label));
    write_text(&path, &report.to_kv())?;
    Ok(vec![path])
}

fn search(
    cfg: &RunConfig,
    layout: &Layout,
    stage: SearchStage,
    trials: Option<usize>,
    features: Option<PathBuf>,
) -> Result<Vec<PathBuf>> {
    let ranges = match stage {
        SearchStage::Lm => &cfg.hpo.lm_ranges,
        SearchStage::Gnn => &cfg.hpo.gnn_ranges,
    };
    let space = SearchSpace::for_stage(stage, cfg.task).with_ranges(ranges)?;
    let result = match stage {
        SearchStage::Lm => {
            let budget = trials.unwrap_or(cfg.hpo.lm_trials);
            let base = load_encoder(&layout.encoder(Provenance::Fixed))?;
            let p = open_prepared(cfg, layout)?;
            run_search(
                &space,
                budget,
                |id, trial| {
                    let mut c = cfg.clone();
                    apply_lm(trial, &mut c.stage1, &mut c.lora);
                    let run = finetune_encoder(&c, &p, &base, c.stage1.peft)?;
                    eprintln!("trial {id}: valid {:.4}", run.metrics.valid);
                    Ok(run.metrics.valid)
                },
                cfg.seed,
            )?
        }
        SearchStage::Gnn => {
            let budget = trials.unwrap_or(cfg.hpo.gnn_trials);
            let path = features.unwrap_or_else(|| layout.features(Provenance::Simteg));
            let fm = cache_read(&path)?;
            let graph = TextualGraph::load(&layout.data())?;
            run_search(
                &space,
                budget,
                |id, trial| {
                    let mut g = cfg.gnn.clone();
                    apply_gnn(trial, &mut g);
                    let mut rng = gnn_stream(cfg, g.arch, id);
                    let (model, _) = train_gnn(&graph, &fm, &g, cfg.task, &mut rng)?;
                    let valid = evaluate_gnn(&model, &graph, &fm)?[1];
                    eprintln!("trial {id}: valid {valid:.4}");
                    Ok(valid)
                },
                cfg.seed,
            )?
        }
    };
    let name = match stage {
        SearchStage::Lm => "lm",
        SearchStage::Gnn => "gnn",
    };
    let csv = layout.root.join(format!("search-{name}.csv"));
    write_text(&csv, &trials_csv(&result))?;
    let mut best = format!(
        "# best trial {} with validation metric {:?}\n",
        result.best.id, result.best.objective
    );
    for (k, v) in &result.best.config {
        writeln!(best, "{k} = {v}").expect("string write");
    }
    let best_path = layout.root.join(format!("search-{name}-best.txt"));
    write_text(&best_path, &best)?;
    Ok(vec![csv, best_path])
}
