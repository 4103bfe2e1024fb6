use simteg::autodiff::ParamStore;
use simteg::autodiff::{grad_check, Tape};
use simteg::corpus::{build_vocab, generate_synthetic_tg, SyntheticTgConfig, TokenizedTexts};
use simteg::encoder::{EncoderConfig, EncoderModel, Pooling};
use simteg::eval::link_scores;
use simteg::graph::SplitKind;
use simteg::heads::ClassifierHead;
use simteg::lora::LoraConfig;
use simteg::stage1::{
    bow_features, cache_read, cache_write, cls_split_accuracy, config_hash, embed_nodes, extract_embeddings,
    finetune_cls, finetune_link, prepare_for_finetune, score_pairs, FeatureMatrix, HeadParams, Peft, Provenance,
    Stage1Config,
};
use simteg::{Error, RngState, Tensor};

fn small_encoder(vocab_size: usize, max_len: usize) -> EncoderConfig {
    EncoderConfig {
        d_model: 32,
        num_layers: 1,
        num_heads: 2,
        ffn_dim: 64,
        max_len,
        vocab_size,
        dropout_rate: 0.1,
        pooling: Pooling::Mean,
    }
}

struct Setup {
    graph: simteg::corpus::TextualGraph,
    texts: TokenizedTexts,
    model: EncoderModel<f32>,
}

fn setup(cfg: SyntheticTgConfig, seed: u64) -> Setup {
    let graph = generate_synthetic_tg(&cfg).unwrap();
    let vocab = build_vocab(&graph.texts, 1).unwrap();
    let texts = TokenizedTexts::new(&graph.texts, &vocab, 24).unwrap();
    let model = EncoderModel::new(small_encoder(vocab.len(), 24), &mut RngState::new(seed)).unwrap();
    Setup { graph, texts, model }
}

#[test]
fn separable_graph_is_fit_within_five_epochs() {
    let cfg = SyntheticTgConfig {
        num_nodes: 300,
        num_classes: 3,
        semantic_correlation: 1.0,
        words_per_doc: 20,
        seed: 4,
        ..Default::default()
    };
    let Setup {
        graph,
        texts,
        mut model,
    } = setup(cfg, 1);
    let mut rng = RngState::new(2);
    prepare_for_finetune(&mut model, Peft::Full, &LoraConfig::default(), &mut rng).unwrap();
    let mut head = HeadParams::classifier(32, 3, 0.2, &mut rng);
    let sc = Stage1Config {
        epochs: 5,
        ..Default::default()
    };
    let out = finetune_cls(&graph, &texts, &mut model, &mut head, &sc, &mut rng).unwrap();
    assert_eq!(out.reports.len(), 5);
    let [train, ..] = cls_split_accuracy(&graph, &texts, &model, &head, 64).unwrap();
    assert!(train >= 0.95, "train accuracy {train}: {:?}", out.reports);
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let cfg = SyntheticTgConfig {
        num_nodes: 120,
        num_classes: 3,
        seed: 5,
        ..Default::default()
    };
    let Setup {
        graph,
        texts,
        mut model,
    } = setup(cfg, 3);
    let mut rng = RngState::new(1);
    prepare_for_finetune(&mut model, Peft::Full, &LoraConfig::default(), &mut rng).unwrap();
    let mut head = HeadParams::classifier(32, 3, 0.2, &mut rng);
    let before = (model.params.snapshot(), head.store.snapshot());
    let init_acc = cls_split_accuracy(&graph, &texts, &model, &head, 32).unwrap();
    let sc = Stage1Config {
        learning_rate: 0.0,
        weight_decay: 0.0,
        epochs: 2,
        ..Default::default()
    };
    let out = finetune_cls(&graph, &texts, &mut model, &mut head, &sc, &mut rng).unwrap();
    assert_eq!(model.params.snapshot(), before.0);
    assert_eq!(head.store.snapshot(), before.1);
    for r in &out.reports {
        assert_eq!(r.train_metric, init_acc[0]);
        assert_eq!(r.valid_metric, init_acc[1]);
    }
}

#[test]
fn unlabeled_train_node_is_a_data_error() {
    let cfg = SyntheticTgConfig {
        num_nodes: 60,
        seed: 2,
        ..Default::default()
    };
    let Setup {
        mut graph,
        texts,
        mut model,
    } = setup(cfg, 1);
    graph.labels.as_mut().unwrap().truncate(10);
    let mut rng = RngState::new(1);
    let mut head = HeadParams::classifier(32, 4, 0.2, &mut rng);
    let err = finetune_cls(
        &graph,
        &texts,
        &mut model,
        &mut head,
        &Stage1Config::default(),
        &mut rng,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Data(_)), "{err}");
}

fn link_setup() -> Setup {
    let cfg = SyntheticTgConfig {
        num_nodes: 200,
        intra_edge_prob: 0.1,
        inter_edge_prob: 0.01,
        link_split: true,
        num_eval_negatives: 20,
        seed: 8,
        ..Default::default()
    };
    setup(cfg, 6)
}

#[test]
fn untrained_link_model_scores_at_chance() {
    let Setup {
        graph,
        texts,
        mut model,
    } = link_setup();
    model.set_training(false);
    let head = HeadParams::pair(32, 16, 0.2, &mut RngState::new(3));
    let nodes: Vec<usize> = (0..graph.num_nodes()).collect();
    let emb = embed_nodes(&model, &texts, &nodes, 64).unwrap();
    let splits = graph.edge_splits.as_ref().unwrap();
    let s = link_scores(splits, SplitKind::Valid, |pairs| score_pairs(&head, &emb, pairs)).unwrap();
    assert!((s.auc - 0.5).abs() <= 0.1, "untrained AUC {}", s.auc);
}

#[test]
fn link_finetuning_requires_negatives() {
    let Setup {
        graph,
        texts,
        mut model,
    } = link_setup();
    let mut head = HeadParams::pair(32, 16, 0.2, &mut RngState::new(3));
    let sc = Stage1Config {
        link_negatives: 0,
        ..Default::default()
    };
    let err = finetune_link(&graph, &texts, &mut model, &mut head, &sc, &mut RngState::new(1)).unwrap_err();
    assert!(matches!(err, Error::Parameter(_)), "{err}");
}

#[test]
fn link_finetuning_runs_and_reports_mrr() {
    let Setup {
        graph,
        texts,
        mut model,
    } = link_setup();
    let mut rng = RngState::new(5);
    prepare_for_finetune(&mut model, Peft::Lora, &LoraConfig::default(), &mut rng).unwrap();
    let mut head = HeadParams::pair(32, 16, 0.2, &mut rng);
    let sc = Stage1Config {
        epochs: 2,
        max_steps_per_epoch: 5,
        ..Default::default()
    };
    let out = finetune_link(&graph, &texts, &mut model, &mut head, &sc, &mut rng).unwrap();
    assert_eq!(out.reports.len(), 2);
    for r in &out.reports {
        assert!(r.train_loss.is_finite());
        assert!((0.0..=1.0).contains(&r.valid_metric));
    }
}

#[test]
fn bow_matches_hand_computation() {
    let texts = ["a a b", "", "a a b"];
    let vocab = build_vocab(&["a a b"], 1).unwrap();
    let x = bow_features(&texts, &vocab, 2);
    let s5 = 5f32.sqrt();
    assert_eq!(x.row(0), &[2.0 / s5, 1.0 / s5]);
    assert_eq!(x.row(1), &[0.0, 0.0]);
    assert_eq!(x.row(0), x.row(2));
}

fn sample_matrix(rows: usize, cols: usize) -> FeatureMatrix {
    let mut rng = RngState::new(11);
    let x = Tensor::from_fn(rows, cols, |_, _| rng.normal() as f32);
    FeatureMatrix::new(x, Provenance::Simteg, config_hash("test")).unwrap()
}

#[test]
fn cache_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.stgx");
    let fm = sample_matrix(7, 5);
    cache_write(&path, &fm).unwrap();
    let back = cache_read(&path).unwrap();
    assert_eq!(back.x.data(), fm.x.data());
    assert_eq!(back.provenance, fm.provenance);
    assert_eq!(back.config_hash, fm.config_hash);
    assert_eq!(back.encode(), fm.encode());
}

#[test]
fn corrupted_cache_is_rejected() {
    let fm = sample_matrix(3, 2);
    let mut bytes = fm.encode();
    bytes[1] ^= 0xff;
    assert!(matches!(FeatureMatrix::decode(&bytes), Err(Error::Cache(_))));
    let mut truncated = fm.encode();
    truncated.pop();
    assert!(matches!(FeatureMatrix::decode(&truncated), Err(Error::Cache(_))));
    let mut nan = fm.encode();
    let n = nan.len();
    nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(FeatureMatrix::decode(&nan), Err(Error::Cache(_))));
}

#[test]
fn empty_cache_is_valid() {
    let fm = FeatureMatrix::new(Tensor::zeros(0, 4), Provenance::Bow, config_hash("")).unwrap();
    let back = FeatureMatrix::decode(&fm.encode()).unwrap();
    assert_eq!(back.num_nodes(), 0);
    assert_eq!(back.dim(), 4);
}

#[test]
fn extraction_is_deterministic_and_batch_independent() {
    let cfg = SyntheticTgConfig {
        num_nodes: 40,
        seed: 9,
        ..Default::default()
    };
    let Setup { texts, mut model, .. } = setup(cfg, 2);
    model.wrap_lora(&LoraConfig::default(), &mut RngState::new(1)).unwrap();
    let a = extract_embeddings(&model, &texts, 7).unwrap();
    let b = extract_embeddings(&model, &texts, 7).unwrap();
    assert_eq!(a.data(), b.data());
    assert_eq!(a.shape(), (40, 32));
    let merged = {
        let mut m = model.clone();
        m.set_training(false);
        m.merge_lora().unwrap()
    };
    for i in [0, 13, 39] {
        let single = embed_nodes(&merged, &texts, &[i], 1).unwrap();
        let diff = single
            .row(0)
            .iter()
            .zip(a.row(i))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f32, f32::max);
        assert!(diff < 1e-5, "row {i} differs by {diff}");
    }
}

#[test]
fn encoder_plus_classifier_gradcheck() {
    let cfg = SyntheticTgConfig {
        num_nodes: 12,
        num_classes: 3,
        seed: 3,
        ..Default::default()
    };
    let graph = generate_synthetic_tg(&cfg).unwrap();
    let vocab = build_vocab(&graph.texts, 1).unwrap();
    let texts = TokenizedTexts::new(&graph.texts, &vocab, 6).unwrap();
    let enc_cfg = EncoderConfig {
        d_model: 8,
        num_layers: 1,
        num_heads: 2,
        ffn_dim: 12,
        max_len: 6,
        vocab_size: vocab.len(),
        dropout_rate: 0.1,
        pooling: Pooling::Mean,
    };
    let batch = texts.batch(&[0, 1, 2, 3]).unwrap();
    let labels: Vec<usize> = batch
        .node_ids
        .iter()
        .map(|&v| graph.labels.as_ref().unwrap()[v])
        .collect();
    for seed in 0..3 {
        let mut rng = RngState::new(seed);
        let mut model = EncoderModel::<f64>::new(enc_cfg.clone(), &mut rng).unwrap();
        model.set_training(true);
        let mut head_store = ParamStore::<f64>::new();
        let head = ClassifierHead::new(&mut head_store, "head", 8, 3, 0.3, &mut rng);
        let ne = model.params.len();
        let mut point = model.params.snapshot();
        point.extend(head_store.snapshot());
        let report = grad_check(
            |tape: &mut Tape<f64>, vars| {
                let mut r = RngState::new(seed + 100);
                let e = model.embed(tape, &vars[..ne], &batch, &mut r)?;
                let logits = head.forward(tape, &vars[ne..], e, &mut r, true)?;
                tape.cross_entropy_smoothed(logits, &labels, 0.1)
            },
            &point,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "seed {seed}: {report:?}");
    }
}
