use simteg::autodiff::Tape;
use simteg::corpus::{build_vocab, generate_synthetic_tg, SyntheticTgConfig, TextualGraph};
use simteg::gnn::{
    decode_gnn, encode_gnn, evaluate_gnn, load_gnn, predict_nodes, predict_nodes_sampled, save_gnn, train_gnn, Arch,
    GnnConfig, GnnModel, GnnShape, Propagation,
};
use simteg::graph::{build_csr, gcn_normalize, CsrAdjacency};
use simteg::stage1::{bow_features, config_hash, FeatureMatrix, Provenance, Task};
use simteg::{Error, RngState, Tensor};

fn random_graph(rng: &mut RngState) -> CsrAdjacency {
    let n = 2 + rng.below(31);
    let m = rng.below(3 * n);
    let edges: Vec<_> = (0..m).map(|_| (rng.below(n), rng.below(n))).collect();
    build_csr(&edges, n).unwrap()
}

fn random_tensor(rows: usize, cols: usize, rng: &mut RngState) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.normal())
}

fn one_layer(arch: Arch, in_dim: usize, out_dim: usize, rng: &mut RngState) -> GnnModel<f64> {
    let shape = GnnShape {
        arch,
        task: Task::NodeCls,
        in_dim,
        hidden_dim: out_dim,
        num_layers: 1,
        num_classes: 2,
        pair_hidden: 4,
        dropout: 0.5,
    };
    GnnModel::new(shape, rng).unwrap()
}

/// `x·Wᵀ + b` for one row.
fn affine(x: &[f64], w: &Tensor<f64>, b: Option<&Tensor<f64>>) -> Vec<f64> {
    (0..w.rows())
        .map(|o| {
            let dot: f64 = x.iter().zip(w.row(o)).map(|(a, b)| a * b).sum();
            dot + b.map_or(0.0, |b| b.data()[o])
        })
        .collect()
}

/// Per-node loops over neighbor lists, no sparse machinery.
fn dense_layer(arch: Arch, adj: &CsrAdjacency, h: &Tensor<f64>, model: &GnnModel<f64>) -> Vec<Vec<f64>> {
    let layer = &model.layers[0];
    let w = model.params.value(layer.transform.weight);
    let b = model.params.value(layer.transform.bias);
    let n = adj.num_nodes();
    (0..n)
        .map(|i| match arch {
            Arch::Mlp => affine(h.row(i), w, Some(b)),
            Arch::Gcn => {
                let di = (adj.degree(i) + 1) as f64;
                let mut agg: Vec<f64> = h.row(i).iter().map(|v| v / di).collect();
                for &j in adj.neighbors(i) {
                    let dj = (adj.degree(j) + 1) as f64;
                    for (a, v) in agg.iter_mut().zip(h.row(j)) {
                        *a += v / (di * dj).sqrt();
                    }
                }
                affine(&agg, w, Some(b))
            }
            Arch::Sage => {
                let mut out = affine(h.row(i), w, Some(b));
                let nbrs = adj.neighbors(i);
                if !nbrs.is_empty() {
                    let mut mean = vec![0.0; h.cols()];
                    for &j in nbrs {
                        for (a, v) in mean.iter_mut().zip(h.row(j)) {
                            *a += v / nbrs.len() as f64;
                        }
                    }
                    let wn = model.params.value(layer.neigh.unwrap());
                    for (o, v) in out.iter_mut().zip(affine(&mean, wn, None)) {
                        *o += v;
                    }
                }
                out
            }
        })
        .collect()
}

fn layer_output(model: &GnnModel<f64>, adj: &CsrAdjacency, h: &Tensor<f64>) -> Tensor<f64> {
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape);
    let x = tape.constant(h.clone());
    let out = model
        .encode_full(&mut tape, &p, x, &Propagation::new(adj), &mut RngState::new(0), false)
        .unwrap();
    tape.value(out).clone()
}

#[test]
fn layers_match_dense_reference() {
    let mut rng = RngState::new(21);
    for _ in 0..50 {
        let adj = random_graph(&mut rng);
        let h = random_tensor(adj.num_nodes(), 5, &mut rng);
        for arch in [Arch::Mlp, Arch::Gcn, Arch::Sage] {
            let model = one_layer(arch, 5, 3, &mut rng);
            let got = layer_output(&model, &adj, &h);
            let want = dense_layer(arch, &adj, &h, &model);
            for (i, row) in want.iter().enumerate() {
                for (a, b) in got.row(i).iter().zip(row) {
                    assert!((a - b).abs() < 1e-6, "{arch} node {i}: {a} vs {b}");
                }
            }
        }
    }
}

#[test]
fn gcn_normalize_matches_dense_formula() {
    let mut rng = RngState::new(5);
    for _ in 0..50 {
        let adj = random_graph(&mut rng);
        let n = adj.num_nodes();
        let c = gcn_normalize::<f64>(&adj).matrix.to_dense();
        let d: Vec<f64> = (0..n).map(|i| (adj.degree(i) + 1) as f64).collect();
        for i in 0..n {
            for j in 0..n {
                let a = if i == j || adj.has_edge(i, j) { 1.0 } else { 0.0 };
                let want = a / (d[i] * d[j]).sqrt();
                assert!((c.get(i, j) - want).abs() < 1e-7);
            }
        }
    }
}

#[test]
fn hand_computed_cases() {
    // Path 0-1-2 with scalar features and identity-like weights.
    let adj = build_csr(&[(0, 1), (1, 2)], 3).unwrap();
    let h = Tensor::new(3, 1, vec![1.0, 2.0, 4.0]).unwrap();
    let mut model = one_layer(Arch::Sage, 1, 1, &mut RngState::new(0));
    let layer = model.layers[0];
    *model
        .params
        .get_mut(layer.transform.weight)
        .value
        .data_mut()
        .first_mut()
        .unwrap() = 1.0;
    *model
        .params
        .get_mut(layer.transform.bias)
        .value
        .data_mut()
        .first_mut()
        .unwrap() = 0.0;
    *model
        .params
        .get_mut(layer.neigh.unwrap())
        .value
        .data_mut()
        .first_mut()
        .unwrap() = 1.0;
    let out = layer_output(&model, &adj, &h);
    assert_eq!(out.data(), &[1.0 + 2.0, 2.0 + 2.5, 4.0 + 2.0]);

    let mut gcn = one_layer(Arch::Gcn, 1, 1, &mut RngState::new(0));
    let layer = gcn.layers[0];
    *gcn.params
        .get_mut(layer.transform.weight)
        .value
        .data_mut()
        .first_mut()
        .unwrap() = 1.0;
    *gcn.params
        .get_mut(layer.transform.bias)
        .value
        .data_mut()
        .first_mut()
        .unwrap() = 0.0;
    let out = layer_output(&gcn, &adj, &h);
    let s6 = 6f64.sqrt();
    let want = [
        1.0 / 2.0 + 2.0 / s6,
        1.0 / s6 + 2.0 / 3.0 + 4.0 / s6,
        2.0 / s6 + 4.0 / 2.0,
    ];
    for (a, b) in out.data().iter().zip(want) {
        assert!((a - b).abs() < 1e-12);
    }

    // An isolated node keeps only its own term.
    let lone = build_csr(&[], 1).unwrap();
    let out = layer_output(&model, &lone, &Tensor::new(1, 1, vec![3.0]).unwrap());
    assert_eq!(out.data(), &[3.0]);
}

fn features(x: Tensor<f32>) -> FeatureMatrix {
    FeatureMatrix::new(x, Provenance::Bow, [0; 32]).unwrap()
}

fn untrained(arch: Arch, layers: usize, in_dim: usize, seed: u64) -> GnnModel<f32> {
    let shape = GnnShape {
        arch,
        task: Task::NodeCls,
        in_dim,
        hidden_dim: 16,
        num_layers: layers,
        num_classes: 3,
        pair_hidden: 8,
        dropout: 0.5,
    };
    GnnModel::new(shape, &mut RngState::new(seed)).unwrap()
}

#[test]
fn exhaustive_sampling_matches_full_graph() {
    let mut rng = RngState::new(8);
    for arch in [Arch::Mlp, Arch::Gcn, Arch::Sage] {
        for trial in 0..5 {
            let adj = random_graph(&mut rng);
            let n = adj.num_nodes();
            let fm = features(random_tensor(n, 6, &mut rng).cast());
            let model = untrained(arch, 2, 6, trial);
            let nodes: Vec<usize> = (0..n).step_by(2).collect();
            let full = predict_nodes(&model, &adj, &fm, &nodes).unwrap();
            let max_deg = (0..n).map(|v| adj.degree(v)).max().unwrap().max(1);
            let sampled = predict_nodes_sampled(&model, &adj, &fm, &nodes, &[max_deg; 2], &mut rng).unwrap();
            assert!(
                full.max_abs_diff(&sampled) < 1e-5,
                "{arch}: {}",
                full.max_abs_diff(&sampled)
            );
            for r in 0..full.rows() {
                let s: f32 = full.row(r).iter().sum();
                assert!((s - 1.0).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn unknown_node_is_an_index_error() {
    let adj = build_csr(&[(0, 1)], 2).unwrap();
    let fm = features(Tensor::zeros(2, 3));
    let model = untrained(Arch::Sage, 2, 3, 0);
    assert!(matches!(predict_nodes(&model, &adj, &fm, &[2]), Err(Error::Index(_))));
}

fn synthetic(rho: f64, link: bool, seed: u64) -> TextualGraph {
    let cfg = SyntheticTgConfig {
        num_nodes: 400,
        num_classes: 4,
        semantic_correlation: rho,
        link_split: link,
        num_eval_negatives: 20,
        seed,
        ..Default::default()
    };
    generate_synthetic_tg(&cfg).unwrap()
}

fn bow(graph: &TextualGraph, dim: usize) -> FeatureMatrix {
    let train: Vec<&str> = graph.splits.train.iter().map(|&v| graph.texts[v].as_str()).collect();
    let vocab = build_vocab(&train, 1).unwrap();
    FeatureMatrix::new(
        bow_features(&graph.texts, &vocab, dim),
        Provenance::Bow,
        config_hash("bow"),
    )
    .unwrap()
}

fn quick(arch: Arch) -> GnnConfig {
    GnnConfig {
        arch,
        hidden_dim: 64,
        epochs: 40,
        ..Default::default()
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let graph = synthetic(0.8, false, 1);
    let fm = bow(&graph, 32);
    let cfg = GnnConfig {
        learning_rate: 0.0,
        weight_decay: 0.0,
        epochs: 3,
        ..quick(Arch::Sage)
    };
    let (model, out) = train_gnn(&graph, &fm, &cfg, Task::NodeCls, &mut RngState::new(4)).unwrap();
    let (fresh, _) = train_gnn(
        &graph,
        &fm,
        &GnnConfig {
            epochs: 0,
            ..cfg.clone()
        },
        Task::NodeCls,
        &mut RngState::new(4),
    )
    .unwrap();
    assert_eq!(model.params.snapshot(), fresh.params.snapshot());
    let first = out.reports[0].valid_metric;
    assert!(out.reports.iter().all(|r| r.valid_metric == first));
}

#[test]
fn mlp_fits_text_determined_labels() {
    let graph = synthetic(1.0, false, 2);
    let fm = bow(&graph, 256);
    let (model, _) = train_gnn(&graph, &fm, &quick(Arch::Mlp), Task::NodeCls, &mut RngState::new(1)).unwrap();
    let [_, _, test] = evaluate_gnn(&model, &graph, &fm).unwrap();
    assert!(test >= 0.9, "mlp test accuracy {test}");
}

#[test]
fn structure_helps_when_text_is_uninformative() {
    let graph = synthetic(0.0, false, 3);
    let fm = bow(&graph, 64);
    let run = |arch| {
        let (model, _) = train_gnn(&graph, &fm, &quick(arch), Task::NodeCls, &mut RngState::new(1)).unwrap();
        evaluate_gnn(&model, &graph, &fm).unwrap()[2]
    };
    let (sage, mlp) = (run(Arch::Sage), run(Arch::Mlp));
    assert!(sage >= mlp + 0.10, "sage {sage} vs mlp {mlp}");
}

#[test]
fn link_training_only_touches_train_edges() {
    let graph = synthetic(0.9, true, 4);
    let fm = bow(&graph, 64);
    for arch in [Arch::Mlp, Arch::Sage] {
        let cfg = GnnConfig {
            epochs: 3,
            ..quick(arch)
        };
        let (_, out) = train_gnn(&graph, &fm, &cfg, Task::Link, &mut RngState::new(2)).unwrap();
        let splits = graph.edge_splits.as_ref().unwrap();
        assert!(!out.edge_access.is_empty());
        for held in splits.valid.iter().chain(&splits.test) {
            let (u, v) = *held;
            assert!(!out.edge_access.contains(&(u, v)) && !out.edge_access.contains(&(v, u)));
        }
        for e in &out.edge_access {
            assert!(splits.message_graph.has_edge(e.0, e.1));
        }
    }
}

#[test]
fn mini_batch_training_runs() {
    let graph = synthetic(0.8, false, 6);
    let fm = bow(&graph, 32);
    let cfg = GnnConfig {
        full_batch: false,
        epochs: 3,
        batch_size: 64,
        ..quick(Arch::Gcn)
    };
    let (_, out) = train_gnn(&graph, &fm, &cfg, Task::NodeCls, &mut RngState::new(3)).unwrap();
    assert_eq!(out.reports.len(), 3);
    assert!(out.reports.iter().all(|r| r.train_loss.is_finite()));
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let graph = synthetic(0.8, false, 7);
    let fm = bow(&graph, 16);
    let cfg = GnnConfig {
        epochs: 2,
        ..quick(Arch::Sage)
    };
    let (model, _) = train_gnn(&graph, &fm, &cfg, Task::NodeCls, &mut RngState::new(0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.stgg");
    save_gnn(&path, &model).unwrap();
    let back = load_gnn(&path).unwrap();
    assert_eq!(encode_gnn(&back), encode_gnn(&model));
    assert_eq!(back.shape, model.shape);
    assert_eq!(
        evaluate_gnn(&back, &graph, &fm).unwrap(),
        evaluate_gnn(&model, &graph, &fm).unwrap()
    );

    let mut bytes = encode_gnn(&model);
    bytes[0] = b'X';
    assert!(decode_gnn(&bytes).is_err());
    let bytes = encode_gnn(&model);
    assert!(decode_gnn(&bytes[..bytes.len() - 3]).is_err());

    // Features from another source are refused.
    let other = FeatureMatrix::new(fm.x.clone(), Provenance::Simteg, fm.config_hash).unwrap();
    assert!(matches!(
        evaluate_gnn(&model, &graph, &other),
        Err(Error::Compatibility(_))
    ));
    let wide = bow(&graph, 32);
    assert!(matches!(
        evaluate_gnn(&model, &graph, &wide),
        Err(Error::Compatibility(_))
    ));
}
