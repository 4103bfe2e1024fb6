use std::collections::{BTreeSet, HashMap};

use simteg::corpus::{
    batch_texts, build_vocab, generate_synthetic_tg, load_tsv, load_tsv_for, tokenize, words, write_tsv,
    SyntheticTgConfig, TextualGraph, TokenizedTexts, CLS, PAD, UNK,
};
use simteg::{Error, RngState};

/// Multinomial naive Bayes with add-one smoothing, trained on the train
/// split and scored on the test split.
fn unigram_bayes_accuracy(g: &TextualGraph) -> f64 {
    let labels = g.labels.as_ref().unwrap();
    let k = g.num_classes;
    let mut counts: Vec<HashMap<String, f64>> = vec![HashMap::new(); k];
    let mut totals = vec![0.0; k];
    let mut priors = vec![0.0; k];
    let mut vocab = BTreeSet::new();
    for &v in &g.splits.train {
        priors[labels[v]] += 1.0;
        for w in words(&g.texts[v]) {
            *counts[labels[v]].entry(w.clone()).or_default() += 1.0;
            totals[labels[v]] += 1.0;
            vocab.insert(w);
        }
    }
    let size = vocab.len() as f64;
    let correct = g
        .splits
        .test
        .iter()
        .filter(|&&v| {
            let score = |c: usize| {
                let mut s = (priors[c] / g.splits.train.len() as f64).ln();
                for w in words(&g.texts[v]) {
                    s += ((counts[c].get(&w).copied().unwrap_or(0.0) + 1.0) / (totals[c] + size)).ln();
                }
                s
            };
            let best = (0..k).max_by(|&a, &b| score(a).total_cmp(&score(b))).unwrap();
            best == labels[v]
        })
        .count();
    correct as f64 / g.splits.test.len() as f64
}

#[test]
fn vocab_examples() {
    let v = build_vocab(&["a b", "a"], 1).unwrap();
    assert_eq!(v.words(), &["a", "b"]);
    let v = build_vocab(&["a b", "a"], 2).unwrap();
    assert_eq!(v.words(), &["a"]);
    assert_eq!(v.len(), 5);
}

#[test]
fn vocab_respects_generator_bound() {
    let cfg = SyntheticTgConfig {
        seed: 4,
        ..Default::default()
    };
    let g = generate_synthetic_tg(&cfg).unwrap();
    let v = build_vocab(&g.texts, 1).unwrap();
    assert!(v.len() <= cfg.vocab_bound());
}

#[test]
fn tokenize_examples() {
    let v = build_vocab(&["a b"], 1).unwrap();
    let (ids, mask) = tokenize("", &v, 4).unwrap();
    assert_eq!(ids, vec![CLS, PAD, PAD, PAD]);
    assert_eq!(mask, vec![true, false, false, false]);
    let (ids, mask) = tokenize("a b", &v, 4).unwrap();
    assert_eq!(ids, vec![CLS, v.id("a"), v.id("b"), PAD]);
    assert_eq!(mask, vec![true, true, true, false]);
    let long = vec!["a"; 100].join(" ");
    let (ids, mask) = tokenize(&long, &v, 16).unwrap();
    assert_eq!(ids.len(), 16);
    assert!(mask.iter().all(|&m| m));
    let (ids, _) = tokenize("b zz a", &v, 3).unwrap();
    assert_eq!(ids, vec![CLS, v.id("b"), UNK]);
    assert_eq!(tokenize("a b", &v, 4).unwrap(), tokenize("a b", &v, 4).unwrap());
}

#[test]
fn tsv_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.tsv");
    std::fs::write(&path, "0\ttitle: x; abstract: y\n").unwrap();
    assert_eq!(load_tsv(&path).unwrap(), vec!["title: x; abstract: y".to_string()]);

    std::fs::write(&path, "0\ta\n2\tc\n").unwrap();
    assert!(matches!(load_tsv_for(&path, 3), Err(Error::MissingId(1))));
    std::fs::write(&path, "0\ta\n1\tb\n").unwrap();
    assert!(matches!(load_tsv_for(&path, 3), Err(Error::MissingId(2))));
    std::fs::write(&path, "0\ta\n0\tb\n").unwrap();
    assert!(matches!(load_tsv(&path), Err(Error::Duplicate(0))));
    std::fs::write(&path, "0\ta\nbroken\n").unwrap();
    assert!(matches!(load_tsv(&path), Err(Error::Parse { line: 2, .. })));

    let g = generate_synthetic_tg(&SyntheticTgConfig {
        num_nodes: 100,
        ..Default::default()
    })
    .unwrap();
    write_tsv(&path, &g.texts).unwrap();
    assert_eq!(load_tsv_for(&path, 100).unwrap(), g.texts);
}

#[test]
fn graph_directory_round_trip() {
    let g = generate_synthetic_tg(&SyntheticTgConfig {
        num_nodes: 120,
        link_split: true,
        num_eval_negatives: 10,
        seed: 9,
        ..Default::default()
    })
    .unwrap();
    g.validate().unwrap();
    let dir = tempfile::tempdir().unwrap();
    g.save(dir.path()).unwrap();
    assert_eq!(TextualGraph::load(dir.path()).unwrap(), g);
}

#[test]
fn fully_correlated_text_is_separable() {
    let g = generate_synthetic_tg(&SyntheticTgConfig {
        num_classes: 2,
        semantic_correlation: 1.0,
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    assert_eq!(unigram_bayes_accuracy(&g), 1.0);
}

#[test]
fn uncorrelated_text_is_chance() {
    let g = generate_synthetic_tg(&SyntheticTgConfig {
        num_classes: 2,
        semantic_correlation: 0.0,
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    assert!((unigram_bayes_accuracy(&g) - 0.5).abs() <= 0.05);
}

#[test]
fn semantic_knob_is_monotone() {
    let mean_acc = |rho: f64| {
        (1..=5)
            .map(|seed| {
                unigram_bayes_accuracy(
                    &generate_synthetic_tg(&SyntheticTgConfig {
                        semantic_correlation: rho,
                        words_per_doc: 5,
                        seed,
                        ..Default::default()
                    })
                    .unwrap(),
                )
            })
            .sum::<f64>()
            / 5.0
    };
    let (hi, mid, lo) = (mean_acc(0.9), mean_acc(0.3), mean_acc(0.0));
    assert!(hi > mid && mid > lo, "{hi} {mid} {lo}");
}

#[test]
fn topic_documents_stay_in_one_block() {
    let cfg = SyntheticTgConfig {
        num_nodes: 200,
        semantic_correlation: 0.0,
        num_topics: 5,
        seed: 3,
        ..Default::default()
    };
    let g = generate_synthetic_tg(&cfg).unwrap();
    let base = cfg.class_vocab_size * cfg.num_classes;
    let size = cfg.shared_vocab_size / cfg.num_topics;
    let mut used = BTreeSet::new();
    for text in &g.texts {
        let blocks: BTreeSet<usize> = words(text)
            .map(|w| (w[1..].parse::<usize>().unwrap() - base) / size)
            .collect();
        assert_eq!(blocks.len(), 1, "{text}");
        used.extend(blocks);
    }
    assert_eq!(used, (0..5).collect());

    let zero = SyntheticTgConfig {
        num_topics: 0,
        ..cfg.clone()
    };
    let one = SyntheticTgConfig { num_topics: 1, ..cfg };
    assert_eq!(
        generate_synthetic_tg(&zero).unwrap().texts,
        generate_synthetic_tg(&one).unwrap().texts
    );
}

#[test]
fn block_model_mean_degree() {
    let cfg = SyntheticTgConfig {
        seed: 2,
        ..Default::default()
    };
    let g = generate_synthetic_tg(&cfg).unwrap();
    let expect = cfg.expected_degree();
    assert!((g.adj.mean_degree() - expect).abs() <= 0.15 * expect);
    assert!(g.adj.is_symmetric());
    g.adj.validate().unwrap();
}

#[test]
fn splits_partition_nodes() {
    let g = generate_synthetic_tg(&SyntheticTgConfig {
        num_nodes: 200,
        ..Default::default()
    })
    .unwrap();
    let all: BTreeSet<usize> = g.splits.all().collect();
    assert_eq!(all.len(), 200);
    assert_eq!(
        (g.splits.train.len(), g.splits.valid.len(), g.splits.test.len()),
        (120, 40, 40)
    );
}

#[test]
fn degenerate_generator_config_rejected() {
    let cfg = SyntheticTgConfig {
        intra_edge_prob: 0.0,
        inter_edge_prob: 0.0,
        ..Default::default()
    };
    assert!(matches!(generate_synthetic_tg(&cfg), Err(Error::Generation(_))));
    let cfg = SyntheticTgConfig {
        num_classes: 1,
        ..Default::default()
    };
    assert!(generate_synthetic_tg(&cfg).is_err());
}

#[test]
fn batching_covers_each_node_once() {
    let texts: Vec<String> = (0..5).map(|i| format!("x{i} y")).collect();
    let vocab = build_vocab(&texts, 1).unwrap();
    let ids: Vec<usize> = (0..5).collect();
    let sizes: Vec<usize> = batch_texts(&texts, &ids, &vocab, 8, 2, None)
        .unwrap()
        .iter()
        .map(|b| b.size())
        .collect();
    assert_eq!(sizes, vec![2, 2, 1]);

    let tok = TokenizedTexts::new(&texts, &vocab, 8).unwrap();
    let epoch = |seed| -> Vec<_> { tok.epoch(&ids, 2, Some(&mut RngState::new(seed))).unwrap().collect() };
    assert_eq!(epoch(3), epoch(3));
    let mut seen: Vec<usize> = epoch(3).iter().flat_map(|b| b.node_ids.clone()).collect();
    seen.sort_unstable();
    assert_eq!(seen, ids);
    for b in epoch(4) {
        for i in 0..b.size() {
            let (row, mask) = b.row(i);
            assert!(mask[0]);
            let valid = mask.iter().take_while(|&&m| m).count();
            assert!(mask[valid..].iter().all(|&m| !m));
            assert!(row.iter().all(|&t| t < vocab.len()));
        }
    }
    assert!(matches!(tok.epoch(&[], 2, None), Err(Error::Iteration(_))));
}
