use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsio::{numbered_lines, parse_field, read_text, write_text};
use crate::graph::{read_edge_list, read_split_file, write_edge_list, write_split_file, CsrAdjacency, EdgeSplits};

/// Disjoint train/valid/test node sets.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NodeSplits {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl NodeSplits {
    pub fn all(&self) -> impl Iterator<Item = usize> + '_ {
        self.train.iter().chain(&self.valid).chain(&self.test).copied()
    }

    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        let mut seen = BTreeSet::new();
        for v in self.all() {
            if v >= num_nodes {
                return Err(Error::Index(format!("split node {v} out of range")));
            }
            if !seen.insert(v) {
                return Err(Error::Data(format!("node {v} appears in two splits")));
            }
        }
        Ok(())
    }
}

/// Graph whose nodes carry text documents.
#[derive(Clone, Debug, PartialEq)]
pub struct TextualGraph {
    pub adj: CsrAdjacency,
    pub texts: Vec<String>,
    pub labels: Option<Vec<usize>>,
    pub num_classes: usize,
    pub splits: NodeSplits,
    pub edge_splits: Option<EdgeSplits>,
}

const TEXTS: &str = "texts.tsv";
const EDGES: &str = "edges.tsv";
const LABELS: &str = "labels.tsv";
const SPLITS: &str = "splits.tsv";
const EDGE_SPLITS: &str = "edge_splits.txt";

impl TextualGraph {
    pub fn num_nodes(&self) -> usize {
        self.adj.num_nodes()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        self.adj.validate()?;
        if self.texts.len() != n {
            return Err(Error::Data(format!("{} texts for {n} nodes", self.texts.len())));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(Error::Data(format!("{} labels for {n} nodes", labels.len())));
            }
            if let Some(&bad) = labels.iter().find(|&&y| y >= self.num_classes) {
                return Err(Error::Data(format!("label {bad} outside {} classes", self.num_classes)));
            }
        }
        self.splits.validate(n)?;
        if let Some(es) = &self.edge_splits {
            let mut seen = BTreeSet::new();
            for &(u, v) in es.train.iter().chain(&es.valid).chain(&es.test) {
                if !self.adj.has_edge(u, v) {
                    return Err(Error::Data(format!("split edge ({u}, {v}) not in graph")));
                }
                if !seen.insert((u.min(v), u.max(v))) {
                    return Err(Error::Data(format!("edge ({u}, {v}) in two splits")));
                }
            }
        }
        Ok(())
    }

    pub fn label(&self, node: usize) -> Result<usize> {
        self.labels
            .as_ref()
            .and_then(|l| l.get(node).copied())
            .ok_or_else(|| Error::Data(format!("node {node} has no label")))
    }

    /// Texts, edges, labels, node splits and (if present) edge splits
    /// under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_tsv(&dir.join(TEXTS), &self.texts)?;
        write_edge_list(&dir.join(EDGES), &self.adj.edges())?;
        if let Some(labels) = &self.labels {
            write_labels(&dir.join(LABELS), labels)?;
        }
        let mut out = String::new();
        for (name, ids) in [
            ("train", &self.splits.train),
            ("valid", &self.splits.valid),
            ("test", &self.splits.test),
        ] {
            for v in ids {
                writeln!(out, "{v}\t{name}").expect("string write");
            }
        }
        write_text(&dir.join(SPLITS), &out)?;
        if let Some(es) = &self.edge_splits {
            write_split_file(&dir.join(EDGE_SPLITS), es)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let texts_by_id = load_tsv(&dir.join(TEXTS))?;
        let n = texts_by_id.len();
        let edges = read_edge_list(&dir.join(EDGES))?;
        let adj = crate::graph::build_csr(&edges, n)?;
        let labels_path = dir.join(LABELS);
        let labels = if labels_path.exists() {
            Some(read_labels(&labels_path, n)?)
        } else {
            None
        };
        let num_classes = labels.as_ref().map_or(0, |l| l.iter().max().map_or(0, |m| m + 1));
        let mut splits = NodeSplits::default();
        for (line, l) in numbered_lines(&read_text(&dir.join(SPLITS))?) {
            let mut f = l.split('\t');
            let v: usize = parse_field(f.next(), line, "node id")?;
            match f.next().map(str::trim) {
                Some("train") => splits.train.push(v),
                Some("valid") => splits.valid.push(v),
                Some("test") => splits.test.push(v),
                other => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("unknown split {other:?}"),
                    })
                }
            }
        }
        let es_path = dir.join(EDGE_SPLITS);
        let edge_splits = if es_path.exists() {
            Some(read_split_file(&es_path, n)?)
        } else {
            None
        };
        let g = TextualGraph {
            adj,
            texts: texts_by_id,
            labels,
            num_classes,
            splits,
            edge_splits,
        };
        g.validate()?;
        Ok(g)
    }
}

/// `node_id<TAB>text` lines; tabs and newlines inside texts become spaces.
pub fn write_tsv(path: &Path, texts: &[String]) -> Result<()> {
    let mut out = String::new();
    for (i, t) in texts.iter().enumerate() {
        let clean: String = t
            .chars()
            .map(|c| if matches!(c, '\t' | '\n' | '\r') { ' ' } else { c })
            .collect();
        writeln!(out, "{i}\t{clean}").expect("string write");
    }
    write_text(path, &out)
}

/// Dense node-id indexed texts. Ids must cover `0..=max_id` exactly once.
pub fn load_tsv(path: &Path) -> Result<Vec<String>> {
    let text = read_text(path)?;
    let mut slots: Vec<Option<String>> = Vec::new();
    for (line, l) in numbered_lines(&text) {
        let (id, body) = l.split_once('\t').ok_or_else(|| Error::Parse {
            line,
            msg: "expected `node_id<TAB>text`".into(),
        })?;
        let id: usize = parse_field(Some(id), line, "node id")?;
        if id >= slots.len() {
            slots.resize(id + 1, None);
        }
        if slots[id].is_some() {
            return Err(Error::Duplicate(id));
        }
        slots[id] = Some(body.to_owned());
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(i, s)| s.ok_or(Error::MissingId(i)))
        .collect()
}

/// Like [`load_tsv`] but requires exactly `num_nodes` records.
pub fn load_tsv_for(path: &Path, num_nodes: usize) -> Result<Vec<String>> {
    let mut texts = load_tsv(path)?;
    if texts.len() > num_nodes {
        return Err(Error::Index(format!(
            "text for node {} beyond {num_nodes} nodes",
            texts.len() - 1
        )));
    }
    if texts.len() < num_nodes {
        return Err(Error::MissingId(texts.len()));
    }
    texts.shrink_to_fit();
    Ok(texts)
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = String::new();
    for (i, y) in labels.iter().enumerate() {
        writeln!(out, "{i}\t{y}").expect("string write");
    }
    write_text(path, &out)
}

pub fn read_labels(path: &Path, num_nodes: usize) -> Result<Vec<usize>> {
    let mut labels = vec![None; num_nodes];
    for (line, l) in numbered_lines(&read_text(path)?) {
        let mut f = l.split('\t');
        let id: usize = parse_field(f.next(), line, "node id")?;
        let y: usize = parse_field(f.next(), line, "class")?;
        let slot = labels
            .get_mut(id)
            .ok_or_else(|| Error::Index(format!("label for node {id} beyond {num_nodes} nodes")))?;
        if slot.replace(y).is_some() {
            return Err(Error::Duplicate(id));
        }
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, y)| y.ok_or_else(|| Error::Data(format!("node {i} has no label"))))
        .collect()
}
