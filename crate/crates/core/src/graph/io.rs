//! Text formats: `u<TAB>v` edge lists and `u v split` edge-split files.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsio::{numbered_lines, parse_field, read_text, write_text};
use crate::graph::{build_csr, Edge, EdgeSplits, SplitKind};

pub fn write_edge_list(path: &Path, edges: &[Edge]) -> Result<()> {
    let mut out = String::new();
    for &(u, v) in edges {
        writeln!(out, "{u}\t{v}").expect("string write");
    }
    write_text(path, &out)
}

pub fn read_edge_list(path: &Path) -> Result<Vec<Edge>> {
    let text = read_text(path)?;
    numbered_lines(&text)
        .map(|(line, l)| {
            let mut f = l.split('\t');
            let u = parse_field(f.next(), line, "source")?;
            let v = parse_field(f.next(), line, "target")?;
            if f.next().is_some() {
                return Err(Error::Parse {
                    line,
                    msg: "expected two fields".into(),
                });
            }
            Ok((u, v))
        })
        .collect()
}

/// Edge splits plus their fixed evaluation negatives. Split lines are
/// `u v t|v|s`; negatives for the i-th held-out positive follow as
/// `neg <split-code> <i> w1 w2 ...`.
pub fn write_split_file(path: &Path, splits: &EdgeSplits) -> Result<()> {
    let mut out = String::new();
    for kind in [SplitKind::Train, SplitKind::Valid, SplitKind::Test] {
        for &(u, v) in splits.positives(kind) {
            writeln!(out, "{u} {v} {}", kind.code()).expect("string write");
        }
    }
    for (kind, table) in [
        (SplitKind::Valid, &splits.valid_negatives),
        (SplitKind::Test, &splits.test_negatives),
    ] {
        for (i, negs) in table.iter().enumerate() {
            write!(out, "neg {} {i}", kind.code()).expect("string write");
            for w in negs {
                write!(out, " {w}").expect("string write");
            }
            out.push('\n');
        }
    }
    write_text(path, &out)
}

pub fn read_split_file(path: &Path, num_nodes: usize) -> Result<EdgeSplits> {
    let text = read_text(path)?;
    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let (mut vneg, mut tneg) = (Vec::new(), Vec::new());
    for (line, l) in numbered_lines(&text) {
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.first() == Some(&"neg") {
            let kind = fields
                .get(1)
                .and_then(|c| SplitKind::from_code(c))
                .ok_or_else(|| Error::Parse {
                    line,
                    msg: "bad negative split code".into(),
                })?;
            let negs: Vec<usize> = fields[3.min(fields.len())..]
                .iter()
                .map(|f| parse_field(Some(f), line, "negative"))
                .collect::<Result<_>>()?;
            match kind {
                SplitKind::Valid => vneg.push(negs),
                SplitKind::Test => tneg.push(negs),
                SplitKind::Train => {
                    return Err(Error::Parse {
                        line,
                        msg: "train edges carry no negatives".into(),
                    })
                }
            }
            continue;
        }
        if fields.len() != 3 {
            return Err(Error::Parse {
                line,
                msg: "expected `u v split`".into(),
            });
        }
        let u: usize = parse_field(Some(fields[0]), line, "source")?;
        let v: usize = parse_field(Some(fields[1]), line, "target")?;
        match SplitKind::from_code(fields[2]) {
            Some(SplitKind::Train) => train.push((u, v)),
            Some(SplitKind::Valid) => valid.push((u, v)),
            Some(SplitKind::Test) => test.push((u, v)),
            None => {
                return Err(Error::Parse {
                    line,
                    msg: format!("unknown split {:?}", fields[2]),
                })
            }
        }
    }
    if vneg.len() != valid.len() || tneg.len() != test.len() {
        return Err(Error::Data("negative tables do not match held-out positives".into()));
    }
    let message_graph = build_csr(&train, num_nodes)?;
    Ok(EdgeSplits {
        train,
        valid,
        test,
        valid_negatives: vneg,
        test_negatives: tneg,
        message_graph,
    })
}
