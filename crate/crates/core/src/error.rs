use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("value error: {0}")]
    Value(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("state error: {0}")]
    State(String),
    #[error("corpus error: {0}")]
    Corpus(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate node id {0}")]
    Duplicate(usize),
    #[error("missing text for node {0}")]
    MissingId(usize),
    #[error("generation error: {0}")]
    Generation(String),
    #[error("iteration error: {0}")]
    Iteration(String),
    #[error("length error: sequence length {len} exceeds max_len {max_len}")]
    Length { len: usize, max_len: usize },
    #[error("pooling error: {0}")]
    Pooling(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("cache error: {0}")]
    Cache(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("compatibility error: {0}")]
    Compatibility(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("ensemble error: {0}")]
    Ensemble(String),
    #[error("projection error: {0}")]
    Projection(String),
    #[error("comparison error: {0}")]
    Comparison(String),
    #[error("search error: {0}")]
    Search(String),
    #[error("gradient check error: {0}")]
    Check(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("missing upstream artifact: {}", .0.display())]
    Dependency(PathBuf),
    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
