use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("index {index} out of range for {what} of length {len}")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("closure is not deterministic: two evaluations at the same point gave {first} and {second}")]
    Determinism { first: f64, second: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("vocabulary error: {0}")]
    Vocab(String),

    #[error("template error: {0}")]
    Template(String),

    #[error("arity error: {0}")]
    Arity(String),

    #[error("verbalizer error: {0}")]
    Verbalizer(String),

    #[error("plan error: {0}")]
    Plan(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("loss became non-finite at step {step}: {loss}")]
    NonFiniteLoss { step: usize, loss: f64 },

    #[error("not enough examples of class `{class}`: need {needed}, have {available}")]
    Sampling {
        class: String,
        needed: usize,
        available: usize,
    },

    #[error("generation error: {0}")]
    Generation(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
