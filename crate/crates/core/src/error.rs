use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("class `{class}` has {available} nodes but the split needs {required}")]
    ClassTooSmall {
        class: String,
        available: usize,
        required: usize,
    },

    #[error("{name} = {value} outside [{lo}, {hi}]")]
    OutOfRange {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("empty mask: {0}")]
    EmptyMask(&'static str),

    #[error("label {label} at node {node} outside [0, {classes})")]
    Label {
        node: usize,
        label: usize,
        classes: usize,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training aborted: {0}")]
    Diverged(String),

    #[error("all agents dead: {0}")]
    PopulationDead(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
