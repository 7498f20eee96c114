use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: parse failure at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{location}: dangling bus reference {bus} (network has {n_buses} buses)")]
    DanglingBus {
        location: String,
        bus: usize,
        n_buses: usize,
    },

    #[error("{location}: parameter `{param}` must be positive, got {value}")]
    NonPositive {
        location: String,
        param: &'static str,
        value: f64,
    },

    #[error("network graph is disconnected: {components} components (bus {example} unreachable from bus 0)")]
    Disconnected { components: usize, example: usize },

    #[error("{location}: {message}")]
    Invalid { location: String, message: String },

    #[error("unknown bus {0}")]
    UnknownBus(usize),

    #[error("leaf {leaf} block is singular (reciprocal condition estimate {rcond:e})")]
    SingularLeaf { leaf: usize, rcond: f64 },

    #[error("matrix is singular (reciprocal condition estimate {rcond:e})")]
    Singular { rcond: f64 },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("dense materialization of N={n} exceeds the limit {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("modification spans {0} leaves; at most two are allowed")]
    ModifySpan(usize),

    #[error("non-finite voltage at step {step}, node {node}")]
    NonFinite { step: usize, node: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}
