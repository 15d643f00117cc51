use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("self-loop on vertex {0}")]
    SelfLoop(usize),

    #[error("vertex index {index} out of range for graph with {n} vertices")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(&'static str),

    #[error("matrix is not symmetric")]
    NotSymmetric,

    #[error("invalid decomposable model: {0}")]
    InvalidModel(String),

    #[error("pattern count {count} exceeds cap {cap}")]
    PatternExplosion { count: usize, cap: usize },

    #[error("brute-force guard exceeded: {0}")]
    GuardExceeded(String),

    #[error("kernel evaluation failed for pair ({i}, {j}): {source}")]
    Pair {
        i: usize,
        j: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("bad magic number {found:#010x} (expected {expected:#010x})")]
    BadMagic { expected: u32, found: u32 },

    #[error("truncated file: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("empty skeleton: no foreground survives thinning")]
    EmptySkeleton,

    #[error("single-class training set")]
    SingleClass,

    #[error("gram matrix is not PSD: min eigenvalue {min_eig:e} < tolerance {tol:e}")]
    NotPsd { min_eig: f64, tol: f64 },

    #[error("fold too small: class {class} has {count} items for {folds} folds")]
    FoldTooSmall {
        class: u32,
        count: usize,
        folds: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
