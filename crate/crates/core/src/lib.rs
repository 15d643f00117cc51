//! Positive-definite tree-walk kernels between attributed point-cloud graphs.
//!
//! Local position kernels are Bhattacharyya kernels between covariance
//! matrices factorized on decomposable graphical models, which lets a
//! dynamic program sum over all matching tree-walks of two graphs.

pub mod charpipe;
pub mod classify;
pub mod covkernels;
pub mod engine;
pub mod error;
pub mod graph;
pub mod random;
pub mod treewalk;

pub use error::{Error, Result};
