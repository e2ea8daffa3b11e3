//! One-shot distributed clustered learning.
//!
//! Each simulated user fits a model on its own shard, the server clusters the
//! resulting parameter vectors and sends back the within-cluster average. The
//! crate also ships the clustering algorithms with their recovery-condition
//! checkers, an inexact (projected SGD) variant, and the usual baselines
//! (oracles, local ERM, naive averaging, IFCA).
//!
//! Module map:
//!
//! - [`data`]: synthetic federations, table ingestion, label-flip sharding
//! - [`erm`]: losses, exact solvers and projected SGD
//! - [`clustering`]: convex clustering, Lloyd, K-means++, spectral K-means,
//!   clusterpath, K estimation and separability checks
//! - [`protocol`]: the one-shot pipeline and baselines
//! - [`eval`]: normalized MSE, accuracy, recovery statistics, decay slopes

pub mod clustering;
pub mod data;
pub mod erm;
mod error;
pub mod eval;
pub mod linalg;
pub mod protocol;
pub mod rng;

pub use error::{Error, Result};
