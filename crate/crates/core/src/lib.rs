//! Tail-tolerant distributed search.
//!
//! The crate builds sharded, redundant TF-IDF indexes (Replication or
//! Repartition through cosine LSH), selects shard replicas for each query
//! under a per-node miss probability, merges the surviving responses the way
//! a broker would, and scores the outcome against a centralized index.
//!
//! Alongside the simulator it carries the analytical side: the closed-form
//! success probability of a replicated selection, a Monte-Carlo estimator for
//! both redundancy kinds, and an exhaustive search used to check that the
//! miss-aware replica selection is optimal.
//!
//! Module map:
//!
//! - [`corpus`]: tokenization, corpus statistics, TF-IDF weighting, loaders
//!   and the synthetic corpus generator.
//! - [`retrieval`]: in-memory inverted index with top-k scoring.
//! - [`partition`]: LSH partitioning and deployments.
//! - [`shard_index`]: centralized sample index and CRCS-Linear estimation.
//! - [`selection`]: the six shard-selection schemes.
//! - [`analysis`]: success-probability evaluators and oracles.
//! - [`simulator`]: broker-side query processing and experiment grids.
//! - [`harness`]: figure-shaped experiment suites, stratification, profiling.

pub mod analysis;
pub mod config;
pub mod corpus;
mod error;
pub mod harness;
pub mod partition;
pub mod retrieval;
pub mod seed;
pub mod selection;
pub mod shard_index;
pub mod simulator;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
