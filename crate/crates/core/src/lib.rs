//! Fairness-aware boosting for subgraph-federated node classification.
//!
//! The pipeline: an attributed graph is split into client subgraphs by
//! community detection; each client trains a two-layer GCN with per-node
//! loss weights and per-edge propagation weights; the server aggregates
//! client deltas with trust weights. Diagnostics and numerical checks of the
//! method's guarantees live alongside.

#![allow(clippy::needless_range_loop)]

pub mod boosting;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod federation;
pub mod gnn;
pub mod graph;
pub mod metrics;
pub mod partition;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
