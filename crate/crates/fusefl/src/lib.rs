//! Desk-scale one-shot federated learning simulator.
//!
//! Builds a global model from isolated clients by progressively training,
//! sharing, fusing, and freezing network blocks, and compares the result
//! against multi-round FedAvg and logit-ensemble baselines. Ships with a
//! causal synthetic data generator, Dirichlet non-IID partitioning, backdoor
//! injection, mutual-information and linear-separability probes, and exact
//! communication/storage cost accounting.

pub mod cli;
pub mod data;
pub mod error;
pub mod federation;
pub mod model;
pub mod nn;
pub mod probes;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
