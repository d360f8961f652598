//! Closed-form communication and storage cost accounting.
//!
//! All costs are exact byte counts. Multi-round FedAvg uploads the model
//! every round from every client (T x M x S total, T x S per client); every
//! one-shot method uploads one model size per client (M x S total); the
//! progressive-fusion method uploads each block exactly once, which sums to
//! one client payload S per client as well.

use serde::{Deserialize, Serialize};

use crate::federation::Algorithm;

/// Checkpoints store 32-bit floats.
pub const BYTES_PER_PARAM: u64 = 4;

/// Serialized payload size of `count` parameters.
pub fn param_bytes(count: usize) -> u64 {
    count as u64 * BYTES_PER_PARAM
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CostModel {
    pub algorithm: Algorithm,
    /// Serialized model bytes S (for fusion runs: the per-client shared
    /// payload, blocks plus adaptors).
    pub model_bytes: u64,
    /// Communication rounds T (FedAvg only).
    pub rounds: u64,
    /// Number of clients M.
    pub clients: u64,
}

/// Total uplink bytes across all clients.
pub fn comm_cost(m: &CostModel) -> u64 {
    match m.algorithm {
        Algorithm::FedAvg => m.rounds * m.clients * m.model_bytes,
        Algorithm::OneshotFedAvg | Algorithm::Ensemble | Algorithm::FuseFl => {
            m.clients * m.model_bytes
        }
    }
}

/// Uplink bytes for one client.
pub fn comm_cost_per_client(m: &CostModel) -> u64 {
    match m.algorithm {
        Algorithm::FedAvg => m.rounds * m.model_bytes,
        _ => m.model_bytes,
    }
}

/// Bytes needed to store the deployable result.
pub fn storage_cost(m: &CostModel) -> u64 {
    match m.algorithm {
        Algorithm::Ensemble => m.clients * m.model_bytes,
        _ => m.model_bytes,
    }
}
