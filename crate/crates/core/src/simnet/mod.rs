//! Deterministic discrete-event cluster simulator.
//!
//! Scenarios describe a cluster, a write workload and a fault script. The
//! runtime drives [`crate::node::StorageNode`]s through it on a virtual
//! clock and charges DR work through the [`cost::CostModel`].

pub mod cost;
pub mod metrics;
pub mod runtime;
pub mod scenario;
pub mod soak;

use thiserror::Error;

use crate::discovery::DiscoveryError;
use crate::node::NodeError;
use crate::sync::SyncError;

pub use cost::{account_hash_cost, account_transfer, CostMeter, CostModel, TransferPhase};
pub use metrics::{ConvergeRecord, DrEventRecord, FaultClass, Metrics, Sample, Violations};
pub use runtime::run_scenario;
pub use scenario::{FaultSpec, Fidelity, Scenario, Writers};
pub use soak::{paper_soak_scenario, soak, SoakReport};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
}
