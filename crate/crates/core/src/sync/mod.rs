//! DR protocol engine.
//!
//! Both frameworks run over the same [`StorageNode`]s. The identifier
//! framework exchanges index streams and diffs them; the hash framework first
//! pays whatever rehash its digest indexes need, then diffs digests. Costs are
//! charged through the [`CostModel`] into a [`DrReport`].

mod plan;
mod session;
mod split_brain;

use thiserror::Error;

use crate::index::IndexError;
use crate::node::{NodeError, StorageNode};

pub use plan::{apply_plan, compute_delta_hash, compute_delta_meta, DeltaPlan, ExchangeMode};
pub use session::{
    converge, converge_all, execute_failback, execute_failover, sync_pair, ConvergeOutcome,
    FailoverOutcome, GossipOutcome, SessionOutcome,
};
pub use split_brain::{
    reconcile_split_brain, Conflict, MergeResolver, Reconciliation, ReconciliationPolicy,
};

pub use crate::simnet::cost::CostModel;

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("no surviving replica can take over")]
    NoSurvivingReplica,
    #[error("a node cannot synchronize with itself")]
    SameNode,
    #[error("{0}")]
    InvalidState(String),
    #[error("convergence did not settle after {rounds} rounds")]
    ConvergenceStalled { rounds: usize },
    #[error(transparent)]
    Node(#[from] NodeError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Framework {
    Meta,
    Hash,
}

impl Framework {
    pub fn as_str(self) -> &'static str {
        match self {
            Framework::Meta => "meta",
            Framework::Hash => "hash",
        }
    }
}

/// Which framework drives state, and whether the other runs in shadow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameworkSelection {
    Meta,
    Hash,
    /// Meta drives state; hash plans are computed on the same data for cost
    /// and equivalence reporting.
    BothShadow,
}

impl FrameworkSelection {
    pub fn runs(self, f: Framework) -> bool {
        matches!(
            (self, f),
            (FrameworkSelection::BothShadow, _)
                | (FrameworkSelection::Meta, Framework::Meta)
                | (FrameworkSelection::Hash, Framework::Hash)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DrKind {
    Failover,
    Failback,
    Converge,
}

impl DrKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DrKind::Failover => "failover",
            DrKind::Failback => "failback",
            DrKind::Converge => "converge",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Phases {
    pub t_hash: f64,
    pub t_index: f64,
    pub t_delta: f64,
    pub t_wal_replay: f64,
}

impl Phases {
    pub fn total(&self) -> f64 {
        self.t_hash + self.t_index + self.t_delta + self.t_wal_replay
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DrCounters {
    pub hash_ops: u64,
    pub content_reads: u64,
    pub comparisons: u64,
    /// Modeled bytes on the wire, both directions, index plus delta.
    pub network_bytes: u64,
    pub blocks_transferred: u64,
}

/// Core-seconds spent by the node being recovered.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CpuUsage {
    pub hash_core_seconds: f64,
    pub transfer_core_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrReport {
    pub kind: DrKind,
    pub framework: Framework,
    pub virtual_rto_seconds: f64,
    pub phases: Phases,
    pub counters: DrCounters,
    pub cpu: CpuUsage,
}

impl DrReport {
    pub fn new(kind: DrKind, framework: Framework, phases: Phases, counters: DrCounters, cpu: CpuUsage) -> Self {
        Self { kind, framework, virtual_rto_seconds: phases.total(), phases, counters, cpu }
    }

    /// Multiplies every phase (and the time-proportional CPU) by `factor`.
    pub fn jittered(mut self, factor: f64) -> Self {
        self.phases.t_hash *= factor;
        self.phases.t_index *= factor;
        self.phases.t_delta *= factor;
        self.phases.t_wal_replay *= factor;
        self.cpu.hash_core_seconds *= factor;
        self.cpu.transfer_core_seconds *= factor;
        self.virtual_rto_seconds = self.phases.total();
        self
    }

    /// Utilization of the recovering node's cores during the rehash phase.
    pub fn rehash_cpu_utilization(&self, node_cores: f64) -> f64 {
        if self.phases.t_hash > 0.0 {
            self.cpu.hash_core_seconds / (node_cores * self.phases.t_hash)
        } else {
            0.0
        }
    }

    /// Utilization of the recovering node's cores over the whole event.
    pub fn dr_cpu_utilization(&self, node_cores: f64) -> f64 {
        if self.virtual_rto_seconds > 0.0 {
            (self.cpu.hash_core_seconds + self.cpu.transfer_core_seconds) / (node_cores * self.virtual_rto_seconds)
        } else {
            0.0
        }
    }

    /// Sequential composition: phases and counters add.
    pub fn absorb(&mut self, other: &DrReport) {
        self.phases.t_hash += other.phases.t_hash;
        self.phases.t_index += other.phases.t_index;
        self.phases.t_delta += other.phases.t_delta;
        self.phases.t_wal_replay += other.phases.t_wal_replay;
        self.counters.hash_ops += other.counters.hash_ops;
        self.counters.content_reads += other.counters.content_reads;
        self.counters.comparisons += other.counters.comparisons;
        self.counters.network_bytes += other.counters.network_bytes;
        self.counters.blocks_transferred += other.counters.blocks_transferred;
        self.cpu.hash_core_seconds += other.cpu.hash_core_seconds;
        self.cpu.transfer_core_seconds += other.cpu.transfer_core_seconds;
        self.virtual_rto_seconds = self.phases.total();
    }
}

/// Two distinct mutable nodes out of one slice.
pub fn pair_mut(nodes: &mut [StorageNode], a: usize, b: usize) -> Result<(&mut StorageNode, &mut StorageNode), SyncError> {
    if a == b {
        return Err(SyncError::SameNode);
    }
    if a < b {
        let (lo, hi) = nodes.split_at_mut(b);
        Ok((&mut lo[a], &mut hi[0]))
    } else {
        let (lo, hi) = nodes.split_at_mut(a);
        Ok((&mut hi[0], &mut lo[b]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jitter_keeps_the_sum_invariant() {
        let phases = Phases { t_hash: 10.0, t_index: 2.0, t_delta: 3.0, t_wal_replay: 18.0 };
        let r = DrReport::new(DrKind::Failback, Framework::Meta, phases, DrCounters::default(), CpuUsage::default());
        assert_eq!(r.virtual_rto_seconds, 33.0);
        let j = r.jittered(1.1);
        assert!((j.virtual_rto_seconds - 36.3).abs() < 1e-9);
        assert!((j.phases.total() - j.virtual_rto_seconds).abs() < 1e-12);
    }

    #[test]
    fn selection() {
        assert!(FrameworkSelection::BothShadow.runs(Framework::Hash));
        assert!(!FrameworkSelection::Meta.runs(Framework::Hash));
        assert!(FrameworkSelection::Hash.runs(Framework::Hash));
    }
}
