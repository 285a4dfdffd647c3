//! Virtual cost model: hashing CPU, network transfer and WAL replay charged
//! to the simulated clock instead of being measured.

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::index::STREAM_HEADER_LEN;

/// Every throughput is in raw bytes per second. `block_scale` converts simulated
/// bytes and entry counts into the modeled volumes they stand for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostModel {
    /// H: SHA-256 throughput per core.
    pub hash_throughput: f64,
    /// C: cores devoted to rehashing.
    pub cores: f64,
    /// B: link bandwidth.
    pub bandwidth: f64,
    /// S: bytes per index entry on the wire.
    pub index_entry_bytes: f64,
    pub wal_replay_seconds: f64,
    pub rto_jitter_cv: f64,
    pub fragmentation_factor: f64,
    /// One round trip, charged once per exchange session.
    pub link_latency_seconds: f64,
    /// Modeled bytes (or entries) per simulated byte (or entry).
    pub block_scale: f64,
    /// Cores per node, the denominator of CPU utilization.
    pub node_cores: f64,
    /// Core-seconds consumed per core-second of pure SHA-256 work while
    /// rehashing (I/O, tree maintenance, scheduling).
    pub hash_cpu_amplification: f64,
    /// Core-seconds per received byte during index exchange and delta transfer.
    pub transfer_cpu_seconds_per_byte: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            hash_throughput: 5.0e8,
            cores: 16.0,
            bandwidth: 1.25e9,
            index_entry_bytes: 32.0,
            wal_replay_seconds: 18.0,
            rto_jitter_cv: 0.012,
            fragmentation_factor: 0.0,
            link_latency_seconds: 0.0,
            block_scale: 1.0,
            node_cores: 40.0,
            hash_cpu_amplification: 1.0,
            transfer_cpu_seconds_per_byte: 0.0,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("hash_throughput", self.hash_throughput),
            ("cores", self.cores),
            ("bandwidth", self.bandwidth),
            ("index_entry_bytes", self.index_entry_bytes),
            ("block_scale", self.block_scale),
            ("node_cores", self.node_cores),
            ("hash_cpu_amplification", self.hash_cpu_amplification),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::Validation(format!("cost.{name} must be > 0, got {v}")));
            }
        }
        let non_negative = [
            ("wal_replay_seconds", self.wal_replay_seconds),
            ("rto_jitter_cv", self.rto_jitter_cv),
            ("fragmentation_factor", self.fragmentation_factor),
            ("link_latency_seconds", self.link_latency_seconds),
            ("transfer_cpu_seconds_per_byte", self.transfer_cpu_seconds_per_byte),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::Validation(format!("cost.{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Modeled bytes for `sim_bytes` simulated bytes.
    pub fn scaled(&self, sim_bytes: u64) -> f64 {
        sim_bytes as f64 * self.block_scale
    }

    /// Wire size of an index stream carrying `entries` simulated entries.
    pub fn index_wire_bytes(&self, entries: u64) -> f64 {
        STREAM_HEADER_LEN as f64 + self.index_entry_bytes * entries as f64 * self.block_scale
    }

    /// bytes / (H × C), on modeled bytes.
    pub fn hash_seconds(&self, bytes: f64) -> f64 {
        bytes / (self.hash_throughput * self.cores)
    }

    /// bytes / B, on modeled bytes.
    pub fn transfer_seconds(&self, bytes: f64) -> f64 {
        bytes / self.bandwidth
    }

    /// Core-seconds burned rehashing `bytes`.
    pub fn hash_core_seconds(&self, bytes: f64) -> f64 {
        bytes / self.hash_throughput * self.hash_cpu_amplification
    }

    pub fn transfer_core_seconds(&self, bytes: f64) -> f64 {
        bytes * self.transfer_cpu_seconds_per_byte
    }
}

/// Which phase a transfer is charged to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransferPhase {
    Index,
    Delta,
}

/// Accumulates virtual seconds per phase for the report being built.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CostMeter {
    pub t_hash: f64,
    pub t_index: f64,
    pub t_delta: f64,
    pub hashed_bytes: f64,
    pub transferred_bytes: f64,
}

impl CostMeter {
    pub fn total(&self) -> f64 {
        self.t_hash + self.t_index + self.t_delta
    }
}

pub fn account_hash_cost(model: &CostModel, meter: &mut CostMeter, bytes: f64) -> f64 {
    let t = model.hash_seconds(bytes);
    meter.t_hash += t;
    meter.hashed_bytes += bytes;
    t
}

pub fn account_transfer(model: &CostModel, meter: &mut CostMeter, phase: TransferPhase, bytes: f64) -> f64 {
    let t = model.transfer_seconds(bytes);
    match phase {
        TransferPhase::Index => meter.t_index += t,
        TransferPhase::Delta => meter.t_delta += t,
    }
    meter.transferred_bytes += bytes;
    t
}
