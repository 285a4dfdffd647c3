//! Scenario outputs.

use crate::identity::CompositeId;
use crate::sync::{DrReport, Framework};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultClass {
    Planned,
    Crash,
}

impl FaultClass {
    pub fn as_str(self) -> &'static str {
        match self {
            FaultClass::Planned => "planned",
            FaultClass::Crash => "crash",
        }
    }
}

/// One failover or failback, with both frameworks' reports when both ran.
#[derive(Debug, Clone, PartialEq)]
pub struct DrEventRecord {
    pub seq: usize,
    pub time_seconds: f64,
    pub class: FaultClass,
    pub node: usize,
    pub group: usize,
    pub substitute: usize,
    /// Multiplicative jitter shared by every report of this event.
    pub jitter: f64,
    pub meta: Option<DrReport>,
    pub hash: Option<DrReport>,
    pub verified: bool,
    pub plans_agree: Option<bool>,
}

impl DrEventRecord {
    pub fn report(&self, f: Framework) -> Option<&DrReport> {
        match f {
            Framework::Meta => self.meta.as_ref(),
            Framework::Hash => self.hash.as_ref(),
        }
    }

    /// hash RTO / meta RTO, when both ran.
    pub fn factor(&self) -> Option<f64> {
        match (&self.meta, &self.hash) {
            (Some(m), Some(h)) if m.virtual_rto_seconds > 0.0 => Some(h.virtual_rto_seconds / m.virtual_rto_seconds),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergeRecord {
    pub time_seconds: f64,
    pub group: usize,
    pub members: Vec<usize>,
    pub rounds: usize,
    pub blocks_transferred: u64,
    /// Blocks moved by an immediate second invocation.
    pub repeat_blocks: u64,
    pub equal_union: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub time_seconds: f64,
    /// Simulated entries summed over all node indexes.
    pub index_entries: u64,
    /// Modeled theoretical bytes: S × entries × scale.
    pub logical_index_bytes: f64,
    /// Modeled bytes including fragmentation.
    pub physical_index_bytes: f64,
    pub ingests: u64,
    /// Modeled bytes per second written since the previous sample.
    pub ingest_rate: f64,
    /// Modeled ids assigned per second since the previous sample.
    pub id_rate: f64,
    pub lcv_violations: u64,
    pub immutability_violations: u64,
    /// WAL bytes appended per assigned id, a deterministic stand-in for
    /// assignment latency.
    pub wal_bytes_per_id: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Violations {
    pub lcv: u64,
    pub immutability: u64,
    pub corruption: u64,
    pub duplicate_ids: u64,
}

impl Violations {
    pub fn total(&self) -> u64 {
        self.lcv + self.immutability + self.corruption + self.duplicate_ids
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Metrics {
    pub scenario: String,
    pub seed: u64,
    pub failbacks: Vec<DrEventRecord>,
    pub failovers: Vec<DrEventRecord>,
    pub convergences: Vec<ConvergeRecord>,
    pub samples: Vec<Sample>,
    pub violations: Violations,
    pub ingests: u64,
    pub replicated: u64,
    pub dropped_writes: u64,
    pub expired: u64,
    pub dedup_reclaimed_blocks: u64,
    pub dns_dials: u64,
    pub ids: Vec<CompositeId>,
}

impl Metrics {
    pub fn rto_values(&self, f: Framework) -> Vec<f64> {
        self.failbacks.iter().filter_map(|e| e.report(f)).map(|r| r.virtual_rto_seconds).collect()
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Sample standard deviation over mean.
pub fn coefficient_of_variation(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    var.sqrt() / m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats() {
        assert_eq!(mean(&[]), 0.0);
        assert_eq!(mean(&[1.0, 3.0]), 2.0);
        let cv = coefficient_of_variation(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert!((cv - 2.138_089_935_299_395 / 5.0).abs() < 1e-12);
        assert_eq!(coefficient_of_variation(&[5.0]), 0.0);
    }
}
