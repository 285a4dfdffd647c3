//! Long-horizon soak driver and its three report tables: per-event RTO,
//! index drift, and resource use.

use super::cost::CostModel;
use super::metrics::{coefficient_of_variation, mean, FaultClass, Metrics};
use super::scenario::{
    BaselineSpec, ClusterSpec, Fidelity, InventorySpec, RetentionSpec, Scenario, ScheduleSpec,
    WorkloadSpec, Writers,
};
use super::{run_scenario, SimError};
use crate::sync::{DrReport, Framework, FrameworkSelection};

pub const PAPER_SOAK: &str = "paper-soak";

const HOUR: f64 = 3_600.0;
const DAY: f64 = 86_400.0;

/// Twelve nodes in four replica groups, 1.1e14 modeled bytes per replica,
/// 2.8e9 B/s aggregate writes, seven days, 14 planned and 3 crash events.
///
/// One simulated block stands for 1e4 modeled blocks. The link is modeled at
/// 1.25e9 B/s so each event's inventory and delta reproduce the reference
/// breakdown.
pub fn paper_soak_scenario(seed: u64) -> Scenario {
    let per_group_rate = 7.0e8;
    let delta_bytes = 1.0e12;
    Scenario {
        name: PAPER_SOAK.into(),
        seed,
        horizon_seconds: 7.0 * DAY,
        framework: FrameworkSelection::BothShadow,
        fidelity: Fidelity::Virtual,
        record_ids: false,
        sample_seconds: DAY,
        cluster: ClusterSpec { nodes: 12, replica_factor: 3, writers: Writers::Primary },
        inventory: InventorySpec { blocks_per_group: 100_000, block_size_min: 100_000, block_size_max: 120_000 },
        workload: WorkloadSpec {
            aggregate_rate: 4.0 * per_group_rate,
            sequential_fraction: 0.7,
            duplicate_ratio: 0.0,
            max_ingests: None,
            dedup_interval_seconds: 0.0,
        },
        cost: CostModel {
            hash_throughput: 5.0e8,
            cores: 16.0,
            bandwidth: 1.25e9,
            index_entry_bytes: 32.0,
            wal_replay_seconds: 18.0,
            rto_jitter_cv: 0.012,
            fragmentation_factor: 0.011,
            link_latency_seconds: 0.0,
            block_scale: 1.0e4,
            node_cores: 40.0,
            hash_cpu_amplification: 2.3675,
            transfer_cpu_seconds_per_byte: 1.024e-9,
        },
        baseline: BaselineSpec { tick_seconds: 60.0, checkpoint_seconds: 6.0 * HOUR, rescan_on_restart: true },
        retention: RetentionSpec { enabled: true },
        schedule: Some(ScheduleSpec {
            planned_count: 14,
            planned_first_seconds: 6.0 * HOUR,
            planned_interval_seconds: 12.0 * HOUR,
            crash_at_seconds: vec![36.0 * HOUR + 5_000.0, 84.0 * HOUR + 5_000.0, 132.0 * HOUR + 5_000.0],
            absence_seconds: delta_bytes / per_group_rate,
            crash_index_loss: true,
            crash_pipeline_crash: true,
            crash_wal_tear_bytes: 7,
        }),
        faults: Vec::new(),
        zone: None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRow {
    pub event: usize,
    pub day: u32,
    pub class: FaultClass,
    pub meta_rto: f64,
    pub hash_rto: f64,
    pub factor: f64,
    /// The meta report's WAL replay phase, jitter included.
    pub meta_wal_replay: f64,
    /// The event's shared RTO jitter draw.
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftRow {
    pub day: u32,
    pub index_entries: f64,
    pub theoretical_bytes: f64,
    pub physical_bytes: f64,
    pub drift_pct: f64,
    pub growth_bytes_per_day: f64,
    pub lcv_violations: u64,
    pub immutability_violations: u64,
    pub wal_bytes_per_id: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourceRow {
    pub metric: &'static str,
    pub unit: &'static str,
    pub meta: Option<f64>,
    pub hash: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoakSummary {
    pub events: usize,
    pub planned: usize,
    pub crash: usize,
    pub mean_meta: f64,
    pub mean_hash: f64,
    pub cv_meta: f64,
    pub cv_hash: f64,
    pub factor_min: f64,
    pub factor_max: f64,
    pub factor_of_means: f64,
    /// Smallest and largest jittered WAL replay phase over crash events.
    pub crash_replay_min: f64,
    pub crash_replay_max: f64,
    /// Per crash event: its meta RTO minus the planned-event mean, both with
    /// the per-event jitter draw divided out.
    pub crash_elevation_min: f64,
    pub crash_elevation_max: f64,
    /// Mean crash meta RTO minus mean planned meta RTO, jitter included.
    pub crash_minus_planned: f64,
    pub rehash_cpu: f64,
    pub meta_dr_cpu: f64,
    pub network_parity: bool,
    pub plans_agree: bool,
    pub all_verified: bool,
    pub ingests: u64,
    pub violations: u64,
    pub final_drift_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoakReport {
    pub metrics: Metrics,
    pub events: Vec<EventRow>,
    pub drift: Vec<DriftRow>,
    pub resources: Vec<ResourceRow>,
    pub summary: SoakSummary,
}

fn pair(m: &Metrics) -> Vec<(&crate::simnet::DrEventRecord, &DrReport, &DrReport)> {
    m.failbacks
        .iter()
        .filter_map(|e| Some((e, e.meta.as_ref()?, e.hash.as_ref()?)))
        .collect()
}

/// Runs a shadow-mode scenario and tabulates it.
pub fn soak(sc: &Scenario) -> Result<SoakReport, SimError> {
    if sc.framework != FrameworkSelection::BothShadow {
        return Err(SimError::Validation("a soak compares frameworks and needs framework = \"both-shadow\"".into()));
    }
    let metrics = run_scenario(sc)?;
    let cores = sc.cost.node_cores;
    let rows = pair(&metrics);

    let events: Vec<EventRow> = rows
        .iter()
        .enumerate()
        .map(|(i, (e, m, h))| EventRow {
            event: i + 1,
            day: (e.time_seconds / DAY) as u32 + 1,
            class: e.class,
            meta_rto: m.virtual_rto_seconds,
            hash_rto: h.virtual_rto_seconds,
            factor: h.virtual_rto_seconds / m.virtual_rto_seconds,
            meta_wal_replay: m.phases.t_wal_replay,
            jitter: e.jitter,
        })
        .collect();

    let mut drift = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for s in &metrics.samples {
        let growth = match prev {
            Some((t, p)) if s.time_seconds > t => (s.physical_index_bytes - p) / ((s.time_seconds - t) / DAY),
            _ => 0.0,
        };
        drift.push(DriftRow {
            day: (s.time_seconds / DAY).round() as u32,
            index_entries: s.index_entries as f64 * sc.cost.block_scale,
            theoretical_bytes: s.logical_index_bytes,
            physical_bytes: s.physical_index_bytes,
            drift_pct: if s.logical_index_bytes > 0.0 { (s.physical_index_bytes / s.logical_index_bytes - 1.0) * 100.0 } else { 0.0 },
            growth_bytes_per_day: growth,
            lcv_violations: s.lcv_violations,
            immutability_violations: s.immutability_violations,
            wal_bytes_per_id: s.wal_bytes_per_id,
        });
        prev = Some((s.time_seconds, s.physical_index_bytes));
    }

    let per = |f: &dyn Fn(&DrReport) -> f64, fw: Framework| -> f64 {
        mean(&rows.iter().map(|(_, m, h)| f(if fw == Framework::Meta { m } else { h })).collect::<Vec<_>>())
    };
    let resources = vec![
        ResourceRow {
            metric: "CPU, rehash phase",
            unit: "%",
            meta: None,
            hash: Some(per(&|r| r.rehash_cpu_utilization(cores) * 100.0, Framework::Hash)),
        },
        ResourceRow {
            metric: "CPU, whole DR event",
            unit: "%",
            meta: Some(per(&|r| r.dr_cpu_utilization(cores) * 100.0, Framework::Meta)),
            hash: Some(per(&|r| r.dr_cpu_utilization(cores) * 100.0, Framework::Hash)),
        },
        ResourceRow {
            metric: "Network time, index + delta",
            unit: "s",
            meta: Some(per(&|r| r.phases.t_index + r.phases.t_delta, Framework::Meta)),
            hash: Some(per(&|r| r.phases.t_index + r.phases.t_delta, Framework::Hash)),
        },
        ResourceRow {
            metric: "Network bytes per event",
            unit: "B",
            meta: Some(per(&|r| r.counters.network_bytes as f64, Framework::Meta)),
            hash: Some(per(&|r| r.counters.network_bytes as f64, Framework::Hash)),
        },
        ResourceRow {
            metric: "Hash operations per event",
            unit: "ops",
            meta: Some(per(&|r| r.counters.hash_ops as f64, Framework::Meta)),
            hash: Some(per(&|r| r.counters.hash_ops as f64, Framework::Hash)),
        },
        ResourceRow {
            metric: "Content reads per event",
            unit: "blocks",
            meta: Some(per(&|r| r.counters.content_reads as f64, Framework::Meta)),
            hash: Some(per(&|r| r.counters.content_reads as f64, Framework::Hash)),
        },
    ];

    let metas: Vec<f64> = events.iter().map(|e| e.meta_rto).collect();
    let hashes: Vec<f64> = events.iter().map(|e| e.hash_rto).collect();
    let factors: Vec<f64> = events.iter().map(|e| e.factor).collect();
    let of = |c: FaultClass| events.iter().filter(|e| e.class == c).collect::<Vec<_>>();
    let (planned, crash) = (of(FaultClass::Planned), of(FaultClass::Crash));
    let replays: Vec<f64> = crash.iter().map(|e| e.meta_wal_replay).collect();
    let planned_base = mean(&planned.iter().map(|e| e.meta_rto / e.jitter).collect::<Vec<_>>());
    let elevations: Vec<f64> = crash.iter().map(|e| e.meta_rto / e.jitter - planned_base).collect();
    let last = metrics.samples.last();
    let summary = SoakSummary {
        events: events.len(),
        planned: planned.len(),
        crash: crash.len(),
        mean_meta: mean(&metas),
        mean_hash: mean(&hashes),
        cv_meta: coefficient_of_variation(&metas),
        cv_hash: coefficient_of_variation(&hashes),
        factor_min: factors.iter().copied().fold(f64::INFINITY, f64::min),
        factor_max: factors.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        factor_of_means: mean(&hashes) / mean(&metas),
        crash_replay_min: replays.iter().copied().fold(f64::INFINITY, f64::min),
        crash_replay_max: replays.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        crash_elevation_min: elevations.iter().copied().fold(f64::INFINITY, f64::min),
        crash_elevation_max: elevations.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        crash_minus_planned: mean(&crash.iter().map(|e| e.meta_rto).collect::<Vec<_>>())
            - mean(&planned.iter().map(|e| e.meta_rto).collect::<Vec<_>>()),
        rehash_cpu: resources[0].hash.unwrap_or(0.0),
        meta_dr_cpu: resources[1].meta.unwrap_or(0.0),
        network_parity: rows.iter().all(|(_, m, h)| m.counters.network_bytes == h.counters.network_bytes),
        plans_agree: rows.iter().all(|(e, _, _)| e.plans_agree != Some(false)),
        all_verified: metrics.failbacks.iter().chain(&metrics.failovers).all(|e| e.verified),
        ingests: metrics.ingests,
        violations: metrics.violations.total(),
        final_drift_ratio: last.map_or(0.0, |s| if s.logical_index_bytes > 0.0 { s.physical_index_bytes / s.logical_index_bytes } else { 0.0 }),
    };
    Ok(SoakReport { metrics, events, drift, resources, summary })
}
