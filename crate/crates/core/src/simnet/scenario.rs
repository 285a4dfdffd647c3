//! Scenario schema (TOML) and validation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::cost::CostModel;
use super::SimError;
use crate::sync::FrameworkSelection;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fidelity {
    /// Real bytes, real SHA-256 and CRC over them.
    Concrete,
    /// Descriptor blocks; content is a (length, seed) pair.
    #[default]
    Virtual,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Writers {
    /// Each group's first up member takes writes and replicates synchronously.
    #[default]
    Primary,
    /// Every up member takes writes in turn (multi-primary).
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub nodes: usize,
    #[serde(default = "default_replicas")]
    pub replica_factor: usize,
    #[serde(default)]
    pub writers: Writers,
}

fn default_replicas() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InventorySpec {
    /// Blocks written to every group before the clock starts.
    pub blocks_per_group: u64,
    pub block_size_min: u64,
    pub block_size_max: u64,
}

impl Default for InventorySpec {
    fn default() -> Self {
        Self { blocks_per_group: 0, block_size_min: 4096, block_size_max: 4096 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    /// Modeled bytes per second across the cluster; zero disables writes.
    pub aggregate_rate: f64,
    /// Share of writes that create a new key; the rest rewrite an existing key.
    pub sequential_fraction: f64,
    /// Share of writes that repeat earlier content.
    pub duplicate_ratio: f64,
    pub max_ingests: Option<u64>,
    /// Period of background Layer 2 passes; zero disables them.
    pub dedup_interval_seconds: f64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            aggregate_rate: 0.0,
            sequential_fraction: 0.7,
            duplicate_ratio: 0.0,
            max_ingests: None,
            dedup_interval_seconds: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSpec {
    pub tick_seconds: f64,
    pub checkpoint_seconds: f64,
    /// Treat the digest index as untrusted after every restart.
    pub rescan_on_restart: bool,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        Self { tick_seconds: 60.0, checkpoint_seconds: 21_600.0, rescan_on_restart: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetentionSpec {
    /// Expire oldest writes to hold each group at its initial block count.
    pub enabled: bool,
}

/// Generator for a regular DR cadence, expanded into `faults`.
/// Event `i` (in time order) hits group `i mod G`, member `(i div G) mod R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub planned_count: usize,
    pub planned_first_seconds: f64,
    pub planned_interval_seconds: f64,
    #[serde(default)]
    pub crash_at_seconds: Vec<f64>,
    pub absence_seconds: f64,
    #[serde(default = "yes")]
    pub crash_index_loss: bool,
    #[serde(default = "yes")]
    pub crash_pipeline_crash: bool,
    #[serde(default)]
    pub crash_wal_tear_bytes: usize,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FaultSpec {
    /// Graceful stop and later restart.
    Stop { at: f64, node: usize, duration: f64 },
    Crash {
        at: f64,
        node: usize,
        duration: f64,
        #[serde(default)]
        index_loss: bool,
        #[serde(default)]
        pipeline_crash: bool,
        #[serde(default)]
        wal_tear_bytes: usize,
    },
    /// The baseline digest index store is destroyed on a running node.
    IndexLoss { at: f64, node: usize },
    Partition { at: f64, until: f64, side_a: Vec<usize>, side_b: Vec<usize> },
    Rebind { at: f64, name: String, target: String },
}

impl FaultSpec {
    pub fn at(&self) -> f64 {
        match self {
            FaultSpec::Stop { at, .. }
            | FaultSpec::Crash { at, .. }
            | FaultSpec::IndexLoss { at, .. }
            | FaultSpec::Partition { at, .. }
            | FaultSpec::Rebind { at, .. } => *at,
        }
    }

    /// When the fault's effect ends, if it has an end.
    pub fn until(&self) -> Option<f64> {
        match self {
            FaultSpec::Stop { at, duration, .. } | FaultSpec::Crash { at, duration, .. } => Some(at + duration),
            FaultSpec::Partition { until, .. } => Some(*until),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub horizon_seconds: f64,
    #[serde(default = "default_framework")]
    pub framework: FrameworkSelection,
    #[serde(default)]
    pub fidelity: Fidelity,
    /// Keep every minted id in the metrics (uniqueness audits).
    #[serde(default)]
    pub record_ids: bool,
    #[serde(default = "default_sample")]
    pub sample_seconds: f64,
    pub cluster: ClusterSpec,
    #[serde(default)]
    pub inventory: InventorySpec,
    #[serde(default)]
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub cost: CostModel,
    #[serde(default)]
    pub baseline: BaselineSpec,
    #[serde(default)]
    pub retention: RetentionSpec,
    #[serde(default)]
    pub schedule: Option<ScheduleSpec>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    /// Zone lines; node `i` registers as service `node-<i>`.
    #[serde(default)]
    pub zone: Option<String>,
}

fn default_name() -> String {
    "scenario".into()
}

fn default_framework() -> FrameworkSelection {
    FrameworkSelection::Meta
}

fn default_sample() -> f64 {
    86_400.0
}

const CONCRETE_MAX_BLOCK: u64 = 1 << 20;

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let s: Scenario = toml::from_str(text).map_err(|e| SimError::Validation(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn groups(&self) -> usize {
        self.cluster.nodes / self.cluster.replica_factor.max(1)
    }

    pub fn group_of(&self, node: usize) -> usize {
        node / self.cluster.replica_factor
    }

    pub fn group_members(&self, group: usize) -> Vec<usize> {
        let r = self.cluster.replica_factor;
        (group * r..(group + 1) * r).collect()
    }

    /// Explicit faults plus the generated schedule, sorted by start time.
    pub fn expanded_faults(&self) -> Vec<FaultSpec> {
        let mut out = self.faults.clone();
        if let Some(s) = &self.schedule {
            let mut times: Vec<(f64, bool)> = (0..s.planned_count)
                .map(|k| (s.planned_first_seconds + k as f64 * s.planned_interval_seconds, false))
                .chain(s.crash_at_seconds.iter().map(|&t| (t, true)))
                .collect();
            times.sort_by(|a, b| a.0.total_cmp(&b.0));
            let g = self.groups().max(1);
            let r = self.cluster.replica_factor;
            for (i, (at, crash)) in times.into_iter().enumerate() {
                let node = (i % g) * r + (i / g) % r;
                out.push(if crash {
                    FaultSpec::Crash {
                        at,
                        node,
                        duration: s.absence_seconds,
                        index_loss: s.crash_index_loss,
                        pipeline_crash: s.crash_pipeline_crash,
                        wal_tear_bytes: s.crash_wal_tear_bytes,
                    }
                } else {
                    FaultSpec::Stop { at, node, duration: s.absence_seconds }
                });
            }
        }
        out.sort_by(|a, b| a.at().total_cmp(&b.at()));
        out
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Validation(m));
        let c = &self.cluster;
        if c.nodes == 0 || c.replica_factor == 0 {
            return bad("cluster.nodes and cluster.replica_factor must be positive".into());
        }
        if !c.nodes.is_multiple_of(c.replica_factor) {
            return bad(format!("{} nodes do not divide into groups of {}", c.nodes, c.replica_factor));
        }
        if !(self.horizon_seconds.is_finite() && self.horizon_seconds > 0.0) {
            return bad("horizon_seconds must be positive".into());
        }
        if !(self.sample_seconds.is_finite() && self.sample_seconds > 0.0) {
            return bad("sample_seconds must be positive".into());
        }
        let inv = &self.inventory;
        if inv.block_size_min == 0 || inv.block_size_min > inv.block_size_max {
            return bad("need 0 < block_size_min <= block_size_max".into());
        }
        if self.fidelity == Fidelity::Concrete && inv.block_size_max > CONCRETE_MAX_BLOCK {
            return bad(format!("concrete blocks are capped at {CONCRETE_MAX_BLOCK} bytes"));
        }
        let w = &self.workload;
        if !(w.aggregate_rate.is_finite() && w.aggregate_rate >= 0.0) {
            return bad("workload.aggregate_rate must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&w.sequential_fraction) || !(0.0..1.0).contains(&w.duplicate_ratio) {
            return bad("workload fractions out of range".into());
        }
        if !(w.dedup_interval_seconds.is_finite() && w.dedup_interval_seconds >= 0.0) {
            return bad("workload.dedup_interval_seconds must be >= 0".into());
        }
        self.cost.validate()?;
        let b = &self.baseline;
        if !(b.tick_seconds > 0.0 && b.checkpoint_seconds > 0.0) {
            return bad("baseline tick and checkpoint periods must be positive".into());
        }
        if self.retention.enabled && inv.blocks_per_group == 0 {
            return bad("retention needs a nonzero inventory target".into());
        }
        if let Some(s) = &self.schedule {
            if s.planned_interval_seconds <= 0.0 && s.planned_count > 1 {
                return bad("schedule.planned_interval_seconds must be positive".into());
            }
            if s.absence_seconds <= 0.0 {
                return bad("schedule.absence_seconds must be positive".into());
            }
        }
        self.validate_faults()
    }

    fn validate_faults(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Validation(m));
        let faults = self.expanded_faults();
        let n = self.cluster.nodes;
        let in_horizon = |t: f64| t.is_finite() && (0.0..=self.horizon_seconds).contains(&t);
        let mut downtimes: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n];
        let mut partitions: Vec<(f64, f64)> = Vec::new();
        for (i, f) in faults.iter().enumerate() {
            if !in_horizon(f.at()) || !f.until().is_none_or(in_horizon) {
                return bad(format!("fault {i} falls outside the horizon"));
            }
            match f {
                FaultSpec::Stop { node, duration, .. } | FaultSpec::Crash { node, duration, .. } => {
                    if *node >= n {
                        return bad(format!("fault {i}: node {node} out of range"));
                    }
                    if *duration <= 0.0 {
                        return bad(format!("fault {i}: duration must be positive"));
                    }
                    if self.cluster.replica_factor < 2 {
                        return bad(format!("fault {i}: a stopped node needs a replica to fail over to"));
                    }
                    if let FaultSpec::Crash { wal_tear_bytes, .. } = f {
                        if *wal_tear_bytes >= crate::identity::WAL_RECORD_LEN {
                            return bad(format!("fault {i}: a torn tail is shorter than one record"));
                        }
                    }
                    downtimes[*node].push((f.at(), f.until().expect("has end")));
                }
                FaultSpec::IndexLoss { node, .. } => {
                    if *node >= n {
                        return bad(format!("fault {i}: node {node} out of range"));
                    }
                }
                FaultSpec::Partition { at, until, side_a, side_b } => {
                    if until <= at {
                        return bad(format!("fault {i}: partition must end after it starts"));
                    }
                    let a: BTreeSet<_> = side_a.iter().collect();
                    let b: BTreeSet<_> = side_b.iter().collect();
                    if a.is_empty() || b.is_empty() || !a.is_disjoint(&b) || a.iter().chain(&b).any(|&&x| x >= n) {
                        return bad(format!("fault {i}: partition sides must be nonempty, disjoint and in range"));
                    }
                    partitions.push((*at, *until));
                }
                FaultSpec::Rebind { .. } => {
                    if self.zone.is_none() {
                        return bad(format!("fault {i}: rebind needs a zone"));
                    }
                }
            }
        }
        let overlaps = |spans: &mut Vec<(f64, f64)>| {
            spans.sort_by(|a, b| a.0.total_cmp(&b.0));
            spans.windows(2).any(|w| w[1].0 < w[0].1)
        };
        for (node, spans) in downtimes.iter_mut().enumerate() {
            if overlaps(spans) {
                return bad(format!("overlapping outages on node {node}"));
            }
        }
        if overlaps(&mut partitions) {
            return bad("overlapping partitions".into());
        }
        for g in 0..self.groups() {
            let mut spans: Vec<(f64, f64)> = self.group_members(g).iter().flat_map(|&m| downtimes[m].clone()).collect();
            spans.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut open: Vec<f64> = Vec::new();
            for (start, end) in spans {
                open.retain(|&e| e > start);
                open.push(end);
                if open.len() >= self.cluster.replica_factor {
                    return bad(format!("group {g} would lose every replica at t={start}"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
horizon_seconds = 3600
[cluster]
nodes = 4
replica_factor = 2
"#;

    #[test]
    fn minimal_scenario_defaults() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        assert_eq!(s.groups(), 2);
        assert_eq!(s.group_members(1), vec![2, 3]);
        assert_eq!(s.framework, FrameworkSelection::Meta);
        assert_eq!(s.cost, CostModel::default());
        let again = Scenario::from_toml(&s.to_toml()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn faults_parse() {
        let text = format!(
            "{MINIMAL}\n[[faults]]\nkind = \"crash\"\nat = 10\nnode = 1\nduration = 5\nindex_loss = true\n\n[[faults]]\nkind = \"partition\"\nat = 100\nuntil = 200\nside_a = [0, 2]\nside_b = [1, 3]\n"
        );
        let s = Scenario::from_toml(&text).unwrap();
        assert_eq!(s.faults.len(), 2);
        assert!(matches!(s.faults[0], FaultSpec::Crash { index_loss: true, pipeline_crash: false, .. }));
    }

    #[test]
    fn rejects_bad_input() {
        let cases = [
            "horizon_seconds = 1\n[cluster]\nnodes = 3\nreplica_factor = 2\n",
            "horizon_seconds = 0\n[cluster]\nnodes = 2\n",
            "horizon_seconds = 1\nbogus = 1\n[cluster]\nnodes = 3\n",
        ];
        for c in cases {
            assert!(Scenario::from_toml(c).is_err(), "{c}");
        }
        let overlap = format!(
            "{MINIMAL}\n[[faults]]\nkind = \"stop\"\nat = 10\nnode = 1\nduration = 50\n[[faults]]\nkind = \"crash\"\nat = 20\nnode = 1\nduration = 5\n"
        );
        assert!(matches!(Scenario::from_toml(&overlap), Err(SimError::Validation(m)) if m.contains("overlapping")));
        let whole_group = format!(
            "{MINIMAL}\n[[faults]]\nkind = \"stop\"\nat = 10\nnode = 0\nduration = 50\n[[faults]]\nkind = \"stop\"\nat = 20\nnode = 1\nduration = 5\n"
        );
        assert!(Scenario::from_toml(&whole_group).is_err());
        let past = format!("{MINIMAL}\n[[faults]]\nkind = \"index-loss\"\nat = 7200\nnode = 0\n");
        assert!(Scenario::from_toml(&past).is_err());
    }

    #[test]
    fn schedule_expands_round_robin() {
        let text = format!(
            "{MINIMAL}\n[schedule]\nplanned_count = 4\nplanned_first_seconds = 100\nplanned_interval_seconds = 500\ncrash_at_seconds = [350]\nabsence_seconds = 10\n"
        );
        let s = Scenario::from_toml(&text).unwrap();
        let f = s.expanded_faults();
        assert_eq!(f.len(), 5);
        let nodes: Vec<usize> = f
            .iter()
            .map(|x| match x {
                FaultSpec::Stop { node, .. } | FaultSpec::Crash { node, .. } => *node,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(nodes, vec![0, 2, 1, 3, 0]);
        assert!(matches!(f[1], FaultSpec::Crash { index_loss: true, pipeline_crash: true, .. }));
    }
}
