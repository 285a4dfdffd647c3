//! Event loop. Single-threaded over a virtual clock in microseconds; ties are
//! broken by insertion sequence so a (scenario, seed) pair replays exactly.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, VecDeque};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::metrics::{ConvergeRecord, DrEventRecord, FaultClass, Metrics, Sample};
use super::scenario::{FaultSpec, Fidelity, Scenario, Writers};
use super::SimError;
use crate::block::Payload;
use crate::discovery::{DnsRecordSet, Registry};
use crate::identity::{CompositeId, MemWal, NamespaceTag, NodeId};
use crate::index::{set_difference, UserKey};
use crate::node::{NodeConfig, RestartFaults, StopKind, StorageNode};
use crate::sync::{
    converge, converge_all, execute_failback, execute_failover, FailoverOutcome, Framework,
};

const DUPLICATE_HISTORY: usize = 4096;
const JITTER_STREAM: u64 = 0x6a69_7474_6572;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    Write(usize),
    PipelineTick,
    PipelineCheckpoint,
    Sample,
    Dedup,
    FaultStart(usize),
    FaultEnd(usize),
}

#[derive(Debug, PartialEq, Eq)]
struct Scheduled {
    at: u64,
    seq: u64,
    event: Event,
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn micros(seconds: f64) -> u64 {
    (seconds * 1e6).round() as u64
}

fn seconds(us: u64) -> f64 {
    us as f64 / 1e6
}

#[derive(Debug, Default)]
struct GroupState {
    live: VecDeque<CompositeId>,
    next_key: u64,
    writes: u64,
    history: Vec<(u64, u64)>,
}

#[derive(Debug, Clone, Copy)]
struct Outage {
    substitute: usize,
    class: FaultClass,
    faults: RestartFaults,
}

struct Dns {
    records: DnsRecordSet,
    registry: Registry,
}

struct Runtime<'a> {
    sc: &'a Scenario,
    faults: Vec<FaultSpec>,
    nodes: Vec<StorageNode>,
    groups: Vec<GroupState>,
    queue: BinaryHeap<Scheduled>,
    seq: u64,
    now: u64,
    horizon: u64,
    rng: ChaCha8Rng,
    jitter_rng: ChaCha8Rng,
    jitter: Option<Normal<f64>>,
    outages: Vec<Option<Outage>>,
    partition: Option<(BTreeSet<usize>, BTreeSet<usize>)>,
    dns: Option<Dns>,
    metrics: Metrics,
    workload_writes: u64,
    bytes_written: u64,
    last_sample: (u64, u64, u64),
    event_seq: usize,
}

pub fn make_payload(fidelity: Fidelity, len: u64, seed: u64) -> Payload {
    match fidelity {
        Fidelity::Virtual => Payload::virtual_block(len, seed),
        Fidelity::Concrete => {
            let mut bytes = vec![0u8; len as usize];
            ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut bytes);
            Payload::concrete(bytes)
        }
    }
}

/// Runs a scenario to its horizon.
pub fn run_scenario(sc: &Scenario) -> Result<Metrics, SimError> {
    sc.validate()?;
    let mut rt = Runtime::new(sc)?;
    rt.seed_inventory()?;
    rt.schedule_initial();
    while let Some(next) = rt.queue.pop() {
        if next.at > rt.horizon {
            break;
        }
        rt.now = next.at;
        rt.handle(next.event)?;
    }
    rt.now = rt.horizon;
    if rt.metrics.samples.last().is_none_or(|s| s.time_seconds < seconds(rt.horizon)) {
        rt.sample();
    }
    rt.finish();
    Ok(rt.metrics)
}

impl<'a> Runtime<'a> {
    fn new(sc: &'a Scenario) -> Result<Self, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
        let baseline = sc.framework.runs(Framework::Hash);
        let mut nids = BTreeSet::new();
        let mut nodes = Vec::with_capacity(sc.cluster.nodes);
        while nodes.len() < sc.cluster.nodes {
            let nid = NodeId::generate(&mut rng);
            if nids.insert(nid) {
                nodes.push(StorageNode::open(nid, Box::new(MemWal::new()), NodeConfig { baseline })?);
            }
        }
        let dns = match &sc.zone {
            Some(zone) => {
                let records = DnsRecordSet::parse(zone)?;
                let mut registry = Registry::new();
                let batch: Vec<_> = nodes.iter().enumerate().map(|(i, n)| (n.nid(), format!("node-{i}"))).collect();
                registry.bulk_register(&records, &batch);
                Some(Dns { records, registry })
            }
            None => None,
        };
        let cv = sc.cost.rto_jitter_cv;
        Ok(Self {
            sc,
            faults: sc.expanded_faults(),
            groups: (0..sc.groups()).map(|_| GroupState::default()).collect(),
            outages: vec![None; nodes.len()],
            nodes,
            queue: BinaryHeap::new(),
            seq: 0,
            now: 0,
            horizon: micros(sc.horizon_seconds),
            jitter_rng: ChaCha8Rng::seed_from_u64(sc.seed ^ JITTER_STREAM),
            jitter: (cv > 0.0).then(|| Normal::new(1.0, cv).expect("validated cv")),
            rng,
            partition: None,
            dns,
            metrics: Metrics { scenario: sc.name.clone(), seed: sc.seed, ..Metrics::default() },
            workload_writes: 0,
            bytes_written: 0,
            last_sample: (0, 0, 0),
            event_seq: 0,
        })
    }

    fn push(&mut self, at: u64, event: Event) {
        self.seq += 1;
        self.queue.push(Scheduled { at, seq: self.seq, event });
    }

    fn baseline_on(&self) -> bool {
        self.sc.framework.runs(Framework::Hash)
    }

    fn seed_inventory(&mut self) -> Result<(), SimError> {
        let (min, max) = (self.sc.inventory.block_size_min, self.sc.inventory.block_size_max);
        for g in 0..self.groups.len() {
            let members = self.sc.group_members(g);
            for _ in 0..self.sc.inventory.blocks_per_group {
                let len = self.rng.gen_range(min..=max);
                let seed = self.rng.gen();
                let key = self.groups[g].next_key;
                self.groups[g].next_key += 1;
                self.commit_write(g, &members, members[0], len, seed, key)?;
            }
        }
        if self.baseline_on() {
            for n in &mut self.nodes {
                n.repair_hash_index()?;
                n.baseline_checkpoint()?;
            }
        }
        Ok(())
    }

    fn schedule_initial(&mut self) {
        let w = &self.sc.workload;
        if w.aggregate_rate > 0.0 {
            let g_count = self.groups.len() as f64;
            let mean_len = (self.sc.inventory.block_size_min + self.sc.inventory.block_size_max) as f64 / 2.0;
            let spacing = mean_len * self.sc.cost.block_scale / (w.aggregate_rate / g_count);
            for g in 0..self.groups.len() {
                self.push(micros(spacing * g as f64 / g_count), Event::Write(g));
            }
        }
        if self.baseline_on() {
            self.push(micros(self.sc.baseline.tick_seconds), Event::PipelineTick);
            self.push(micros(self.sc.baseline.checkpoint_seconds), Event::PipelineCheckpoint);
        }
        if w.dedup_interval_seconds > 0.0 {
            self.push(micros(w.dedup_interval_seconds), Event::Dedup);
        }
        self.push(micros(self.sc.sample_seconds), Event::Sample);
        for (i, f) in self.faults.clone().iter().enumerate() {
            self.push(micros(f.at()), Event::FaultStart(i));
            if let Some(end) = f.until() {
                self.push(micros(end), Event::FaultEnd(i));
            }
        }
    }

    fn handle(&mut self, event: Event) -> Result<(), SimError> {
        match event {
            Event::Write(g) => self.write(g),
            Event::PipelineTick => {
                let c = &self.sc.cost;
                let budget = (c.hash_throughput * c.cores * self.sc.baseline.tick_seconds / c.block_scale) as u64;
                for n in self.nodes.iter_mut().filter(|n| n.is_up()) {
                    n.baseline_tick(budget)?;
                }
                self.push(self.now + micros(self.sc.baseline.tick_seconds), Event::PipelineTick);
                Ok(())
            }
            Event::PipelineCheckpoint => {
                for n in self.nodes.iter_mut().filter(|n| n.is_up()) {
                    n.baseline_checkpoint()?;
                }
                self.push(self.now + micros(self.sc.baseline.checkpoint_seconds), Event::PipelineCheckpoint);
                Ok(())
            }
            Event::Sample => {
                self.sample();
                self.push(self.now + micros(self.sc.sample_seconds), Event::Sample);
                Ok(())
            }
            Event::Dedup => {
                for n in self.nodes.iter_mut().filter(|n| n.is_up() && !n.dr_active()) {
                    let budget = n.block_count();
                    self.metrics.dedup_reclaimed_blocks += n.dedup_pass(budget)? as u64;
                }
                self.push(self.now + micros(self.sc.workload.dedup_interval_seconds), Event::Dedup);
                Ok(())
            }
            Event::FaultStart(i) => self.fault_start(i),
            Event::FaultEnd(i) => self.fault_end(i),
        }
    }

    fn reachable(&self, a: usize, b: usize) -> bool {
        match &self.partition {
            Some((x, y)) => !((x.contains(&a) && y.contains(&b)) || (x.contains(&b) && y.contains(&a))),
            None => true,
        }
    }

    fn write(&mut self, g: usize) -> Result<(), SimError> {
        let w = &self.sc.workload;
        if w.max_ingests.is_some_and(|m| self.workload_writes >= m) {
            return Ok(());
        }
        let (min, max) = (self.sc.inventory.block_size_min, self.sc.inventory.block_size_max);
        let fresh_len = self.rng.gen_range(min..=max);
        let state = &mut self.groups[g];
        let (len, seed) = if w.duplicate_ratio > 0.0 && !state.history.is_empty() && self.rng.gen_bool(w.duplicate_ratio) {
            state.history[self.rng.gen_range(0..state.history.len())]
        } else {
            (fresh_len, self.rng.gen())
        };
        let key = if state.next_key == 0 || self.rng.gen_bool(w.sequential_fraction) {
            state.next_key += 1;
            state.next_key - 1
        } else {
            self.rng.gen_range(0..state.next_key)
        };
        let rate = w.aggregate_rate / self.groups.len() as f64;
        let next = self.now + micros(len as f64 * self.sc.cost.block_scale / rate).max(1);
        self.push(next, Event::Write(g));

        let members = self.sc.group_members(g);
        let up: Vec<usize> = members.iter().copied().filter(|&m| self.nodes[m].is_up()).collect();
        if up.is_empty() {
            self.metrics.dropped_writes += 1;
            return Ok(());
        }
        let writer = match self.sc.cluster.writers {
            Writers::Primary => up[0],
            Writers::All => up[(self.groups[g].writes % up.len() as u64) as usize],
        };
        self.workload_writes += 1;
        self.commit_write(g, &members, writer, len, seed, key)?;
        self.apply_retention(g, &members);
        Ok(())
    }

    fn commit_write(&mut self, g: usize, members: &[usize], writer: usize, len: u64, seed: u64, key: u64) -> Result<(), SimError> {
        let payload = make_payload(self.sc.fidelity, len, seed);
        let id = self.nodes[writer].ingest(payload, Some(UserKey(key)), NamespaceTag::DEFAULT)?;
        let block = self.nodes[writer].export_block(&id)?;
        for &m in members {
            if m != writer && self.nodes[m].is_up() && self.reachable(writer, m) {
                self.nodes[m].import_block(block.clone())?;
                self.metrics.replicated += 1;
            }
        }
        let state = &mut self.groups[g];
        state.live.push_back(id);
        if state.history.len() < DUPLICATE_HISTORY {
            state.history.push((len, seed));
        } else {
            state.history[(state.writes % DUPLICATE_HISTORY as u64) as usize] = (len, seed);
        }
        state.writes += 1;
        self.metrics.ingests += 1;
        self.bytes_written += len;
        if self.sc.record_ids {
            self.metrics.ids.push(id);
        }
        Ok(())
    }

    fn apply_retention(&mut self, g: usize, members: &[usize]) {
        if !self.sc.retention.enabled {
            return;
        }
        let whole = members.iter().all(|&m| self.nodes[m].is_up())
            && members.iter().all(|&a| members.iter().all(|&b| self.reachable(a, b)));
        if !whole {
            return;
        }
        let target = self.sc.inventory.blocks_per_group as usize;
        while self.groups[g].live.len() > target {
            let id = self.groups[g].live.pop_front().expect("nonempty");
            for &m in members {
                self.nodes[m].expire(&id);
            }
            self.metrics.expired += 1;
        }
    }

    fn draw_jitter(&mut self) -> f64 {
        match &self.jitter {
            Some(d) => d.sample(&mut self.jitter_rng),
            None => 1.0,
        }
    }

    fn dial(&mut self, node: usize) -> Result<(), SimError> {
        if let Some(dns) = &self.dns {
            dns.registry.dial(&dns.records, &self.nodes[node].nid())?;
            self.metrics.dns_dials += 1;
        }
        Ok(())
    }

    fn record(&mut self, out: FailoverOutcome, class: FaultClass, node: usize, substitute: usize) -> DrEventRecord {
        let jitter = self.draw_jitter();
        self.event_seq += 1;
        DrEventRecord {
            seq: self.event_seq,
            time_seconds: seconds(self.now),
            class,
            node,
            group: self.sc.group_of(node),
            substitute,
            jitter,
            meta: out.session.meta.map(|r| r.jittered(jitter)),
            hash: out.session.hash.map(|r| r.jittered(jitter)),
            verified: out.verified,
            plans_agree: out.session.plans_agree,
        }
    }

    fn first_up(&self, members: &[usize], except: usize) -> Option<usize> {
        members.iter().copied().find(|&m| m != except && self.nodes[m].is_up())
    }

    fn fault_start(&mut self, i: usize) -> Result<(), SimError> {
        match self.faults[i].clone() {
            FaultSpec::Stop { node, .. } | FaultSpec::Crash { node, .. } => {
                let (class, kind, faults, tear) = match self.faults[i] {
                    FaultSpec::Crash { index_loss, pipeline_crash, wal_tear_bytes, .. } => (
                        FaultClass::Crash,
                        StopKind::Crash,
                        RestartFaults { index_loss, pipeline_crash },
                        wal_tear_bytes,
                    ),
                    _ => (FaultClass::Planned, StopKind::Graceful, RestartFaults::default(), 0),
                };
                self.nodes[node].stop(kind)?;
                if tear > 0 {
                    self.nodes[node].tear_wal_tail(tear)?;
                }
                let g = self.sc.group_of(node);
                let members = self.sc.group_members(g);
                let substitute = self.first_up(&members, node).ok_or(crate::sync::SyncError::NoSurvivingReplica)?;
                if let Some(dns) = &mut self.dns {
                    let service = format!("group-{g}");
                    if dns.records.rebind_cname(&service, &format!("node-{substitute}")).is_ok() {
                        crate::discovery::resolve(&dns.records, &service, crate::discovery::DEFAULT_MAX_DEPTH)?;
                    }
                }
                self.dial(substitute)?;
                let others: Vec<usize> = members
                    .iter()
                    .copied()
                    .filter(|&m| m != node && m != substitute && self.nodes[m].is_up())
                    .collect();
                for m in others {
                    self.dial(m)?;
                }
                let out = execute_failover(&mut self.nodes, &members, node, substitute, self.sc.framework, &self.sc.cost)?;
                let rec = self.record(out, class, node, substitute);
                self.metrics.failovers.push(rec);
                self.outages[node] = Some(Outage { substitute, class, faults });
            }
            FaultSpec::IndexLoss { node, .. } => {
                if self.baseline_on() {
                    self.nodes[node].distrust_hash_index()?;
                }
            }
            FaultSpec::Partition { side_a, side_b, .. } => {
                self.partition = Some((side_a.into_iter().collect(), side_b.into_iter().collect()));
            }
            FaultSpec::Rebind { name, target, .. } => {
                if let Some(dns) = &mut self.dns {
                    dns.records.rebind_cname(&name, &target)?;
                }
            }
        }
        Ok(())
    }

    fn fault_end(&mut self, i: usize) -> Result<(), SimError> {
        match self.faults[i].clone() {
            FaultSpec::Stop { node, .. } | FaultSpec::Crash { node, .. } => {
                let outage = self.outages[node].take().expect("outage recorded at start");
                let report = self.nodes[node].restart(outage.faults)?;
                if self.baseline_on() && self.sc.baseline.rescan_on_restart {
                    self.nodes[node].distrust_hash_index()?;
                }
                let members = self.sc.group_members(self.sc.group_of(node));
                let substitute = if self.nodes[outage.substitute].is_up() {
                    Some(outage.substitute)
                } else {
                    self.first_up(&members, node)
                };
                let Some(substitute) = substitute else {
                    return Ok(());
                };
                self.dial(substitute)?;
                let out = execute_failback(&mut self.nodes, node, substitute, self.sc.framework, report.wal_replayed, &self.sc.cost)?;
                let rec = self.record(out, outage.class, node, substitute);
                self.metrics.failbacks.push(rec);
            }
            FaultSpec::Partition { side_a, side_b, .. } => {
                self.partition = None;
                for g in 0..self.groups.len() {
                    let members = self.sc.group_members(g);
                    let spans = members.iter().any(|m| side_a.contains(m)) && members.iter().any(|m| side_b.contains(m));
                    let up: Vec<usize> = members.iter().copied().filter(|&m| self.nodes[m].is_up()).collect();
                    if !spans || up.len() < 2 {
                        continue;
                    }
                    for &m in &up {
                        self.dial(m)?;
                    }
                    let (rounds, blocks, repeat) = if up.len() == 2 {
                        let first = converge(&mut self.nodes, up[0], up[1], &self.sc.cost)?;
                        let again = converge(&mut self.nodes, up[0], up[1], &self.sc.cost)?;
                        (first.rounds, first.blocks_per_round.iter().sum(), again.blocks_per_round.iter().sum())
                    } else {
                        let first = converge_all(&mut self.nodes, &up, &self.sc.cost)?;
                        let again = converge_all(&mut self.nodes, &up, &self.sc.cost)?;
                        (first.rounds, first.blocks_stored, again.blocks_stored)
                    };
                    let equal_union = up.windows(2).all(|w| set_difference(self.nodes[w[0]].index(), self.nodes[w[1]].index()).is_empty());
                    self.metrics.convergences.push(ConvergeRecord {
                        time_seconds: seconds(self.now),
                        group: g,
                        members: up,
                        rounds,
                        blocks_transferred: blocks,
                        repeat_blocks: repeat,
                        equal_union,
                    });
                    self.apply_retention(g, &members);
                }
            }
            FaultSpec::IndexLoss { .. } | FaultSpec::Rebind { .. } => {}
        }
        Ok(())
    }

    fn sample(&mut self) {
        let s = self.sc.cost.block_scale;
        let entries: u64 = self.nodes.iter().map(|n| n.index().len() as u64).sum();
        let logical: f64 = self.nodes.iter().map(|n| n.index().physical_size_bytes(0.0)).sum::<f64>() * s;
        let physical: f64 = self
            .nodes
            .iter()
            .map(|n| n.index().physical_size_bytes(self.sc.cost.fragmentation_factor))
            .sum::<f64>()
            * s;
        let (t0, ingests0, bytes0) = self.last_sample;
        let dt = seconds(self.now - t0);
        let rate = |d: u64| if dt > 0.0 { d as f64 * s / dt } else { 0.0 };
        let wal: u64 = self.nodes.iter().map(|n| n.wal_bytes()).sum();
        let counters = self.nodes.iter().map(|n| n.counters());
        let (lcv, imm) = counters.fold((0, 0), |acc, c| (acc.0 + c.lcv_violations, acc.1 + c.immutability_violations));
        self.metrics.samples.push(Sample {
            time_seconds: seconds(self.now),
            index_entries: entries,
            logical_index_bytes: logical,
            physical_index_bytes: physical,
            ingests: self.metrics.ingests,
            ingest_rate: rate(self.bytes_written - bytes0),
            id_rate: rate(self.metrics.ingests - ingests0),
            lcv_violations: lcv,
            immutability_violations: imm,
            wal_bytes_per_id: if self.metrics.ingests > 0 { wal as f64 / self.metrics.ingests as f64 } else { 0.0 },
        });
        self.last_sample = (self.now, self.metrics.ingests, self.bytes_written);
    }

    /// Same id bound to different content on two replicas of a group.
    fn immutability_audit(&self) -> u64 {
        let mut bad = 0;
        for g in 0..self.groups.len() {
            let members = self.sc.group_members(g);
            let reference = self.nodes[members[0]].index();
            for &m in &members[1..] {
                let mut a = reference.iter().peekable();
                let mut b = self.nodes[m].index().iter().peekable();
                while let (Some(x), Some(y)) = (a.peek(), b.peek()) {
                    match x.id.cmp(&y.id) {
                        Ordering::Less => {
                            a.next();
                        }
                        Ordering::Greater => {
                            b.next();
                        }
                        Ordering::Equal => {
                            if x.crc != y.crc || x.byte_len != y.byte_len {
                                bad += 1;
                            }
                            a.next();
                            b.next();
                        }
                    }
                }
            }
        }
        bad
    }

    fn finish(&mut self) {
        let mut v = self.metrics.violations;
        for n in &self.nodes {
            let c = n.counters();
            v.lcv += c.lcv_violations;
            v.immutability += c.immutability_violations;
            v.corruption += c.corruption_detected;
        }
        v.immutability += self.immutability_audit();
        if self.sc.record_ids {
            let mut ids = self.metrics.ids.clone();
            ids.sort_unstable();
            v.duplicate_ids = ids.windows(2).filter(|w| w[0].nid == w[1].nid && w[0].lcv == w[1].lcv).count() as u64;
        }
        self.metrics.violations = v;
    }
}
