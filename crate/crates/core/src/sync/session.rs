use std::collections::BTreeSet;

use crate::identity::CompositeId;
use crate::index::{set_difference, IdentifierIndex};
use crate::node::{RepairReport, StorageNode};

use super::plan::{apply_plan, compute_delta_hash, compute_delta_meta, DeltaPlan, ExchangeMode};
use super::{
    pair_mut, CostModel, CpuUsage, DrCounters, DrKind, DrReport, Framework, FrameworkSelection,
    Phases, SyncError,
};

const MAX_CONVERGE_ROUNDS: usize = 4;

/// Reports from one pairwise session. `local` is the first node named.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome {
    pub meta: Option<DrReport>,
    pub hash: Option<DrReport>,
    /// With both frameworks run: whether their plans named the same blocks.
    pub plans_agree: Option<bool>,
    pub blocks_stored: u64,
}

impl SessionOutcome {
    /// The report of the framework that drove state.
    pub fn primary(&self) -> &DrReport {
        self.meta.as_ref().or(self.hash.as_ref()).expect("at least one framework ran")
    }

    pub fn report(&self, f: Framework) -> Option<&DrReport> {
        match f {
            Framework::Meta => self.meta.as_ref(),
            Framework::Hash => self.hash.as_ref(),
        }
    }

    fn absorb(&mut self, other: &SessionOutcome) {
        for (mine, theirs) in [(&mut self.meta, &other.meta), (&mut self.hash, &other.hash)] {
            if let (Some(m), Some(t)) = (mine.as_mut(), theirs.as_ref()) {
                m.absorb(t);
            }
        }
        self.plans_agree = match (self.plans_agree, other.plans_agree) {
            (Some(a), Some(b)) => Some(a && b),
            (a, b) => a.or(b),
        };
        self.blocks_stored += other.blocks_stored;
    }

    fn empty(kind: DrKind, sel: FrameworkSelection) -> Self {
        let zero = |f| DrReport::new(kind, f, Phases::default(), DrCounters::default(), CpuUsage::default());
        Self {
            meta: sel.runs(Framework::Meta).then(|| zero(Framework::Meta)),
            hash: sel.runs(Framework::Hash).then(|| zero(Framework::Hash)),
            plans_agree: None,
            blocks_stored: 0,
        }
    }
}

/// A failover or failback outcome with its post-condition check.
#[derive(Debug, Clone, PartialEq)]
pub struct FailoverOutcome {
    pub session: SessionOutcome,
    /// Set difference against the reference replicas came out empty.
    pub verified: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergeOutcome {
    pub rounds: usize,
    pub blocks_per_round: Vec<u64>,
    pub report: DrReport,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GossipOutcome {
    pub rounds: usize,
    pub exchanges: usize,
    pub blocks_stored: u64,
}

fn report_from_plan(
    plan: &DeltaPlan,
    kind: DrKind,
    framework: Framework,
    wal_replay: f64,
    repair: RepairReport,
    cost: &CostModel,
) -> DrReport {
    let rehash_local = cost.scaled(plan.rehash_bytes_local);
    let rehash_peer = cost.scaled(plan.rehash_bytes_peer);
    let out_bytes = cost.index_wire_bytes(plan.index_entries_sent) + plan.watermark_bytes as f64;
    let in_bytes = cost.index_wire_bytes(plan.index_entries_received) + plan.watermark_bytes as f64;
    let push = cost.scaled(plan.content_bytes_push);
    let pull = cost.scaled(plan.content_bytes_pull);
    let phases = Phases {
        t_hash: cost.hash_seconds(rehash_local.max(rehash_peer)),
        t_index: cost.transfer_seconds(out_bytes.max(in_bytes)) + cost.link_latency_seconds,
        t_delta: cost.transfer_seconds(push.max(pull)),
        t_wal_replay: wal_replay,
    };
    let counters = DrCounters {
        hash_ops: repair.hash_ops,
        content_reads: repair.content_reads,
        comparisons: plan.comparisons,
        network_bytes: (out_bytes + in_bytes + push + pull).round() as u64,
        blocks_transferred: (plan.ids_to_push.len() + plan.ids_to_pull.len()) as u64,
    };
    let cpu = CpuUsage {
        hash_core_seconds: cost.hash_core_seconds(rehash_local),
        transfer_core_seconds: cost.transfer_core_seconds(in_bytes + pull),
    };
    DrReport::new(kind, framework, phases, counters, cpu)
}

fn add_repair(total: &mut RepairReport, r: RepairReport) {
    total.hash_ops += r.hash_ops;
    total.hashed_bytes += r.hashed_bytes;
    total.content_reads += r.content_reads;
}

/// Pays outstanding rehash on both sides, then plans by digest.
fn hash_plan(local: &mut StorageNode, peer: &mut StorageNode) -> Result<(DeltaPlan, RepairReport), SyncError> {
    let before = compute_delta_hash(local, peer)?;
    let mut repair = RepairReport::default();
    add_repair(&mut repair, local.repair_hash_index()?);
    add_repair(&mut repair, peer.repair_hash_index()?);
    let mut plan = compute_delta_hash(local, peer)?;
    debug_assert!(plan.valid);
    plan.rehash_bytes_local = before.rehash_bytes_local;
    plan.rehash_bytes_peer = before.rehash_bytes_peer;
    Ok((plan, repair))
}

fn id_sets(plan: &DeltaPlan) -> (BTreeSet<CompositeId>, BTreeSet<CompositeId>) {
    (plan.ids_to_push.iter().copied().collect(), plan.ids_to_pull.iter().copied().collect())
}

fn sync_nodes(
    local: &mut StorageNode,
    peer: &mut StorageNode,
    sel: FrameworkSelection,
    mode: ExchangeMode,
    kind: DrKind,
    wal_replayed: bool,
    cost: &CostModel,
) -> Result<SessionOutcome, SyncError> {
    for n in [&*local, &*peer] {
        if !n.is_up() {
            return Err(crate::node::NodeError::NodeDown(n.nid()).into());
        }
    }
    let replay = if wal_replayed { cost.wal_replay_seconds } else { 0.0 };
    let hash = if sel.runs(Framework::Hash) { Some(hash_plan(local, peer)?) } else { None };
    let meta = if sel.runs(Framework::Meta) {
        let cp = local.checkpoint_for(&peer.nid());
        Some(compute_delta_meta(local.index(), &cp, peer.index(), mode)?)
    } else {
        None
    };
    let plans_agree = match (&meta, &hash) {
        (Some(m), Some((h, _))) => Some(id_sets(m) == id_sets(h)),
        _ => None,
    };
    let driving = meta.as_ref().or(hash.as_ref().map(|(p, _)| p)).expect("selection runs a framework");
    let blocks_stored = apply_plan(local, peer, driving)?;

    let mut cp = local.checkpoint_for(&peer.nid());
    cp.advance_to(local.index());
    let mut back = peer.checkpoint_for(&local.nid());
    for (nid, lcv) in cp.iter() {
        back.advance(*nid, *lcv);
    }
    local.set_checkpoint(cp);
    peer.set_checkpoint(back);

    Ok(SessionOutcome {
        meta: meta.map(|p| report_from_plan(&p, kind, Framework::Meta, replay, RepairReport::default(), cost)),
        hash: hash.map(|(p, r)| report_from_plan(&p, kind, Framework::Hash, 0.0, r, cost)),
        plans_agree,
        blocks_stored,
    })
}

/// One bidirectional exchange between `nodes[a]` and `nodes[b]`.
pub fn sync_pair(
    nodes: &mut [StorageNode],
    a: usize,
    b: usize,
    sel: FrameworkSelection,
    mode: ExchangeMode,
    kind: DrKind,
    cost: &CostModel,
) -> Result<SessionOutcome, SyncError> {
    let (x, y) = pair_mut(nodes, a, b)?;
    sync_nodes(x, y, sel, mode, kind, false, cost)
}

/// True when neither index lacks an id the other holds, ignoring ids the
/// lacking side has already expired.
pub(crate) fn holds_union(a: &IdentifierIndex, b: &IdentifierIndex) -> bool {
    let d = set_difference(a, b);
    d.missing_in_b.iter().all(|id| id.lcv <= b.retention_floor(&id.nid))
        && d.missing_in_a.iter().all(|id| id.lcv <= a.retention_floor(&id.nid))
}

fn covers(sup: &IdentifierIndex, sub: &IdentifierIndex) -> bool {
    set_difference(sub, sup).missing_in_b.iter().all(|id| id.lcv <= sup.retention_floor(&id.nid))
}

/// The substitute takes over for `failed`, synchronizing against every other
/// surviving member of `group`.
pub fn execute_failover(
    nodes: &mut [StorageNode],
    group: &[usize],
    failed: usize,
    substitute: usize,
    sel: FrameworkSelection,
    cost: &CostModel,
) -> Result<FailoverOutcome, SyncError> {
    if nodes[failed].is_up() {
        return Err(SyncError::InvalidState(format!("node {} has not failed", nodes[failed].nid())));
    }
    if substitute == failed || !nodes[substitute].is_up() {
        return Err(SyncError::NoSurvivingReplica);
    }
    let survivors: Vec<usize> = group
        .iter()
        .copied()
        .filter(|&i| i != failed && i != substitute && nodes[i].is_up())
        .collect();
    let mut session = SessionOutcome::empty(DrKind::Failover, sel);
    for &s in &survivors {
        let (sub, peer) = pair_mut(nodes, substitute, s)?;
        let one = sync_nodes(sub, peer, sel, ExchangeMode::Full, DrKind::Failover, false, cost)?;
        session.absorb(&one);
    }
    let verified = survivors.iter().all(|&s| covers(nodes[substitute].index(), nodes[s].index()));
    Ok(FailoverOutcome { session, verified })
}

/// The restarted node reacquires what the substitute took in during its absence.
pub fn execute_failback(
    nodes: &mut [StorageNode],
    recovered: usize,
    substitute: usize,
    sel: FrameworkSelection,
    wal_replayed: bool,
    cost: &CostModel,
) -> Result<FailoverOutcome, SyncError> {
    let (rec, sub) = pair_mut(nodes, recovered, substitute)?;
    let session = sync_nodes(rec, sub, sel, ExchangeMode::Full, DrKind::Failback, wal_replayed, cost)?;
    let verified = covers(nodes[recovered].index(), nodes[substitute].index());
    Ok(FailoverOutcome { session, verified })
}

/// Pairwise anti-entropy until both sides hold the union.
pub fn converge(nodes: &mut [StorageNode], a: usize, b: usize, cost: &CostModel) -> Result<ConvergeOutcome, SyncError> {
    let mut blocks_per_round = Vec::new();
    let mut report: Option<DrReport> = None;
    for _ in 0..MAX_CONVERGE_ROUNDS {
        let out = sync_pair(nodes, a, b, FrameworkSelection::Meta, ExchangeMode::Full, DrKind::Converge, cost)?;
        blocks_per_round.push(out.blocks_stored);
        let r = out.meta.expect("meta ran");
        match report.as_mut() {
            Some(acc) => acc.absorb(&r),
            None => report = Some(r),
        }
        if holds_union(nodes[a].index(), nodes[b].index()) {
            return Ok(ConvergeOutcome {
                rounds: blocks_per_round.len(),
                blocks_per_round,
                report: report.expect("one round ran"),
            });
        }
    }
    Err(SyncError::ConvergenceStalled { rounds: MAX_CONVERGE_ROUNDS })
}

/// Converges a set of nodes. In round `r` the member at position `i` (by node
/// id order) exchanges with position `(i + 2^r) mod k`.
pub fn converge_all(nodes: &mut [StorageNode], members: &[usize], cost: &CostModel) -> Result<GossipOutcome, SyncError> {
    let mut order: Vec<usize> = members.to_vec();
    order.sort_by_key(|&i| nodes[i].nid());
    order.dedup();
    let k = order.len();
    let mut out = GossipOutcome { rounds: 0, exchanges: 0, blocks_stored: 0 };
    let mut stride = 1;
    while stride < k {
        for i in 0..k {
            let j = (i + stride) % k;
            let s = sync_pair(nodes, order[i], order[j], FrameworkSelection::Meta, ExchangeMode::Full, DrKind::Converge, cost)?;
            out.exchanges += 1;
            out.blocks_stored += s.blocks_stored;
        }
        out.rounds += 1;
        stride *= 2;
    }
    let all = order.windows(2).all(|w| holds_union(nodes[w[0]].index(), nodes[w[1]].index()));
    if !all {
        return Err(SyncError::ConvergenceStalled { rounds: out.rounds });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::Payload;
    use crate::identity::{MemWal, NamespaceTag, NodeId};
    use crate::index::{stream_len, Checkpoint};
    use crate::node::{NodeConfig, RestartFaults, StopKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cluster(k: u8, baseline: bool) -> Vec<StorageNode> {
        (0..k)
            .map(|i| StorageNode::open(NodeId::from_bytes([i + 1; 16]), Box::new(MemWal::new()), NodeConfig { baseline }).unwrap())
            .collect()
    }

    fn write(n: &mut StorageNode, seed: u64, len: u64) -> CompositeId {
        n.ingest(Payload::virtual_block(len, seed), None, NamespaceTag::DEFAULT).unwrap()
    }

    fn replicate(nodes: &mut [StorageNode], from: usize, id: CompositeId) {
        let blk = nodes[from].export_block(&id).unwrap();
        for (i, n) in nodes.iter_mut().enumerate() {
            if i != from && n.is_up() {
                n.import_block(blk.clone()).unwrap();
            }
        }
    }

    fn cost() -> CostModel {
        CostModel::default()
    }

    #[test]
    fn synchronized_incremental_plan_is_headers_and_watermarks() {
        let mut nodes = cluster(2, false);
        for s in 0..20 {
            let id = write(&mut nodes[0], s, 10);
            replicate(&mut nodes, 0, id);
        }
        sync_pair(&mut nodes, 0, 1, FrameworkSelection::Meta, ExchangeMode::Full, DrKind::Converge, &cost()).unwrap();
        let cp = nodes[0].checkpoint_for(&nodes[1].nid());
        let plan = compute_delta_meta(nodes[0].index(), &cp, nodes[1].index(), ExchangeMode::Incremental).unwrap();
        assert!(plan.is_empty());
        assert_eq!(plan.index_bytes_exchanged(), 2 * 16 + 2 * 24);
    }

    #[test]
    fn missing_local_writes_are_exactly_the_push_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let mut nodes = cluster(2, false);
            let mut expected = BTreeSet::new();
            for s in 0..300 {
                let id = write(&mut nodes[0], s, rng.gen_range(1..100));
                if rng.gen_bool(0.8) {
                    replicate(&mut nodes, 0, id);
                } else {
                    expected.insert(id);
                }
            }
            let cp = Checkpoint::new(nodes[1].nid());
            let plan = compute_delta_meta(nodes[0].index(), &cp, nodes[1].index(), ExchangeMode::Full).unwrap();
            let oracle: BTreeSet<_> = nodes[0].index().ids().filter(|id| !nodes[1].index().contains(id)).collect();
            assert_eq!(oracle, expected);
            assert_eq!(plan.ids_to_push.iter().copied().collect::<BTreeSet<_>>(), expected);
            assert!(plan.ids_to_pull.is_empty());
            let bytes: u64 = expected.iter().map(|id| nodes[0].index().get(id).unwrap().byte_len).sum();
            assert_eq!(plan.content_bytes_to_transfer(), bytes);
        }
    }

    #[test]
    fn incremental_exchange_ships_only_the_delta() {
        let mut nodes = cluster(2, false);
        for s in 0..5_000 {
            let id = write(&mut nodes[0], s, 10);
            replicate(&mut nodes, 0, id);
        }
        sync_pair(&mut nodes, 0, 1, FrameworkSelection::Meta, ExchangeMode::Full, DrKind::Converge, &cost()).unwrap();
        for s in 0..37 {
            write(&mut nodes[0], 10_000 + s, 10);
        }
        let cp = nodes[0].checkpoint_for(&nodes[1].nid());
        let plan = compute_delta_meta(nodes[0].index(), &cp, nodes[1].index(), ExchangeMode::Incremental).unwrap();
        assert_eq!(plan.index_entries_sent, 37);
        assert_eq!(plan.index_entries_received, 0);
        assert_eq!(plan.ids_to_push.len(), 37);
        let full = compute_delta_meta(nodes[0].index(), &cp, nodes[1].index(), ExchangeMode::Full).unwrap();
        assert_eq!(full.ids_to_push, plan.ids_to_push);
        assert_eq!(full.index_bytes_exchanged(), stream_len(5_037) + stream_len(5_000));
    }

    #[test]
    fn hash_plan_conditions() {
        let mut nodes = cluster(2, true);
        let mut lag_bytes = 0;
        for s in 0..50 {
            let id = write(&mut nodes[0], s, 100 + s);
            replicate(&mut nodes, 0, id);
        }
        nodes[0].repair_hash_index().unwrap();
        nodes[1].repair_hash_index().unwrap();
        let fresh = compute_delta_hash(&nodes[0], &nodes[1]).unwrap();
        assert!(fresh.valid && fresh.is_empty());
        assert_eq!(fresh.rehash_required_bytes(), 0);

        for s in 50..60 {
            lag_bytes += 100 + s;
            write(&mut nodes[0], s, 100 + s);
        }
        let stale = compute_delta_hash(&nodes[0], &nodes[1]).unwrap();
        assert!(!stale.valid);
        assert_eq!(stale.rehash_bytes_local, lag_bytes);

        let inventory = nodes[1].stored_bytes();
        nodes[1].crash().unwrap();
        nodes[1].restart(RestartFaults { index_loss: true, pipeline_crash: false }).unwrap();
        let lost = compute_delta_hash(&nodes[0], &nodes[1]).unwrap();
        assert_eq!(lost.rehash_bytes_peer, inventory);
    }

    #[test]
    fn zero_delta_meta_failover_is_index_only() {
        let mut nodes = cluster(3, true);
        for s in 0..100 {
            let id = write(&mut nodes[0], s, 1_000);
            replicate(&mut nodes, 0, id);
        }
        nodes[0].crash().unwrap();
        let out = execute_failover(&mut nodes, &[0, 1, 2], 0, 1, FrameworkSelection::Meta, &cost()).unwrap();
        let r = out.session.meta.unwrap();
        assert!(out.verified);
        assert_eq!(r.phases.t_hash, 0.0);
        assert_eq!(r.phases.t_delta, 0.0);
        assert!(r.virtual_rto_seconds > 0.0);
        assert_eq!(r.virtual_rto_seconds, r.phases.t_index);
        nodes[1].crash().unwrap();
        nodes[2].crash().unwrap();
        assert!(matches!(
            execute_failover(&mut nodes, &[0, 1, 2], 0, 1, FrameworkSelection::Meta, &cost()),
            Err(SyncError::NoSurvivingReplica)
        ));
    }

    #[test]
    fn failback_without_absence_writes() {
        let mut nodes = cluster(2, false);
        for s in 0..10 {
            let id = write(&mut nodes[0], s, 10);
            replicate(&mut nodes, 0, id);
        }
        nodes[1].stop(StopKind::Crash).unwrap();
        nodes[1].restart(RestartFaults::default()).unwrap();
        let out = execute_failback(&mut nodes, 1, 0, FrameworkSelection::Meta, true, &cost()).unwrap();
        let r = out.session.meta.unwrap();
        assert_eq!(r.phases.t_delta, 0.0);
        assert_eq!(r.virtual_rto_seconds, r.phases.t_index + 18.0);
    }

    #[test]
    fn failback_acquires_the_union_of_absence_writes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for round in 0..10 {
            let mut nodes = cluster(3, false);
            for s in 0..50 {
                let id = write(&mut nodes[0], s, 10);
                replicate(&mut nodes, 0, id);
            }
            nodes[2].crash().unwrap();
            let mut oracle: BTreeSet<CompositeId> = nodes[2].index().ids().collect();
            for s in 0..rng.gen_range(0..200) {
                let w = rng.gen_range(0..2);
                let id = write(&mut nodes[w], 1_000 * (round + 1) + s, rng.gen_range(1..50));
                if rng.gen_bool(0.5) {
                    replicate(&mut nodes, w, id);
                }
                oracle.insert(id);
            }
            execute_failover(&mut nodes, &[0, 1, 2], 2, 0, FrameworkSelection::Meta, &cost()).unwrap();
            nodes[2].restart(RestartFaults::default()).unwrap();
            let out = execute_failback(&mut nodes, 2, 0, FrameworkSelection::Meta, true, &cost()).unwrap();
            assert!(out.verified);
            assert_eq!(nodes[2].index().ids().collect::<BTreeSet<_>>(), oracle);
        }
    }

    #[test]
    fn converge_is_one_round_and_idempotent() {
        let mut nodes = cluster(2, false);
        for s in 0..30 {
            write(&mut nodes[0], s, 5);
            write(&mut nodes[1], 100 + s, 5);
        }
        let first = converge(&mut nodes, 0, 1, &cost()).unwrap();
        assert_eq!(first.rounds, 1);
        assert_eq!(first.blocks_per_round, vec![60]);
        let again = converge(&mut nodes, 0, 1, &cost()).unwrap();
        assert_eq!(again.rounds, 1);
        assert_eq!(again.blocks_per_round, vec![0]);
        assert_eq!(again.report.counters.blocks_transferred, 0);
    }

    #[test]
    fn gossip_converges_k_nodes() {
        for k in 2..=7u8 {
            let mut nodes = cluster(k, false);
            for (i, n) in nodes.iter_mut().enumerate() {
                write(n, i as u64, 5);
            }
            let members: Vec<usize> = (0..k as usize).collect();
            let out = converge_all(&mut nodes, &members, &cost()).unwrap();
            assert!(out.rounds <= (k as usize - 1).max(1));
            for n in &nodes {
                assert_eq!(n.index().len(), k as usize);
            }
        }
    }

    #[test]
    fn shadow_mode_plans_agree_and_bytes_match() {
        let mut nodes = cluster(2, true);
        for s in 0..200 {
            let id = write(&mut nodes[0], s, 64);
            if s % 3 != 0 {
                replicate(&mut nodes, 0, id);
            }
        }
        for s in 0..40 {
            write(&mut nodes[1], 5_000 + s, 32);
        }
        let out = sync_pair(&mut nodes, 0, 1, FrameworkSelection::BothShadow, ExchangeMode::Full, DrKind::Failback, &cost()).unwrap();
        assert_eq!(out.plans_agree, Some(true));
        let (m, h) = (out.meta.unwrap(), out.hash.unwrap());
        assert_eq!(m.counters.network_bytes, h.counters.network_bytes);
        assert_eq!(m.counters.hash_ops, 0);
        assert_eq!(m.counters.content_reads, 0);
        assert!(h.counters.hash_ops > 0);
        assert!(h.phases.t_hash > 0.0);
        assert_eq!(m.phases.t_hash, 0.0);
        let contents = |n: &StorageNode| n.blocks().map(|(_, b)| b.payload.fingerprint()).collect::<BTreeSet<_>>();
        assert_eq!(contents(&nodes[0]), contents(&nodes[1]));
    }

    #[test]
    fn hash_framework_drives_state_too() {
        let mut nodes = cluster(2, true);
        for s in 0..40 {
            write(&mut nodes[0], s, 8);
        }
        let out = sync_pair(&mut nodes, 0, 1, FrameworkSelection::Hash, ExchangeMode::Full, DrKind::Converge, &cost()).unwrap();
        assert!(out.meta.is_none());
        assert_eq!(out.blocks_stored, 40);
        assert_eq!(nodes[1].index().len(), 40);
    }
}
