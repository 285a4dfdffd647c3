//! Property suites behind `metadr verify`.
//!
//! Each check returns a [`Check`]; a suite passes iff every check does. With
//! `inject_bug` set, one deliberate defect is planted per suite so the failure
//! path can be exercised end to end.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use metadr::block::Payload;
use metadr::checksum::crc32c;
use metadr::hashline::{empty_digest, fingerprint_block, merkle_diff, Digest, HashMeter, MerkleTree};
use metadr::identity::{
    encode_wal_record, recover_clock, CompositeId, LogicalClock, MemWal, NamespaceTag, NodeId,
    WAL_RECORD_LEN,
};
use metadr::index::{set_difference, IdentifierIndex, IndexEntry, UserKey};
use metadr::node::{NodeConfig, RestartFaults, StopKind, StorageNode};
use metadr::simnet::{run_scenario, FaultSpec, Fidelity, Scenario, Writers};
use metadr::sync::{
    compute_delta_hash, compute_delta_meta, execute_failback, execute_failover, reconcile_split_brain,
    sync_pair, CostModel, DrKind, ExchangeMode, FrameworkSelection, ReconciliationPolicy,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Identity,
    Sync,
    Baseline,
    All,
}

impl Suite {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "identity" => Suite::Identity,
            "sync" => Suite::Sync,
            "baseline" => Suite::Baseline,
            "all" => Suite::All,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Check {
    pub suite: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(suite: &'static str, name: &'static str, passed: bool, detail: String) -> Check {
    Check { suite, name, passed, detail }
}

#[derive(Debug, Clone, Copy)]
pub struct Options {
    pub seed: u64,
    pub inject_bug: bool,
}

pub fn run(suite: Suite, opts: Options) -> Vec<Check> {
    let mut out = Vec::new();
    if matches!(suite, Suite::Identity | Suite::All) {
        out.extend(identity_suite(opts));
    }
    if matches!(suite, Suite::Sync | Suite::All) {
        out.extend(sync_suite(opts));
    }
    if matches!(suite, Suite::Baseline | Suite::All) {
        out.extend(baseline_suite(opts));
    }
    out
}

// ---- identity ----

pub fn identity_suite(opts: Options) -> Vec<Check> {
    let u = uniqueness(opts.seed..opts.seed + 100, 8, 1_000, opts.inject_bug);
    let t = wal_truncation_sweep(opts.seed, 8, opts.inject_bug);
    let codec = id_codec(opts.seed, 10_000);
    vec![
        check(
            "identity",
            "unique ids under concurrent ingest and crashes",
            u.events >= 100_000 && u.duplicates == 0 && u.regressions == 0,
            format!(
                "{} scenarios, {} events, {} crashes ({} torn), {} duplicates, {} regressions",
                u.scenarios, u.events, u.crashes, u.torn, u.duplicates, u.regressions
            ),
        ),
        check(
            "identity",
            "WAL truncated at every byte offset",
            t.failures == 0,
            format!("{} offsets, {} failures", t.offsets, t.failures),
        ),
        check("identity", "id encoding round-trips and orders by (nid, lcv)", codec.0, codec.1),
        check(
            "identity",
            "CRC-32C check value",
            crc32c(b"123456789") == 0xE306_9283 && crc32c(b"") == 0,
            format!("crc32c(\"123456789\") = {:#010x}", crc32c(b"123456789")),
        ),
    ]
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UniquenessReport {
    pub scenarios: u64,
    pub events: u64,
    pub crashes: u64,
    pub torn: u64,
    pub duplicates: u64,
    /// A thread saw a node's lcv fail to rise between two of its own calls.
    pub regressions: u64,
}

const THREADS: u64 = 4;

/// Per seed: `nodes` clocks, [`THREADS`] threads ingesting in interleaved
/// order, random crash/restart with torn tails, then a small-WAL truncation
/// sweep. All ids minted anywhere in a seed are checked for `(nid, lcv)`
/// uniqueness.
pub fn uniqueness(seeds: std::ops::Range<u64>, nodes: usize, events_per_seed: u64, bug: bool) -> UniquenessReport {
    let mut total = UniquenessReport::default();
    for seed in seeds {
        let r = uniqueness_one(seed, nodes, events_per_seed, bug);
        total.scenarios += 1;
        total.events += r.events;
        total.crashes += r.crashes;
        total.torn += r.torn;
        total.duplicates += r.duplicates;
        total.regressions += r.regressions;
    }
    total
}

fn fresh_clock() -> LogicalClock {
    recover_clock(Box::new(MemWal::new())).expect("empty WAL recovers").0
}

fn uniqueness_one(seed: u64, nodes: usize, events: u64, bug: bool) -> UniquenessReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nids = BTreeSet::new();
    while nids.len() < nodes {
        nids.insert(NodeId::generate(&mut rng));
    }
    let nids: Vec<NodeId> = nids.into_iter().collect();
    let slots: Vec<Mutex<Option<LogicalClock>>> = (0..nodes).map(|_| Mutex::new(Some(fresh_clock()))).collect();
    let per_thread = events / THREADS;

    let results: Vec<(Vec<CompositeId>, u64, u64, u64)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..THREADS)
            .map(|t| {
                let (slots, nids) = (&slots, &nids);
                s.spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(t));
                    let mut seen = Vec::with_capacity(per_thread as usize);
                    let mut last = vec![0u64; nids.len()];
                    let (mut crashes, mut torn, mut regressions) = (0, 0, 0);
                    for _ in 0..per_thread {
                        let i = rng.gen_range(0..nids.len());
                        let mut slot = slots[i].lock().expect("slot lock");
                        if rng.gen_bool(0.01) {
                            let clock = slot.take().expect("clock present");
                            let next = clock.last_committed() + 1;
                            let mut image = clock.into_wal().read_all().expect("mem WAL reads");
                            let tear = rng.gen_range(0..WAL_RECORD_LEN);
                            if tear > 0 {
                                image.extend_from_slice(&encode_wal_record(next)[..tear]);
                                torn += 1;
                            }
                            crashes += 1;
                            *slot = Some(if bug {
                                fresh_clock()
                            } else {
                                recover_clock(Box::new(MemWal::from_bytes(image))).expect("recovers").0
                            });
                        }
                        let id = slot.as_ref().expect("clock present").next_id(nids[i], NamespaceTag::DEFAULT).expect("append");
                        drop(slot);
                        if id.lcv <= last[i] {
                            regressions += 1;
                        }
                        last[i] = id.lcv;
                        seen.push(id);
                    }
                    (seen, crashes, torn, regressions)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker")).collect()
    });

    let mut report = UniquenessReport::default();
    let mut all = Vec::new();
    for (ids, c, t, r) in results {
        report.crashes += c;
        report.torn += t;
        report.regressions += r;
        all.extend(ids);
    }
    // The small-WAL sweep mints under its own node id.
    let sweep_nid = NodeId::generate(&mut rng);
    let records = rng.gen_range(3..=8);
    let (sweep_ids, sweep) = truncation_sweep(sweep_nid, records, bug);
    report.crashes += sweep.offsets;
    all.extend(sweep_ids);

    report.events = all.len() as u64;
    let mut keys: Vec<(NodeId, u64)> = all.iter().map(|id| (id.nid, id.lcv)).collect();
    keys.sort_unstable();
    report.duplicates = keys.windows(2).filter(|w| w[0] == w[1]).count() as u64;
    report
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TruncationReport {
    pub offsets: u64,
    pub failures: u64,
}

pub fn wal_truncation_sweep(seed: u64, records: usize, bug: bool) -> TruncationReport {
    let nid = NodeId::generate(&mut ChaCha8Rng::seed_from_u64(seed));
    truncation_sweep(nid, records, bug).1
}

/// Writes `records` ids, then for every prefix length of the WAL image
/// restarts from that prefix and mints three more ids. Ids whose record is
/// wholly inside the prefix were exposed; each offset forms its own history,
/// so post-restart ids are only compared with that offset's exposed ids.
fn truncation_sweep(nid: NodeId, records: usize, bug: bool) -> (Vec<CompositeId>, TruncationReport) {
    let clock = fresh_clock();
    for _ in 0..records {
        clock.next_id(nid, NamespaceTag::DEFAULT).expect("append");
    }
    let image = clock.into_wal().read_all().expect("reads");
    let mut report = TruncationReport::default();
    let mut minted = Vec::new();
    for cut in 0..=image.len() {
        report.offsets += 1;
        let exposed = (cut / WAL_RECORD_LEN) as u64;
        let wal = MemWal::from_bytes(image[..cut].to_vec());
        let (clock, rec) = if bug { recover_clock(Box::new(MemWal::new())) } else { recover_clock(Box::new(wal)) }.expect("recovers");
        let torn = cut % WAL_RECORD_LEN != 0;
        let mut ok = bug || (rec.torn_bytes_discarded as usize == cut % WAL_RECORD_LEN && rec.burned.is_some() == torn);
        let mut prev = exposed;
        let mut history: Vec<CompositeId> = (1..=exposed).map(|l| CompositeId::new(nid, l, NamespaceTag::DEFAULT)).collect();
        for _ in 0..3 {
            let id = clock.next_id(nid, NamespaceTag::DEFAULT).expect("append");
            ok &= id.lcv > prev;
            prev = id.lcv;
            history.push(id);
        }
        let distinct: BTreeSet<u64> = history.iter().map(|id| id.lcv).collect();
        ok &= distinct.len() == history.len();
        if !ok {
            report.failures += 1;
        }
        // Only the last offset's history continues the real log.
        if cut == image.len() {
            minted = history;
        }
    }
    (minted, report)
}

fn id_codec(seed: u64, n: usize) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0de);
    let mut bad = 0;
    for _ in 0..n {
        let a = CompositeId::new(NodeId::generate(&mut rng), rng.gen(), NamespaceTag(rng.gen()));
        let b = CompositeId::new(if rng.gen_bool(0.5) { a.nid } else { NodeId::generate(&mut rng) }, rng.gen(), NamespaceTag(rng.gen()));
        if CompositeId::decode(&a.encode()).ok() != Some(a) {
            bad += 1;
        }
        let expect = (a.nid, a.lcv).cmp(&(b.nid, b.lcv));
        if expect != std::cmp::Ordering::Equal && a.cmp(&b) != expect {
            bad += 1;
        }
        if a.encode().cmp(&b.encode()) != a.cmp(&b) {
            bad += 1;
        }
    }
    (bad == 0, format!("{n} random pairs, {bad} mismatches"))
}

// ---- sync ----

pub fn sync_suite(opts: Options) -> Vec<Check> {
    let sd = set_difference_oracle(opts.seed, 200);
    let ea = entries_above_oracle(opts.seed, 200);
    let fe = framework_equivalence(opts.seed, 2_000, opts.inject_bug);
    let t2 = partition_convergence(opts.seed..opts.seed + 100);
    let sb = split_brain(opts.seed);
    vec![
        check("sync", "set_difference matches brute force", sd.1 == 0, format!("{} trials, {} mismatches", sd.0, sd.1)),
        check("sync", "entries_above matches linear filter", ea.1 == 0, format!("{} trials, {} mismatches", ea.0, ea.1)),
        check(
            "sync",
            "fresh-index frameworks move the same blocks",
            fe.plans_equal && fe.stores_identical,
            format!(
                "{} blocks, {} moved, plans equal: {}, stores byte-identical: {}",
                fe.blocks, fe.moved, fe.plans_equal, fe.stores_identical
            ),
        ),
        check(
            "sync",
            "partition heal converges to the union in one round",
            t2.scenarios == t2.one_round && t2.scenarios == t2.idempotent && t2.scenarios == t2.equal_union,
            format!(
                "{} scenarios: {} one-round, {} idempotent, {} equal union",
                t2.scenarios, t2.one_round, t2.idempotent, t2.equal_union
            ),
        ),
        check("sync", "split-brain merge has no id collisions", sb.0, sb.1),
    ]
}

fn random_index(rng: &mut ChaCha8Rng, nids: &[NodeId], max_lcv: u64, keep: f64) -> IdentifierIndex {
    let mut idx = IdentifierIndex::new();
    let mut loc = 0;
    for nid in nids {
        for lcv in 1..=max_lcv {
            if rng.gen_bool(keep) {
                loc += 1;
                idx.insert(IndexEntry {
                    id: CompositeId::new(*nid, lcv, NamespaceTag::DEFAULT),
                    location: loc,
                    byte_len: 4096,
                    crc: 0,
                    user_key: None,
                })
                .expect("fresh entry");
            }
        }
    }
    idx
}

/// Returns (trials, mismatches).
pub fn set_difference_oracle(seed: u64, trials: usize) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5d1f);
    let mut bad = 0;
    for _ in 0..trials {
        let nids: Vec<NodeId> = (0..rng.gen_range(1..5)).map(|_| NodeId::generate(&mut rng)).collect();
        let max = rng.gen_range(0..60);
        let (pa, pb) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let a = random_index(&mut rng, &nids, max, pa);
        let b = random_index(&mut rng, &nids, max, pb);
        let d = set_difference(&a, &b);
        let sa: BTreeSet<CompositeId> = a.ids().collect();
        let sb: BTreeSet<CompositeId> = b.ids().collect();
        let only_a: Vec<CompositeId> = sa.difference(&sb).copied().collect();
        let only_b: Vec<CompositeId> = sb.difference(&sa).copied().collect();
        if d.missing_in_b != only_a || d.missing_in_a != only_b || d.comparisons > (sa.len() + sb.len()) as u64 {
            bad += 1;
        }
    }
    (trials, bad)
}

pub fn entries_above_oracle(seed: u64, trials: usize) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xab0e);
    let mut bad = 0;
    for _ in 0..trials {
        let nids: Vec<NodeId> = (0..rng.gen_range(1..4)).map(|_| NodeId::generate(&mut rng)).collect();
        let max = rng.gen_range(0..80);
        let density = rng.gen_range(0.1..1.0);
        let idx = random_index(&mut rng, &nids, max, density);
        let nid = nids[rng.gen_range(0..nids.len())];
        let wm = rng.gen_range(0..=max + 1);
        let fast: Vec<CompositeId> = idx.entries_above(&nid, wm).map(|e| e.id).collect();
        let slow: Vec<CompositeId> = idx.iter().filter(|e| e.id.nid == nid && e.id.lcv > wm).map(|e| e.id).collect();
        if fast != slow {
            bad += 1;
        }
    }
    (trials, bad)
}

fn concrete(rng: &mut ChaCha8Rng, min: usize, max: usize) -> Payload {
    let mut bytes = vec![0u8; rng.gen_range(min..=max)];
    rng.fill(&mut bytes[..]);
    Payload::concrete(bytes)
}

fn open_nodes(rng: &mut ChaCha8Rng, k: usize, baseline: bool) -> Vec<StorageNode> {
    let mut nids = BTreeSet::new();
    while nids.len() < k {
        nids.insert(NodeId::generate(rng));
    }
    nids.into_iter()
        .map(|nid| StorageNode::open(nid, Box::new(MemWal::new()), NodeConfig { baseline }).expect("opens"))
        .collect()
}

fn replicate(nodes: &mut [StorageNode], from: usize, to: &[usize], id: CompositeId) {
    let block = nodes[from].export_block(&id).expect("exported");
    for &t in to {
        nodes[t].import_block(block.clone()).expect("imported");
    }
}

/// Two concrete replicas with diverged contents and fully hashed digest indexes.
fn diverged_pair(seed: u64, blocks: usize) -> Vec<StorageNode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = open_nodes(&mut rng, 2, true);
    for _ in 0..blocks {
        let w = rng.gen_range(0..2);
        let id = nodes[w].ingest(concrete(&mut rng, 64, 1024), None, NamespaceTag::DEFAULT).expect("ingest");
        if rng.gen_bool(0.8) {
            replicate(&mut nodes, w, &[1 - w], id);
        }
    }
    for n in &mut nodes {
        n.repair_hash_index().expect("baseline on");
    }
    nodes
}

fn store_image(n: &StorageNode) -> BTreeMap<CompositeId, Vec<u8>> {
    n.blocks()
        .map(|(_, b)| (b.id, b.payload.as_bytes().expect("concrete").to_vec()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EquivalenceReport {
    pub blocks: usize,
    pub moved: u64,
    pub plans_equal: bool,
    pub stores_identical: bool,
}

/// Plans by both routes must name the same blocks; syncing once by each
/// route (on identical copies) must leave byte-identical stores.
pub fn framework_equivalence(seed: u64, blocks: usize, bug: bool) -> EquivalenceReport {
    let cost = CostModel::default();
    let mut by_meta = diverged_pair(seed, blocks);
    let mut by_hash = diverged_pair(seed, blocks);

    let cp = by_meta[0].checkpoint_for(&by_meta[1].nid());
    let mp = compute_delta_meta(by_meta[0].index(), &cp, by_meta[1].index(), ExchangeMode::Full).expect("streams decode");
    let hp = compute_delta_hash(&by_hash[0], &by_hash[1]).expect("indexes fresh");
    let set = |v: &[CompositeId]| v.iter().copied().collect::<BTreeSet<_>>();
    let plans_equal = hp.valid && set(&mp.ids_to_push) == set(&hp.ids_to_push) && set(&mp.ids_to_pull) == set(&hp.ids_to_pull);

    let m = sync_pair(&mut by_meta, 0, 1, FrameworkSelection::Meta, ExchangeMode::Full, DrKind::Converge, &cost).expect("meta sync");
    sync_pair(&mut by_hash, 0, 1, FrameworkSelection::Hash, ExchangeMode::Full, DrKind::Converge, &cost).expect("hash sync");
    if bug {
        let first = by_hash[0].index().ids().next();
        if let Some(id) = first {
            by_hash[0].inject_corruption(&id).expect("present");
        }
    }
    let images: Vec<_> = by_meta.iter().chain(&by_hash).map(store_image).collect();
    let stores_identical = images.windows(2).all(|w| w[0] == w[1]) && !images[0].is_empty();
    EquivalenceReport { blocks, moved: m.blocks_stored, plans_equal, stores_identical }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PartitionReport {
    pub scenarios: u64,
    pub one_round: u64,
    pub idempotent: u64,
    pub equal_union: u64,
    pub transferred: u64,
}

/// Two replicas, both taking writes through a randomly placed partition.
pub fn partition_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a27);
    let horizon = 900.0;
    let at = rng.gen_range(10.0..300.0);
    let until = rng.gen_range(at + 30.0..horizon - 10.0);
    let mut sc = Scenario::from_toml(
        r#"
horizon_seconds = 900
sample_seconds = 900
[cluster]
nodes = 2
replica_factor = 2
"#,
    )
    .expect("valid template");
    sc.name = format!("partition-{seed}");
    sc.seed = seed;
    sc.fidelity = if seed.is_multiple_of(4) { Fidelity::Concrete } else { Fidelity::Virtual };
    sc.cluster.writers = Writers::All;
    sc.inventory.blocks_per_group = rng.gen_range(0..200);
    sc.inventory.block_size_min = 512;
    sc.inventory.block_size_max = 4096;
    sc.workload.aggregate_rate = rng.gen_range(5_000.0..60_000.0);
    sc.workload.sequential_fraction = rng.gen_range(0.2..1.0);
    sc.faults.push(FaultSpec::Partition { at, until, side_a: vec![0], side_b: vec![1] });
    sc
}

pub fn partition_convergence(seeds: std::ops::Range<u64>) -> PartitionReport {
    let mut r = PartitionReport::default();
    for seed in seeds {
        r.scenarios += 1;
        let Ok(m) = run_scenario(&partition_scenario(seed)) else { continue };
        let Some(c) = m.convergences.first() else { continue };
        r.one_round += u64::from(c.rounds == 1);
        r.idempotent += u64::from(c.repeat_blocks == 0);
        r.equal_union += u64::from(c.equal_union);
        r.transferred += c.blocks_transferred;
    }
    r
}

fn split_brain(seed: u64) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5b1);
    let mut nodes = open_nodes(&mut rng, 2, false);
    for k in 0..50 {
        let id = nodes[0].ingest(concrete(&mut rng, 16, 64), Some(UserKey(k)), NamespaceTag::DEFAULT).expect("ingest");
        replicate(&mut nodes, 0, &[1], id);
    }
    for _ in 0..200 {
        let side = rng.gen_range(0..2);
        let key = UserKey(rng.gen_range(0..80));
        nodes[side].ingest(concrete(&mut rng, 16, 64), Some(key), NamespaceTag::DEFAULT).expect("ingest");
    }
    let (a, b) = (nodes[0].index(), nodes[1].index());
    let r = reconcile_split_brain(a, b, ReconciliationPolicy::LwwByLcv);
    let union: BTreeSet<CompositeId> = a.ids().chain(b.ids()).collect();
    let lww = r.conflicts.iter().all(|c| c.winner == *c.candidates.iter().max_by_key(|id| (id.lcv, id.nid)).expect("two"));
    let ok = r.id_collisions == 0 && r.merged == union && lww && !r.conflicts.is_empty();
    (ok, format!("{} ids merged, {} key conflicts, {} id collisions", r.merged.len(), r.conflicts.len(), r.id_collisions))
}

// ---- baseline ----

pub fn baseline_suite(opts: Options) -> Vec<Check> {
    let md = merkle_oracle(opts.seed, 300);
    let c3 = condition3(opts.seed, 1_000, 100, opts.inject_bug);
    let sc = comparison_scaling(opts.seed, 5_000, 200);
    vec![
        check("baseline", "merkle_diff matches exhaustive leaf compare", md.1 == 0, format!("{} trials, {} mismatches", md.0, md.1)),
        check(
            "baseline",
            "lost index forces a full rehash",
            c3.rehash_bytes == c3.inventory_bytes && c3.hash_ops == c3.expected_hash_ops && c3.t_hash_matches,
            format!(
                "rehash {} of {} bytes, {} hash ops vs {} tree nodes",
                c3.rehash_bytes, c3.inventory_bytes, c3.hash_ops, c3.expected_hash_ops
            ),
        ),
        check(
            "baseline",
            "identifier path reads and hashes nothing",
            c3.meta_hash_ops == 0 && c3.meta_content_reads == 0 && c3.meta_t_hash == 0.0,
            format!("meta hash ops {}, content reads {}", c3.meta_hash_ops, c3.meta_content_reads),
        ),
        check(
            "baseline",
            "doubling N at fixed delta at most doubles comparisons",
            sc.doubled <= 2 * sc.base,
            format!("{} comparisons at N, {} at 2N", sc.base, sc.doubled),
        ),
    ]
}

/// Diff positions by walking both leaf lists, padding the shorter one.
fn exhaustive_diff(a: &[Digest], b: &[Digest]) -> Vec<usize> {
    let pad = empty_digest();
    (0..a.len().max(b.len()))
        .filter(|&i| a.get(i).unwrap_or(&pad) != b.get(i).unwrap_or(&pad))
        .collect()
}

pub fn merkle_oracle(seed: u64, trials: usize) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3e61);
    let mut bad = 0;
    for _ in 0..trials {
        let n = rng.gen_range(0..300);
        let a: Vec<Digest> = (0..n).map(|i: u32| fingerprint_block(&i.to_le_bytes())).collect();
        let mut b = a.clone();
        for _ in 0..rng.gen_range(0..6) {
            if !b.is_empty() {
                let i = rng.gen_range(0..b.len());
                b[i] = fingerprint_block(&rng.gen::<[u8; 8]>());
            }
        }
        match rng.gen_range(0..3) {
            0 => b.truncate(rng.gen_range(0..=b.len())),
            1 => b.extend((0..rng.gen_range(0..5)).map(|_| fingerprint_block(&rng.gen::<[u8; 8]>()))),
            _ => {}
        }
        let mut meter = HashMeter::default();
        let (ta, tb) = (MerkleTree::build(a.clone(), &mut meter), MerkleTree::build(b.clone(), &mut meter));
        let mut got = merkle_diff(&ta, &tb).positions;
        got.sort_unstable();
        if got != exhaustive_diff(&a, &b) {
            bad += 1;
        }
    }
    (trials, bad)
}

/// Nodes in a binary tree over `leaves` where an odd tail pairs with itself.
pub fn tree_internal_nodes(leaves: usize) -> usize {
    let (mut n, mut total) = (leaves, 0);
    while n > 1 {
        n = n.div_ceil(2);
        total += n;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Condition3Report {
    pub inventory_bytes: u64,
    pub rehash_bytes: u64,
    pub hash_ops: u64,
    pub expected_hash_ops: u64,
    pub t_hash_matches: bool,
    pub meta_hash_ops: u64,
    pub meta_content_reads: u64,
    pub meta_t_hash: f64,
}

/// A three-replica group: node 0 crashes and loses its digest store, the
/// survivors keep writing, node 0 fails back. Both frameworks run in shadow.
pub fn condition3(seed: u64, blocks: usize, delta: usize, bug: bool) -> Condition3Report {
    let cost = CostModel { rto_jitter_cv: 0.0, ..CostModel::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc3);
    let mut nodes = open_nodes(&mut rng, 3, true);
    for _ in 0..blocks {
        let id = nodes[1].ingest(concrete(&mut rng, 256, 2048), None, NamespaceTag::DEFAULT).expect("ingest");
        replicate(&mut nodes, 1, &[0, 2], id);
    }
    for n in &mut nodes {
        n.repair_hash_index().expect("baseline on");
        n.baseline_checkpoint().expect("baseline on");
    }
    nodes[0].stop(StopKind::Crash).expect("up");
    let fo = execute_failover(&mut nodes, &[0, 1, 2], 0, 1, FrameworkSelection::BothShadow, &cost).expect("failover");
    for _ in 0..delta {
        let id = nodes[1].ingest(concrete(&mut rng, 256, 2048), None, NamespaceTag::DEFAULT).expect("ingest");
        replicate(&mut nodes, 1, &[2], id);
    }
    for n in &mut nodes[1..] {
        n.repair_hash_index().expect("baseline on");
    }
    let restart = nodes[0].restart(RestartFaults { index_loss: !bug, pipeline_crash: false }).expect("restarts");
    let inventory_bytes = nodes[0].stored_bytes();
    let rehash_bytes = nodes[0].rehash_required_bytes();
    let leaves = nodes[0].block_count();
    let fb = execute_failback(&mut nodes, 0, 1, FrameworkSelection::BothShadow, restart.wal_replayed, &cost).expect("failback");
    let hash = fb.session.hash.expect("shadow");
    let meta = fb.session.meta.expect("shadow");
    let fo_meta = fo.session.meta.expect("shadow");
    Condition3Report {
        inventory_bytes,
        rehash_bytes,
        hash_ops: hash.counters.hash_ops,
        expected_hash_ops: (leaves + tree_internal_nodes(leaves)) as u64,
        t_hash_matches: (hash.phases.t_hash - inventory_bytes as f64 / (cost.hash_throughput * cost.cores)).abs() < 1e-9,
        meta_hash_ops: meta.counters.hash_ops + fo_meta.counters.hash_ops,
        meta_content_reads: meta.counters.content_reads + fo_meta.counters.content_reads,
        meta_t_hash: meta.phases.t_hash + fo_meta.phases.t_hash,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScalingReport {
    pub base: u64,
    pub doubled: u64,
}

/// Meta comparisons for an N-entry shared history plus `delta` fresh entries
/// on one side, at N and at 2N.
pub fn comparison_scaling(seed: u64, n: u64, delta: u64) -> ScalingReport {
    let run = |n: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x2d);
        let nids: Vec<NodeId> = (0..4).map(|_| NodeId::generate(&mut rng)).collect();
        let mut a = IdentifierIndex::new();
        let mut b = IdentifierIndex::new();
        let mut order: Vec<u64> = (0..n + delta).collect();
        order.shuffle(&mut rng);
        for (loc, &k) in order.iter().enumerate() {
            let id = CompositeId::new(nids[(k % 4) as usize], k / 4 + 1, NamespaceTag::DEFAULT);
            let e = IndexEntry { id, location: loc as u64, byte_len: 4096, crc: 0, user_key: None };
            if k < n {
                b.insert(e.clone()).expect("fresh");
            }
            a.insert(e).expect("fresh");
        }
        let cp = metadr::index::Checkpoint::new(nids[0]);
        compute_delta_meta(&a, &cp, &b, ExchangeMode::Full).expect("streams decode").comparisons
    };
    ScalingReport { base: run(n), doubled: run(2 * n) }
}
