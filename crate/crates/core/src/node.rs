//! Storage node state machine.
//!
//! Ingest assigns a [`CompositeId`] before anything looks at content; the only
//! per-block content work on that path is the CRC-32C integrity checksum.
//! When the node runs the hash baseline alongside, each stored block is also
//! queued for asynchronous fingerprinting, metered separately.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::block::{Block, Locator, Payload};
use crate::hashline::{
    crash_interrupt, install_rebuilt, pipeline_drain, pipeline_tick, rebuild_index, Digest,
    HashIndex, HashMeter, PipelineState,
};
use crate::identity::{
    encode_wal_record, recover_clock, CompositeId, IdentityError, LogicalClock, NamespaceTag,
    NodeId, RecoveryReport, WalStorage,
};
use crate::index::{Checkpoint, IdentifierIndex, IndexEntry, IndexError, InsertOutcome, UserKey};

#[derive(Debug, Error)]
pub enum NodeError {
    #[error("node {0} is down")]
    NodeDown(NodeId),
    #[error("block {0} not found")]
    NotFound(String),
    #[error("CRC mismatch at locator {locator}: expected {expected:#010x}, found {found:#010x}")]
    CorruptionDetected { locator: Locator, expected: u32, found: u32 },
    #[error("block {0} is immutable; writes must go through ingest")]
    ImmutabilityViolation(CompositeId),
    #[error("cannot {op} while node is {status:?}")]
    InvalidTransition { op: &'static str, status: NodeStatus },
    #[error("background deduplication refused: a DR event is active")]
    DrActive,
    #[error("empty payloads cannot be ingested")]
    EmptyPayload,
    #[error("migration mode is not enabled")]
    MigrationDisabled,
    #[error("baseline hash index is not enabled on this node")]
    BaselineDisabled,
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error(transparent)]
    Index(#[from] IndexError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeStatus {
    Up,
    Crashed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopKind {
    /// Orderly shutdown: pipeline flushed and checkpointed.
    Graceful,
    Crash,
}

/// Extra damage applied on restart.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RestartFaults {
    /// Condition 3: the baseline hash index store is destroyed.
    pub index_loss: bool,
    /// Condition 2: the hashing pipeline died mid-stream.
    pub pipeline_crash: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RestartReport {
    pub recovery: RecoveryReport,
    /// True after a crash: the WAL had to be replayed. A graceful stop leaves
    /// the clock state in memory-equivalent form and skips replay cost.
    pub wal_replayed: bool,
    pub requeued_blocks: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NodeConfig {
    /// Maintain the hash baseline (digest index + pipeline) next to the id index.
    pub baseline: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NodeCounters {
    pub ingests: u64,
    pub replicated_in: u64,
    /// Content reads made to identify blocks. Zero on the id-based path.
    pub content_reads: u64,
    /// Blocks read out for transfer to a peer.
    pub block_exports: u64,
    pub lcv_violations: u64,
    /// Blocks whose content changed after their id was bound.
    pub immutability_violations: u64,
    /// In-place overwrite attempts rejected by the API.
    pub rejected_overwrites: u64,
    pub corruption_detected: u64,
    pub expired: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorruptionFinding {
    pub locator: Locator,
    pub expected_crc: u32,
    pub found_crc: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorruptionReport {
    pub scanned: usize,
    pub findings: Vec<CorruptionFinding>,
}

impl CorruptionReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Which tier answered a dual lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Lookup {
    Identifier(CompositeId),
    Legacy(Digest),
}

/// Hash-baseline state carried by a node.
#[derive(Debug, Default)]
pub struct Baseline {
    pub index: HashIndex,
    pub pipeline: PipelineState,
    pub meter: HashMeter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RepairReport {
    pub hash_ops: u64,
    pub hashed_bytes: u64,
    pub content_reads: u64,
    pub rebuilt: bool,
    pub leaves: usize,
    pub internal_nodes: usize,
}

#[derive(Debug, Default)]
struct LegacyTier {
    entries: BTreeMap<UserKey, (Payload, Digest)>,
    total: usize,
    migrated: usize,
}

#[derive(Debug, Default)]
struct DedupState {
    cursor: Option<Locator>,
    seen: BTreeMap<Digest, Locator>,
    meter: HashMeter,
}

pub struct StorageNode {
    nid: NodeId,
    clock: Option<LogicalClock>,
    parked_wal: Option<Box<dyn WalStorage>>,
    status: NodeStatus,
    last_stop: Option<StopKind>,
    index: IdentifierIndex,
    blocks: BTreeMap<Locator, Block>,
    next_locator: Locator,
    stored_bytes: u64,
    keys: BTreeMap<UserKey, Vec<CompositeId>>,
    /// Layer 2: id → canonical locator for consolidated duplicates.
    indirection: BTreeMap<CompositeId, Locator>,
    /// Extra references to a canonical block held through `indirection`.
    shared_refs: BTreeMap<Locator, u32>,
    baseline: Option<Baseline>,
    legacy: Option<LegacyTier>,
    dedup: DedupState,
    scrub_cursor: Option<Locator>,
    dr_active: bool,
    counters: NodeCounters,
    last_lcv: u64,
    checkpoints: BTreeMap<NodeId, Checkpoint>,
}

impl std::fmt::Debug for StorageNode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StorageNode")
            .field("nid", &self.nid)
            .field("status", &self.status)
            .field("entries", &self.index.len())
            .field("blocks", &self.blocks.len())
            .finish()
    }
}

impl StorageNode {
    /// Brings a node up from its WAL (fresh or existing).
    pub fn open(nid: NodeId, wal: Box<dyn WalStorage>, config: NodeConfig) -> Result<Self, NodeError> {
        let (clock, _) = recover_clock(wal)?;
        let last_lcv = clock.last_committed();
        Ok(Self {
            nid,
            clock: Some(clock),
            parked_wal: None,
            status: NodeStatus::Up,
            last_stop: None,
            index: IdentifierIndex::new(),
            blocks: BTreeMap::new(),
            next_locator: 0,
            stored_bytes: 0,
            keys: BTreeMap::new(),
            indirection: BTreeMap::new(),
            shared_refs: BTreeMap::new(),
            baseline: config.baseline.then(Baseline::default),
            legacy: None,
            dedup: DedupState::default(),
            scrub_cursor: None,
            dr_active: false,
            counters: NodeCounters::default(),
            last_lcv,
            checkpoints: BTreeMap::new(),
        })
    }

    pub fn nid(&self) -> NodeId {
        self.nid
    }

    pub fn status(&self) -> NodeStatus {
        self.status
    }

    pub fn is_up(&self) -> bool {
        self.status == NodeStatus::Up
    }

    pub fn index(&self) -> &IdentifierIndex {
        &self.index
    }

    pub fn counters(&self) -> NodeCounters {
        self.counters
    }

    pub fn baseline(&self) -> Option<&Baseline> {
        self.baseline.as_ref()
    }

    /// Physical blocks held (after Layer 2 consolidation).
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// Physical bytes held.
    pub fn stored_bytes(&self) -> u64 {
        self.stored_bytes
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&Locator, &Block)> {
        self.blocks.iter()
    }

    /// Bytes currently in this node's WAL.
    pub fn wal_bytes(&self) -> u64 {
        match (&self.clock, &self.parked_wal) {
            (Some(c), _) => c.wal_len(),
            (None, Some(w)) => w.len(),
            (None, None) => 0,
        }
    }

    pub fn last_exposed_lcv(&self) -> u64 {
        self.last_lcv
    }

    fn require_up(&self) -> Result<(), NodeError> {
        if self.is_up() {
            Ok(())
        } else {
            Err(NodeError::NodeDown(self.nid))
        }
    }

    fn store(&mut self, block: Block) -> Locator {
        let loc = self.next_locator;
        self.next_locator += 1;
        self.stored_bytes += block.byte_len();
        if let Some(key) = block.user_key {
            self.keys.entry(key).or_default().push(block.id);
        }
        if let Some(b) = self.baseline.as_mut() {
            b.pipeline.enqueue(&mut b.index, loc, block.payload.clone());
        }
        self.blocks.insert(loc, block);
        loc
    }

    // ---- Ingest and reads ----

    /// Assigns a fresh id and stores the block. No content hashing happens here.
    pub fn ingest(
        &mut self,
        payload: Payload,
        user_key: Option<UserKey>,
        nst: NamespaceTag,
    ) -> Result<CompositeId, NodeError> {
        self.require_up()?;
        if payload.is_empty() {
            return Err(NodeError::EmptyPayload);
        }
        let clock = self.clock.as_ref().expect("up node has a clock");
        let id = clock.next_id(self.nid, nst)?;
        if id.lcv <= self.last_lcv {
            self.counters.lcv_violations += 1;
        }
        self.last_lcv = id.lcv;
        let block = Block::new(id, user_key, payload);
        let (byte_len, crc) = (block.byte_len(), block.crc);
        let location = self.store(block);
        self.index.insert(IndexEntry { id, location, byte_len, crc, user_key })?;
        self.counters.ingests += 1;
        Ok(id)
    }

    /// A write to an existing key is a new ingest with a fresh id.
    pub fn mutate(&mut self, user_key: UserKey, payload: Payload) -> Result<CompositeId, NodeError> {
        self.ingest(payload, Some(user_key), NamespaceTag::DEFAULT)
    }

    /// In-place overwrite is never allowed.
    pub fn overwrite(&mut self, id: CompositeId, _payload: Payload) -> Result<(), NodeError> {
        self.counters.rejected_overwrites += 1;
        Err(NodeError::ImmutabilityViolation(id))
    }

    /// Newest id for `key`: highest lcv, ties by node id.
    pub fn resolve_key(&self, key: UserKey) -> Option<CompositeId> {
        self.keys.get(&key)?.iter().copied().max_by_key(|id| (id.lcv, id.nid))
    }

    pub fn ids_for_key(&self, key: UserKey) -> &[CompositeId] {
        self.keys.get(&key).map_or(&[], Vec::as_slice)
    }

    fn locator_of(&self, id: &CompositeId) -> Option<Locator> {
        self.indirection.get(id).copied().or_else(|| self.index.get(id).map(|e| e.location))
    }

    /// Reads a block and checks its CRC-32C.
    pub fn read_verify(&mut self, id: &CompositeId) -> Result<Payload, NodeError> {
        self.require_up()?;
        let loc = self.locator_of(id).ok_or_else(|| NodeError::NotFound(id.to_string()))?;
        let block = self.blocks.get(&loc).ok_or_else(|| NodeError::NotFound(id.to_string()))?;
        if let Err(found) = block.verify() {
            self.counters.corruption_detected += 1;
            return Err(NodeError::CorruptionDetected { locator: loc, expected: block.crc, found });
        }
        Ok(block.payload.clone())
    }

    pub fn read(&mut self, key: UserKey) -> Result<Payload, NodeError> {
        let id = self.resolve_key(key).ok_or_else(|| NodeError::NotFound(format!("key {}", key.0)))?;
        self.read_verify(&id)
    }

    /// Test hook: silently damages the stored content behind `id`.
    pub fn inject_corruption(&mut self, id: &CompositeId) -> Result<Locator, NodeError> {
        let loc = self.locator_of(id).ok_or_else(|| NodeError::NotFound(id.to_string()))?;
        let block = self.blocks.get_mut(&loc).ok_or_else(|| NodeError::NotFound(id.to_string()))?;
        block.payload = match &block.payload {
            Payload::Concrete(b) => {
                let mut v = b.to_vec();
                v[0] ^= 0x01;
                Payload::concrete(v)
            }
            Payload::Virtual { len, seed } => Payload::Virtual { len: *len, seed: seed ^ 1 },
        };
        Ok(loc)
    }

    /// Verifies up to `budget` blocks, continuing round-robin from the last call.
    pub fn scrub(&mut self, budget: usize) -> CorruptionReport {
        let mut report = CorruptionReport::default();
        if budget == 0 || self.blocks.is_empty() {
            return report;
        }
        let budget = budget.min(self.blocks.len());
        let start = self.scrub_cursor;
        let after = self
            .blocks
            .range(start.map_or(0, |c| c + 1)..)
            .chain(self.blocks.range(..start.map_or(0, |c| c + 1)));
        let mut last = start;
        for (loc, block) in after.take(budget) {
            report.scanned += 1;
            if let Err(found) = block.verify() {
                report.findings.push(CorruptionFinding { locator: *loc, expected_crc: block.crc, found_crc: found });
            }
            last = Some(*loc);
        }
        self.scrub_cursor = last;
        report
    }

    // ---- Lifecycle ----

    pub fn stop(&mut self, kind: StopKind) -> Result<(), NodeError> {
        if !self.is_up() {
            return Err(NodeError::InvalidTransition { op: "stop", status: self.status });
        }
        if kind == StopKind::Graceful {
            if let Some(b) = self.baseline.as_mut() {
                pipeline_drain(&mut b.pipeline, &mut b.index, &mut b.meter);
                b.pipeline.take_checkpoint(&b.index);
            }
        }
        let clock = self.clock.take().expect("up node has a clock");
        self.parked_wal = Some(clock.into_wal());
        self.status = NodeStatus::Crashed;
        self.last_stop = Some(kind);
        Ok(())
    }

    pub fn crash(&mut self) -> Result<(), NodeError> {
        self.stop(StopKind::Crash)
    }

    /// Test hook: leaves the first `bytes` of the next WAL record on disk, as
    /// if the process died mid-append.
    pub fn tear_wal_tail(&mut self, bytes: usize) -> Result<(), NodeError> {
        let wal = self
            .parked_wal
            .as_mut()
            .ok_or(NodeError::InvalidTransition { op: "tear WAL", status: self.status })?;
        let rec = encode_wal_record(self.last_lcv + 1);
        wal.append(&rec[..bytes.min(rec.len() - 1)]).map_err(IdentityError::WalIo)?;
        Ok(())
    }

    pub fn restart(&mut self, faults: RestartFaults) -> Result<RestartReport, NodeError> {
        if self.is_up() {
            return Err(NodeError::InvalidTransition { op: "restart", status: self.status });
        }
        let wal = self.parked_wal.take().expect("stopped node parks its WAL");
        let (clock, recovery) = recover_clock(wal)?;
        if clock.last_committed() < self.last_lcv {
            self.counters.lcv_violations += 1;
        }
        self.last_lcv = clock.last_committed();
        self.clock = Some(clock);
        let mut requeued = 0;
        if let Some(b) = self.baseline.as_mut() {
            if faults.pipeline_crash {
                requeued = crash_interrupt(&mut b.pipeline, &mut b.index);
            }
            if faults.index_loss {
                b.index.mark_lost();
            }
        }
        self.status = NodeStatus::Up;
        Ok(RestartReport {
            recovery,
            wal_replayed: self.last_stop == Some(StopKind::Crash),
            requeued_blocks: requeued,
        })
    }

    // ---- Replication ----

    /// Copies a block out for transfer. This is a data move, not identification.
    pub fn export_block(&mut self, id: &CompositeId) -> Result<Block, NodeError> {
        self.require_up()?;
        let entry = self.index.get(id).ok_or_else(|| NodeError::NotFound(id.to_string()))?;
        let user_key = entry.user_key;
        let loc = self.locator_of(id).expect("indexed id has a locator");
        let stored = self.blocks.get(&loc).ok_or_else(|| NodeError::NotFound(id.to_string()))?;
        self.counters.block_exports += 1;
        Ok(Block { id: *id, user_key, payload: stored.payload.clone(), crc: stored.crc })
    }

    /// Stores a block replicated from a peer under its original id.
    pub fn import_block(&mut self, block: Block) -> Result<InsertOutcome, NodeError> {
        self.require_up()?;
        if let Some(existing) = self.index.get(&block.id) {
            if existing.crc != block.crc || existing.byte_len != block.byte_len() {
                self.counters.immutability_violations += 1;
            }
            return Ok(InsertOutcome::Duplicate);
        }
        if block.id.lcv <= self.index.retention_floor(&block.id.nid) {
            return Ok(InsertOutcome::Expired);
        }
        if let Err(found) = block.verify() {
            self.counters.corruption_detected += 1;
            return Err(NodeError::CorruptionDetected { locator: u64::MAX, expected: block.crc, found });
        }
        let (id, user_key, byte_len, crc) = (block.id, block.user_key, block.byte_len(), block.crc);
        let location = self.store(block);
        let outcome = self.index.insert(IndexEntry { id, location, byte_len, crc, user_key })?;
        self.counters.replicated_in += 1;
        Ok(outcome)
    }

    /// Removes an id under the retention policy.
    pub fn expire(&mut self, id: &CompositeId) -> Option<u64> {
        let loc = self.locator_of(id)?;
        let entry = self.index.expire(id)?;
        if let Some(key) = entry.user_key {
            if let Some(ids) = self.keys.get_mut(&key) {
                ids.retain(|x| x != id);
                if ids.is_empty() {
                    self.keys.remove(&key);
                }
            }
        }
        self.indirection.remove(id);
        match self.shared_refs.get_mut(&loc) {
            Some(n) if *n > 0 => {
                *n -= 1;
                if *n == 0 {
                    self.shared_refs.remove(&loc);
                }
            }
            _ => {
                if let Some(block) = self.blocks.remove(&loc) {
                    self.stored_bytes -= block.byte_len();
                    if let Some(b) = self.baseline.as_mut() {
                        b.pipeline.forget(&mut b.index, loc);
                        b.index.remove(loc);
                    }
                }
            }
        }
        self.counters.expired += 1;
        Some(entry.byte_len)
    }

    pub fn checkpoint_for(&self, peer: &NodeId) -> Checkpoint {
        self.checkpoints.get(peer).cloned().unwrap_or_else(|| Checkpoint::new(*peer))
    }

    pub fn set_checkpoint(&mut self, cp: Checkpoint) {
        self.checkpoints.insert(cp.peer, cp);
    }

    // ---- DR scheduling gate ----

    pub fn begin_dr(&mut self) {
        self.dr_active = true;
    }

    pub fn end_dr(&mut self) {
        self.dr_active = false;
    }

    pub fn dr_active(&self) -> bool {
        self.dr_active
    }

    // ---- Hash baseline ----

    fn baseline_mut(&mut self) -> Result<&mut Baseline, NodeError> {
        self.baseline.as_mut().ok_or(NodeError::BaselineDisabled)
    }

    pub fn baseline_tick(&mut self, budget_bytes: u64) -> Result<usize, NodeError> {
        let b = self.baseline_mut()?;
        Ok(pipeline_tick(&mut b.pipeline, &mut b.index, budget_bytes, &mut b.meter))
    }

    pub fn baseline_checkpoint(&mut self) -> Result<(), NodeError> {
        let b = self.baseline_mut()?;
        b.pipeline.take_checkpoint(&b.index);
        Ok(())
    }

    /// Restart policy knob: treat the on-disk hash index as untrusted.
    pub fn distrust_hash_index(&mut self) -> Result<(), NodeError> {
        self.baseline_mut()?.index.mark_lost();
        Ok(())
    }

    /// Bytes that must be hashed before this node's digest index can serve a delta.
    pub fn rehash_required_bytes(&self) -> u64 {
        match &self.baseline {
            None => 0,
            Some(b) if b.index.is_lost() => self.stored_bytes + b.pipeline.lag_bytes(),
            Some(b) => b.pipeline.lag_bytes(),
        }
    }

    /// Pays the rehash: full rebuild if lost, then drains the pipeline.
    pub fn repair_hash_index(&mut self) -> Result<RepairReport, NodeError> {
        let blocks = &self.blocks;
        let b = self.baseline.as_mut().ok_or(NodeError::BaselineDisabled)?;
        let before = b.meter;
        let mut report = RepairReport::default();
        if b.index.is_lost() {
            let (rebuilt, tree) = rebuild_index(blocks.iter().map(|(l, blk)| (*l, &blk.payload)), &mut b.meter);
            install_rebuilt(&mut b.index, rebuilt, b.pipeline.lag_blocks());
            report.rebuilt = true;
            report.leaves = tree.leaf_count();
            report.internal_nodes = tree.internal_node_count();
        }
        pipeline_drain(&mut b.pipeline, &mut b.index, &mut b.meter);
        report.hash_ops = b.meter.hash_ops - before.hash_ops;
        report.hashed_bytes = b.meter.hashed_bytes - before.hashed_bytes;
        report.content_reads = b.meter.content_reads - before.content_reads;
        Ok(report)
    }

    /// Maps baseline locators to the ids stored there.
    pub fn ids_at(&self, locators: &[Locator]) -> Vec<CompositeId> {
        locators.iter().filter_map(|l| self.blocks.get(l).map(|b| b.id)).collect()
    }

    // ---- Migration ----

    pub fn enable_migration(&mut self) {
        self.legacy.get_or_insert_with(LegacyTier::default);
    }

    /// Registers pre-migration data addressed by content digest.
    pub fn legacy_put(&mut self, key: UserKey, payload: Payload) -> Result<Digest, NodeError> {
        let tier = self.legacy.as_mut().ok_or(NodeError::MigrationDisabled)?;
        let digest = payload.fingerprint();
        if tier.entries.insert(key, (payload, digest)).is_none() {
            tier.total += 1;
        }
        Ok(digest)
    }

    /// Identifier tier first, legacy digest tier second.
    pub fn dual_lookup(&self, key: UserKey) -> Result<Lookup, NodeError> {
        let tier = self.legacy.as_ref().ok_or(NodeError::MigrationDisabled)?;
        if let Some(id) = self.resolve_key(key) {
            return Ok(Lookup::Identifier(id));
        }
        tier.entries
            .get(&key)
            .map(|(_, d)| Lookup::Legacy(*d))
            .ok_or_else(|| NodeError::NotFound(format!("key {}", key.0)))
    }

    /// Moves a legacy entry into the identifier tier under a fresh id.
    pub fn migrate_on_access(&mut self, key: UserKey) -> Result<CompositeId, NodeError> {
        let tier = self.legacy.as_mut().ok_or(NodeError::MigrationDisabled)?;
        match tier.entries.remove(&key) {
            Some((payload, _)) => {
                let id = self.ingest(payload, Some(key), NamespaceTag::DEFAULT)?;
                self.legacy.as_mut().expect("checked above").migrated += 1;
                Ok(id)
            }
            None => self.resolve_key(key).ok_or_else(|| NodeError::NotFound(format!("key {}", key.0))),
        }
    }

    pub fn migration_progress(&self) -> f64 {
        match &self.legacy {
            Some(t) if t.total > 0 => t.migrated as f64 / t.total as f64,
            _ => 1.0,
        }
    }

    // ---- Layer 2 deduplication ----

    /// Consolidates content-equal blocks behind one canonical locator.
    /// Refuses to run during a DR event.
    pub fn dedup_pass(&mut self, budget: usize) -> Result<usize, NodeError> {
        if self.dr_active {
            return Err(NodeError::DrActive);
        }
        let start = self.dedup.cursor.map_or(0, |c| c + 1);
        let scan: Vec<Locator> = self
            .blocks
            .range(start..)
            .chain(self.blocks.range(..start))
            .map(|(l, _)| *l)
            .take(budget.min(self.blocks.len()))
            .collect();
        let mut consolidated = 0;
        for loc in scan {
            self.dedup.cursor = Some(loc);
            let Some(block) = self.blocks.get(&loc) else { continue };
            let digest = self.dedup.meter.fingerprint(&block.payload);
            match self.dedup.seen.get(&digest).copied() {
                Some(canon) if canon != loc && self.blocks.contains_key(&canon) && !self.shared_refs.contains_key(&loc) => {
                    let dup = self.blocks.remove(&loc).expect("present");
                    self.stored_bytes -= dup.byte_len();
                    self.indirection.insert(dup.id, canon);
                    *self.shared_refs.entry(canon).or_insert(0) += 1;
                    if let Some(b) = self.baseline.as_mut() {
                        b.pipeline.forget(&mut b.index, loc);
                        b.index.remove(loc);
                    }
                    consolidated += 1;
                }
                Some(canon) if canon != loc && self.blocks.contains_key(&canon) => {}
                _ => {
                    self.dedup.seen.insert(digest, loc);
                }
            }
        }
        Ok(consolidated)
    }

    pub fn dedup_meter(&self) -> HashMeter {
        self.dedup.meter
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::MemWal;
    use std::collections::HashSet;

    fn node(baseline: bool) -> StorageNode {
        StorageNode::open(NodeId::from_bytes([9; 16]), Box::new(MemWal::new()), NodeConfig { baseline }).unwrap()
    }

    fn bytes(s: &str) -> Payload {
        Payload::concrete(s.as_bytes().to_vec())
    }

    #[test]
    fn first_ingest_and_many_ingests() {
        let mut n = node(false);
        let id = n.ingest(bytes("x"), None, NamespaceTag::DEFAULT).unwrap();
        assert_eq!(id.lcv, 1);
        assert_eq!(n.index().len(), 1);
        let mut seen = HashSet::new();
        seen.insert(id);
        for i in 0..100_000u64 {
            let id = n.ingest(Payload::virtual_block(100, i), None, NamespaceTag::DEFAULT).unwrap();
            assert!(seen.insert(id));
        }
        assert_eq!(n.counters().content_reads, 0);
        assert!(n.baseline().is_none());
    }

    #[test]
    fn ingest_with_baseline_does_not_hash_on_the_write_path() {
        let mut n = node(true);
        for i in 0..100 {
            n.ingest(Payload::virtual_block(10, i), None, NamespaceTag::DEFAULT).unwrap();
        }
        assert_eq!(n.baseline().unwrap().meter.hash_ops, 0);
        assert_eq!(n.baseline().unwrap().pipeline.lag_blocks(), 100);
    }

    #[test]
    fn mutate_and_overwrite() {
        let mut n = node(false);
        let k = UserKey(5);
        let old = n.mutate(k, bytes("v1")).unwrap();
        let new = n.mutate(k, bytes("v2")).unwrap();
        assert!(new.lcv > old.lcv);
        assert_eq!(n.read(k).unwrap(), bytes("v2"));
        assert_eq!(n.read_verify(&old).unwrap(), bytes("v1"));
        assert!(matches!(n.overwrite(old, bytes("zz")), Err(NodeError::ImmutabilityViolation(_))));
        assert_eq!(n.read_verify(&old).unwrap(), bytes("v1"));
        assert_eq!(n.counters().immutability_violations, 0);
    }

    #[test]
    fn corruption_is_detected_on_read_and_scrub() {
        let mut n = node(false);
        let ids: Vec<_> = (0..20).map(|i| n.ingest(bytes(&format!("block-{i}")), None, NamespaceTag::DEFAULT).unwrap()).collect();
        assert!(n.scrub(100).is_clean());
        assert!(n.scrub(0).findings.is_empty());
        for id in [&ids[3], &ids[7], &ids[15]] {
            n.inject_corruption(id).unwrap();
        }
        assert!(matches!(n.read_verify(&ids[3]), Err(NodeError::CorruptionDetected { .. })));
        let report = n.scrub(20);
        assert_eq!(report.findings.len(), 3);
        assert_eq!(report.scanned, 20);
    }

    #[test]
    fn scrub_is_round_robin() {
        let mut n = node(false);
        for i in 0..10 {
            n.ingest(Payload::virtual_block(5, i), None, NamespaceTag::DEFAULT).unwrap();
        }
        let id = n.index().ids().nth(8).unwrap();
        n.inject_corruption(&id).unwrap();
        assert!(n.scrub(5).is_clean());
        assert_eq!(n.scrub(5).findings.len(), 1);
        assert!(n.scrub(5).is_clean());
    }

    #[test]
    fn crash_restart_keeps_index_and_clock() {
        let mut n = node(false);
        let mut last = 0;
        for i in 0..50 {
            last = n.ingest(Payload::virtual_block(5, i), None, NamespaceTag::DEFAULT).unwrap().lcv;
        }
        n.crash().unwrap();
        assert!(matches!(n.ingest(bytes("x"), None, NamespaceTag::DEFAULT), Err(NodeError::NodeDown(_))));
        n.tear_wal_tail(7).unwrap();
        let rep = n.restart(RestartFaults::default()).unwrap();
        assert!(rep.wal_replayed);
        assert_eq!(rep.recovery.burned, Some(last + 1));
        assert_eq!(n.index().len(), 50);
        let next = n.ingest(bytes("y"), None, NamespaceTag::DEFAULT).unwrap();
        assert!(next.lcv > last + 1);
        assert_eq!(n.counters().lcv_violations, 0);
        assert!(matches!(n.restart(RestartFaults::default()), Err(NodeError::InvalidTransition { .. })));
    }

    #[test]
    fn graceful_stop_skips_replay_charge() {
        let mut n = node(true);
        n.ingest(bytes("a"), None, NamespaceTag::DEFAULT).unwrap();
        n.stop(StopKind::Graceful).unwrap();
        let rep = n.restart(RestartFaults::default()).unwrap();
        assert!(!rep.wal_replayed);
        assert!(n.baseline().unwrap().index.is_consistent());
    }

    #[test]
    fn index_loss_requires_full_rebuild() {
        let mut n = node(true);
        for i in 0..64 {
            n.ingest(Payload::virtual_block(1_000, i), None, NamespaceTag::DEFAULT).unwrap();
        }
        n.baseline_tick(u64::MAX).unwrap();
        n.crash().unwrap();
        n.restart(RestartFaults { index_loss: true, pipeline_crash: false }).unwrap();
        assert!(!n.baseline().unwrap().index.is_consistent());
        assert_eq!(n.rehash_required_bytes(), 64_000);
        let rep = n.repair_hash_index().unwrap();
        assert!(rep.rebuilt);
        assert_eq!(rep.hash_ops as usize, rep.leaves + rep.internal_nodes);
        assert_eq!(rep.leaves, 64);
        assert_eq!(rep.internal_nodes, 63);
        assert!(n.baseline().unwrap().index.is_consistent());
    }

    #[test]
    fn pipeline_crash_redoes_work_since_checkpoint() {
        let mut n = node(true);
        for i in 0..10 {
            n.ingest(Payload::virtual_block(100, i), None, NamespaceTag::DEFAULT).unwrap();
        }
        n.baseline_tick(u64::MAX).unwrap();
        n.baseline_checkpoint().unwrap();
        for i in 10..40 {
            n.ingest(Payload::virtual_block(100, i), None, NamespaceTag::DEFAULT).unwrap();
        }
        n.baseline_tick(u64::MAX).unwrap();
        n.crash().unwrap();
        let rep = n.restart(RestartFaults { index_loss: true, pipeline_crash: true }).unwrap();
        assert_eq!(rep.requeued_blocks, 30);
        assert_eq!(n.rehash_required_bytes(), 4_000 + 3_000);
        let r = n.repair_hash_index().unwrap();
        assert_eq!(r.hashed_bytes, 7_000);
        assert!(n.baseline().unwrap().index.is_consistent());
        assert_eq!(n.baseline().unwrap().index.len(), 40);
    }

    #[test]
    fn dual_lookup_and_migration() {
        let mut n = node(false);
        assert!(matches!(n.dual_lookup(UserKey(1)), Err(NodeError::MigrationDisabled)));
        n.enable_migration();
        for k in 0..10 {
            n.legacy_put(UserKey(k), bytes(&format!("legacy-{k}"))).unwrap();
        }
        let fresh = n.mutate(UserKey(100), bytes("new")).unwrap();
        assert_eq!(n.dual_lookup(UserKey(100)).unwrap(), Lookup::Identifier(fresh));
        assert!(matches!(n.dual_lookup(UserKey(3)).unwrap(), Lookup::Legacy(_)));
        for k in 0..4 {
            n.migrate_on_access(UserKey(k)).unwrap();
            assert!((n.migration_progress() - (k + 1) as f64 / 10.0).abs() < 1e-12);
        }
        let again = n.migrate_on_access(UserKey(0)).unwrap();
        assert_eq!(n.migrate_on_access(UserKey(0)).unwrap(), again);
        assert_eq!(n.ids_for_key(UserKey(0)).len(), 1);
        assert!(matches!(n.dual_lookup(UserKey(0)).unwrap(), Lookup::Identifier(_)));
        for k in 4..10 {
            n.migrate_on_access(UserKey(k)).unwrap();
        }
        assert_eq!(n.migration_progress(), 1.0);
        assert!(matches!(n.migrate_on_access(UserKey(77)), Err(NodeError::NotFound(_))));
    }

    #[test]
    fn dedup_is_transparent_and_gated() {
        let mut n = node(false);
        let a = n.ingest(bytes("same"), None, NamespaceTag::DEFAULT).unwrap();
        let b = n.ingest(bytes("same"), None, NamespaceTag::DEFAULT).unwrap();
        n.ingest(bytes("other"), None, NamespaceTag::DEFAULT).unwrap();
        n.begin_dr();
        assert!(matches!(n.dedup_pass(10), Err(NodeError::DrActive)));
        n.end_dr();
        assert_eq!(n.dedup_pass(10).unwrap(), 1);
        assert_eq!(n.block_count(), 2);
        assert_eq!(n.read_verify(&a).unwrap(), bytes("same"));
        assert_eq!(n.read_verify(&b).unwrap(), bytes("same"));
        assert_eq!(n.dedup_pass(10).unwrap(), 0);
        n.expire(&a).unwrap();
        assert_eq!(n.read_verify(&b).unwrap(), bytes("same"));
        n.expire(&b).unwrap();
        assert_eq!(n.block_count(), 1);
    }

    #[test]
    fn distinct_content_is_never_consolidated() {
        let mut n = node(false);
        for i in 0..100 {
            n.ingest(Payload::virtual_block(10, i), None, NamespaceTag::DEFAULT).unwrap();
        }
        assert_eq!(n.dedup_pass(1000).unwrap(), 0);
    }

    #[test]
    fn ten_percent_duplicates_recovers_ten_percent() {
        let mut n = node(false);
        for i in 0..900 {
            n.ingest(Payload::virtual_block(1000, i), None, NamespaceTag::DEFAULT).unwrap();
        }
        for i in 0..100 {
            n.ingest(Payload::virtual_block(1000, i * 7), None, NamespaceTag::DEFAULT).unwrap();
        }
        let before = n.stored_bytes();
        assert_eq!(n.dedup_pass(2000).unwrap(), 100);
        let recovered = 1.0 - n.stored_bytes() as f64 / before as f64;
        assert!((recovered - 0.10).abs() < 1e-9);
    }

    #[test]
    fn import_and_expire_floor() {
        let mut a = node(true);
        let mut b = StorageNode::open(NodeId::from_bytes([1; 16]), Box::new(MemWal::new()), NodeConfig { baseline: true }).unwrap();
        let id = a.ingest(bytes("r"), Some(UserKey(1)), NamespaceTag::DEFAULT).unwrap();
        let blk = a.export_block(&id).unwrap();
        assert_eq!(b.import_block(blk.clone()).unwrap(), InsertOutcome::Inserted);
        assert_eq!(b.import_block(blk.clone()).unwrap(), InsertOutcome::Duplicate);
        assert_eq!(b.counters().immutability_violations, 0);
        let forged = Block::new(id, None, bytes("forged"));
        assert_eq!(b.import_block(forged).unwrap(), InsertOutcome::Duplicate);
        assert_eq!(b.counters().immutability_violations, 1);
        assert_eq!(b.read(UserKey(1)).unwrap(), bytes("r"));
        b.expire(&id).unwrap();
        assert_eq!(b.import_block(blk).unwrap(), InsertOutcome::Expired);
        assert_eq!(b.block_count(), 0);
        assert_eq!(b.rehash_required_bytes(), 0);
    }
}
