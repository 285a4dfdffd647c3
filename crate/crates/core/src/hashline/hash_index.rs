use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use super::digest::{Digest, HashMeter};
use super::merkle::MerkleTree;
use super::HashError;
use crate::block::{Locator, Payload};

/// Content-fingerprint index: digest → locators holding that content.
///
/// The index is trustworthy only when it is not lost and every ingested block
/// has been hashed (`covered == ingested`).
#[derive(Debug, Clone, Default)]
pub struct HashIndex {
    by_digest: BTreeMap<Digest, Vec<Locator>>,
    by_locator: HashMap<Locator, Digest>,
    entries: usize,
    /// Ingest sequence numbers hashed into the index.
    covered: u64,
    /// Ingest sequence numbers registered with the pipeline.
    ingested: u64,
    lost: bool,
}

impl HashIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_consistent(&self) -> bool {
        !self.lost && self.covered == self.ingested
    }

    pub fn is_lost(&self) -> bool {
        self.lost
    }

    /// Condition 3: the index store is gone and must be rebuilt by full scan.
    pub fn mark_lost(&mut self) {
        self.by_digest.clear();
        self.by_locator.clear();
        self.entries = 0;
        self.lost = true;
    }

    pub fn coverage(&self) -> u64 {
        self.covered
    }

    pub fn ingested(&self) -> u64 {
        self.ingested
    }

    /// Locator entries (one per indexed block).
    pub fn len(&self) -> usize {
        self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries == 0
    }

    pub fn distinct_digests(&self) -> usize {
        self.by_digest.len()
    }

    pub fn locators(&self, digest: &Digest) -> &[Locator] {
        self.by_digest.get(digest).map_or(&[], Vec::as_slice)
    }

    pub fn contains_digest(&self, digest: &Digest) -> bool {
        self.by_digest.contains_key(digest)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Digest, &[Locator])> {
        self.by_digest.iter().map(|(d, l)| (d, l.as_slice()))
    }

    pub fn digest_of(&self, loc: Locator) -> Option<&Digest> {
        self.by_locator.get(&loc)
    }

    fn add(&mut self, digest: Digest, loc: Locator) {
        if self.by_locator.insert(loc, digest).is_none() {
            self.by_digest.entry(digest).or_default().push(loc);
            self.entries += 1;
        }
    }

    /// Drops the entry for `loc`, if indexed.
    pub fn remove(&mut self, loc: Locator) {
        let Some(digest) = self.by_locator.remove(&loc) else { return };
        if let Some(locs) = self.by_digest.get_mut(&digest) {
            if let Some(pos) = locs.iter().position(|&l| l == loc) {
                locs.swap_remove(pos);
                self.entries -= 1;
            }
            if locs.is_empty() {
                self.by_digest.remove(&digest);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Pending {
    locator: Locator,
    payload: Payload,
}

/// Asynchronous hashing pipeline feeding a [`HashIndex`].
#[derive(Debug, Clone, Default)]
pub struct PipelineState {
    pending: VecDeque<Pending>,
    pending_bytes: u64,
    /// Blocks hashed since the last checkpoint, in order; replayed on crash.
    since_checkpoint: VecDeque<Pending>,
    /// Locators present in `pending` or `since_checkpoint`.
    tracked: HashSet<Locator>,
    /// Coverage count known durable in the index.
    checkpoint: u64,
}

impl PipelineState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn enqueue(&mut self, index: &mut HashIndex, locator: Locator, payload: Payload) {
        index.ingested += 1;
        self.pending_bytes += payload.len();
        self.tracked.insert(locator);
        self.pending.push_back(Pending { locator, payload });
    }

    pub fn lag_blocks(&self) -> usize {
        self.pending.len()
    }

    pub fn lag_bytes(&self) -> u64 {
        self.pending_bytes
    }

    pub fn checkpoint(&self) -> u64 {
        self.checkpoint
    }

    pub fn hashed_since_checkpoint(&self) -> usize {
        self.since_checkpoint.len()
    }

    pub fn pending_locators(&self) -> impl Iterator<Item = Locator> + '_ {
        self.pending.iter().map(|p| p.locator)
    }

    /// Records everything hashed so far as durable.
    pub fn take_checkpoint(&mut self, index: &HashIndex) {
        self.checkpoint = index.covered;
        for p in self.since_checkpoint.drain(..) {
            self.tracked.remove(&p.locator);
        }
    }

    /// Drops a block that left the store before or after hashing.
    pub fn forget(&mut self, index: &mut HashIndex, locator: Locator) {
        if !self.tracked.remove(&locator) {
            return;
        }
        let before = self.pending.len();
        let mut dropped_bytes = 0;
        self.pending.retain(|p| {
            let keep = p.locator != locator;
            if !keep {
                dropped_bytes += p.payload.len();
            }
            keep
        });
        let dropped = (before - self.pending.len()) as u64;
        self.pending_bytes -= dropped_bytes;
        // A dropped pending block no longer needs hashing.
        index.ingested -= dropped;
        self.since_checkpoint.retain(|p| p.locator != locator);
    }

    /// True when `locator` is queued or hashed above the checkpoint.
    pub fn tracks(&self, locator: Locator) -> bool {
        self.tracked.contains(&locator)
    }
}

/// Hashes pending blocks in order until `budget_bytes` is spent. A block is
/// hashed only if it fits in the remaining budget.
pub fn pipeline_tick(
    state: &mut PipelineState,
    index: &mut HashIndex,
    budget_bytes: u64,
    meter: &mut HashMeter,
) -> usize {
    let mut remaining = budget_bytes;
    let mut hashed = 0;
    while let Some(front) = state.pending.front() {
        let len = front.payload.len();
        if len > remaining {
            break;
        }
        remaining -= len;
        let item = state.pending.pop_front().expect("front exists");
        state.pending_bytes -= len;
        let digest = meter.fingerprint(&item.payload);
        if !index.lost {
            index.add(digest, item.locator);
        }
        index.covered += 1;
        state.since_checkpoint.push_back(item);
        hashed += 1;
    }
    hashed
}

/// Hashes everything pending regardless of budget.
pub fn pipeline_drain(state: &mut PipelineState, index: &mut HashIndex, meter: &mut HashMeter) -> usize {
    pipeline_tick(state, index, u64::MAX, meter)
}

/// Condition 2: the pipeline died mid-stream. Work above the checkpoint is
/// discarded from the index and queued again.
pub fn crash_interrupt(state: &mut PipelineState, index: &mut HashIndex) -> usize {
    let redo: Vec<Pending> = state.since_checkpoint.drain(..).collect();
    let n = redo.len();
    for item in redo.into_iter().rev() {
        index.remove(item.locator);
        index.covered -= 1;
        state.pending_bytes += item.payload.len();
        state.pending.push_front(item);
    }
    n
}

/// Condition 3 repair: full scan of the inventory.
///
/// Charges every block to `meter`; hash ops end up as leaves plus internal
/// Merkle nodes. Leaves are ordered by locator. Blocks still queued in the
/// pipeline are covered by the scan but their queue entries stay, so
/// crash-interrupted work is still redone when the pipeline drains.
pub fn rebuild_index<'a, I>(blocks: I, meter: &mut HashMeter) -> (HashIndex, MerkleTree)
where
    I: IntoIterator<Item = (Locator, &'a Payload)>,
{
    let mut index = HashIndex::new();
    let mut leaves = Vec::new();
    for (loc, payload) in blocks {
        let d = meter.fingerprint(payload);
        index.add(d, loc);
        leaves.push(d);
    }
    let tree = MerkleTree::build(leaves, meter);
    (index, tree)
}

/// Replaces a lost index with a rebuilt one while keeping pipeline bookkeeping.
pub fn install_rebuilt(index: &mut HashIndex, rebuilt: HashIndex, pending_in_queue: usize) {
    index.by_digest = rebuilt.by_digest;
    index.by_locator = rebuilt.by_locator;
    index.entries = rebuilt.entries;
    index.lost = false;
    index.covered = index.ingested - pending_in_queue as u64;
}

/// Symmetric difference by content, mapped back to locators on each side.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HashDelta {
    /// Local locators whose content the remote lacks.
    pub missing_remote: Vec<Locator>,
    /// Remote locators whose content the local side lacks.
    pub missing_local: Vec<Locator>,
    pub comparisons: u64,
}

pub fn hash_delta(local: &HashIndex, remote: &HashIndex) -> Result<HashDelta, HashError> {
    if !local.is_consistent() {
        return Err(HashError::InconsistentIndex("local"));
    }
    if !remote.is_consistent() {
        return Err(HashError::InconsistentIndex("remote"));
    }
    let mut out = HashDelta::default();
    let mut a = local.by_digest.iter().peekable();
    let mut b = remote.by_digest.iter().peekable();
    loop {
        match (a.peek(), b.peek()) {
            (Some((da, la)), Some((db, lb))) => {
                out.comparisons += 1;
                match da.cmp(db) {
                    std::cmp::Ordering::Less => {
                        out.missing_remote.extend_from_slice(la);
                        a.next();
                    }
                    std::cmp::Ordering::Greater => {
                        out.missing_local.extend_from_slice(lb);
                        b.next();
                    }
                    std::cmp::Ordering::Equal => {
                        a.next();
                        b.next();
                    }
                }
            }
            (Some((_, la)), None) => {
                out.missing_remote.extend_from_slice(la);
                a.next();
            }
            (None, Some((_, lb))) => {
                out.missing_local.extend_from_slice(lb);
                b.next();
            }
            (None, None) => break,
        }
    }
    out.missing_remote.sort_unstable();
    out.missing_local.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fill(n: u64, len: u64) -> (PipelineState, HashIndex) {
        let mut p = PipelineState::new();
        let mut idx = HashIndex::new();
        for i in 0..n {
            p.enqueue(&mut idx, i, Payload::virtual_block(len, i));
        }
        (p, idx)
    }

    #[test]
    fn drain_clears_lag() {
        let (mut p, mut idx) = fill(10, 100);
        let mut m = HashMeter::default();
        assert!(!idx.is_consistent());
        pipeline_tick(&mut p, &mut idx, 1000, &mut m);
        assert_eq!(p.lag_blocks(), 0);
        assert!(idx.is_consistent());
        assert_eq!(idx.len(), 10);
    }

    #[test]
    fn zero_budget_starves() {
        let (mut p, mut idx) = fill(3, 100);
        let mut m = HashMeter::default();
        pipeline_tick(&mut p, &mut idx, 0, &mut m);
        p.enqueue(&mut idx, 99, Payload::virtual_block(100, 99));
        pipeline_tick(&mut p, &mut idx, 0, &mut m);
        assert_eq!(p.lag_blocks(), 4);
        assert_eq!(m.hash_ops, 0);
    }

    #[test]
    fn ingest_twice_budget_leaves_half_lagging() {
        let mut p = PipelineState::new();
        let mut idx = HashIndex::new();
        let mut m = HashMeter::default();
        let mut loc = 0;
        let ticks = 200;
        for _ in 0..ticks {
            for _ in 0..4 {
                p.enqueue(&mut idx, loc, Payload::virtual_block(50, loc));
                loc += 1;
            }
            pipeline_tick(&mut p, &mut idx, 100, &mut m);
        }
        // Closed form: 4 ingested and 2 hashed per tick.
        assert_eq!(p.lag_blocks(), 2 * ticks);
        assert_eq!(idx.coverage(), 2 * ticks as u64);
    }

    #[test]
    fn crash_requeues_work_above_checkpoint() {
        let (mut p, mut idx) = fill(5, 10);
        let mut m = HashMeter::default();
        pipeline_drain(&mut p, &mut idx, &mut m);
        p.take_checkpoint(&idx);
        assert_eq!(crash_interrupt(&mut p, &mut idx), 0);
        for i in 5..10_005 {
            p.enqueue(&mut idx, i, Payload::virtual_block(10, i));
        }
        pipeline_drain(&mut p, &mut idx, &mut m);
        assert!(idx.is_consistent());
        let n = crash_interrupt(&mut p, &mut idx);
        assert_eq!(n, 10_000);
        assert_eq!(p.lag_blocks(), 10_000);
        assert_eq!(idx.len(), 5);
        assert!(!idx.is_consistent());
        let before = m.hash_ops;
        pipeline_drain(&mut p, &mut idx, &mut m);
        assert_eq!(m.hash_ops - before, 10_000);
        assert!(idx.is_consistent());
        assert_eq!(idx.len(), 10_005);
    }

    #[test]
    fn rebuild_counts_leaves_and_internal_nodes() {
        let payloads: Vec<Payload> = (0..1000).map(|i| Payload::virtual_block(1_000, i)).collect();
        let mut m = HashMeter::default();
        let (idx, tree) = rebuild_index(payloads.iter().enumerate().map(|(i, p)| (i as u64, p)), &mut m);
        assert_eq!(idx.len(), 1000);
        assert_eq!(m.hash_ops as usize, tree.node_count());
        assert_eq!(m.hashed_bytes, 1_000_000);
        let mut empty = HashMeter::default();
        let (e, _) = rebuild_index(std::iter::empty(), &mut empty);
        assert!(e.is_empty());
        assert_eq!(empty.hashed_bytes, 0);
    }

    #[test]
    fn delta_refuses_inconsistent_indexes() {
        let (_, stale) = fill(3, 10);
        let fresh = HashIndex::new();
        assert!(matches!(hash_delta(&fresh, &stale), Err(HashError::InconsistentIndex("remote"))));
        let mut lost = HashIndex::new();
        lost.mark_lost();
        assert!(hash_delta(&lost, &fresh).is_err());
    }

    #[test]
    fn delta_matches_content_comparison() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let build = |rng: &mut ChaCha8Rng| {
                let mut p = PipelineState::new();
                let mut idx = HashIndex::new();
                let mut contents = Vec::new();
                for loc in 0..rng.gen_range(0..200u64) {
                    let bytes: Vec<u8> = vec![rng.gen_range(0..40u8); 3];
                    contents.push((loc, bytes.clone()));
                    p.enqueue(&mut idx, loc, Payload::concrete(bytes));
                }
                pipeline_drain(&mut p, &mut idx, &mut HashMeter::default());
                (idx, contents)
            };
            let (a, ca) = build(&mut rng);
            let (b, cb) = build(&mut rng);
            let d = hash_delta(&a, &b).unwrap();
            let expect_remote: Vec<u64> =
                ca.iter().filter(|(_, x)| !cb.iter().any(|(_, y)| x == y)).map(|(l, _)| *l).collect();
            let expect_local: Vec<u64> =
                cb.iter().filter(|(_, y)| !ca.iter().any(|(_, x)| x == y)).map(|(l, _)| *l).collect();
            assert_eq!(d.missing_remote, expect_remote);
            assert_eq!(d.missing_local, expect_local);
        }
    }
}
