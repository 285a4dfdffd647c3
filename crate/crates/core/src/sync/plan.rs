use crate::identity::CompositeId;
use crate::index::{
    deserialize_index, merge_difference, serialize_index, Checkpoint, IdentifierIndex, IndexError,
    InsertOutcome,
};
use crate::hashline::hash_delta;
use crate::node::{NodeError, StorageNode};

use super::SyncError;

/// Bytes per watermark on the wire: 16-byte nid plus 8-byte lcv.
pub const WATERMARK_ENTRY_LEN: u64 = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExchangeMode {
    /// Both sides ship their whole index.
    Full,
    /// Both sides ship only entries above the shared checkpoint.
    Incremental,
}

/// What one session will move. Byte counts are simulated (unscaled) bytes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeltaPlan {
    pub ids_to_pull: Vec<CompositeId>,
    pub ids_to_push: Vec<CompositeId>,
    pub index_entries_sent: u64,
    pub index_entries_received: u64,
    /// Watermark bytes carried in each direction (incremental mode).
    pub watermark_bytes: u64,
    pub content_bytes_push: u64,
    pub content_bytes_pull: u64,
    pub rehash_bytes_local: u64,
    pub rehash_bytes_peer: u64,
    pub comparisons: u64,
    /// False when a digest index must be rebuilt before the id lists mean anything.
    pub valid: bool,
}

impl DeltaPlan {
    pub fn content_bytes_to_transfer(&self) -> u64 {
        self.content_bytes_push + self.content_bytes_pull
    }

    pub fn rehash_required_bytes(&self) -> u64 {
        self.rehash_bytes_local + self.rehash_bytes_peer
    }

    /// Stream bytes in both directions at simulation scale.
    pub fn index_bytes_exchanged(&self) -> u64 {
        crate::index::stream_len(self.index_entries_sent)
            + crate::index::stream_len(self.index_entries_received)
            + 2 * self.watermark_bytes
    }

    pub fn is_empty(&self) -> bool {
        self.ids_to_pull.is_empty() && self.ids_to_push.is_empty()
    }
}

fn sum_len(index: &IdentifierIndex, ids: &[CompositeId]) -> u64 {
    ids.iter().filter_map(|id| index.get(id)).map(|e| e.byte_len).sum()
}

/// Identifier-based delta: serialize, exchange, merge-diff.
///
/// Ids the receiver has already expired are left out. Incremental mode
/// relies on every entry at or below a watermark being present on both sides.
pub fn compute_delta_meta(
    local: &IdentifierIndex,
    checkpoint: &Checkpoint,
    peer: &IdentifierIndex,
    mode: ExchangeMode,
) -> Result<DeltaPlan, IndexError> {
    let since = match mode {
        ExchangeMode::Full => None,
        ExchangeMode::Incremental => Some(checkpoint),
    };
    let outbound = deserialize_index(&serialize_index(local, since))?;
    let inbound = deserialize_index(&serialize_index(peer, since))?;
    let (sent, received) = (outbound.len() as u64, inbound.len() as u64);
    let diff = merge_difference(outbound, inbound);
    let ids_to_push: Vec<_> = diff
        .missing_in_b
        .into_iter()
        .filter(|id| !peer.contains(id) && id.lcv > peer.retention_floor(&id.nid))
        .collect();
    let ids_to_pull: Vec<_> = diff
        .missing_in_a
        .into_iter()
        .filter(|id| !local.contains(id) && id.lcv > local.retention_floor(&id.nid))
        .collect();
    Ok(DeltaPlan {
        content_bytes_push: sum_len(local, &ids_to_push),
        content_bytes_pull: sum_len(peer, &ids_to_pull),
        ids_to_pull,
        ids_to_push,
        index_entries_sent: sent,
        index_entries_received: received,
        watermark_bytes: since.map_or(0, |cp| cp.iter().count() as u64 * WATERMARK_ENTRY_LEN),
        rehash_bytes_local: 0,
        rehash_bytes_peer: 0,
        comparisons: diff.comparisons,
        valid: true,
    })
}

/// Content-based delta. When either digest index is stale, interrupted or
/// lost, the plan only carries the rehash cost and is marked invalid.
pub fn compute_delta_hash(local: &StorageNode, peer: &StorageNode) -> Result<DeltaPlan, SyncError> {
    let (lb, pb) = match (local.baseline(), peer.baseline()) {
        (Some(l), Some(p)) => (l, p),
        _ => return Err(NodeError::BaselineDisabled.into()),
    };
    let mut plan = DeltaPlan {
        index_entries_sent: local.index().len() as u64,
        index_entries_received: peer.index().len() as u64,
        rehash_bytes_local: local.rehash_required_bytes(),
        rehash_bytes_peer: peer.rehash_required_bytes(),
        ..DeltaPlan::default()
    };
    let Ok(hd) = hash_delta(&lb.index, &pb.index) else {
        return Ok(plan);
    };
    plan.ids_to_push = local.ids_at(&hd.missing_remote);
    plan.ids_to_pull = peer.ids_at(&hd.missing_local);
    plan.ids_to_push.sort_unstable();
    plan.ids_to_pull.sort_unstable();
    plan.content_bytes_push = sum_len(local.index(), &plan.ids_to_push);
    plan.content_bytes_pull = sum_len(peer.index(), &plan.ids_to_pull);
    plan.comparisons = hd.comparisons;
    plan.valid = true;
    Ok(plan)
}

/// Moves the planned blocks. Returns how many were newly stored.
pub fn apply_plan(local: &mut StorageNode, peer: &mut StorageNode, plan: &DeltaPlan) -> Result<u64, SyncError> {
    if !plan.valid {
        return Err(SyncError::InvalidState("plan requires a rehash first".into()));
    }
    let mut stored = 0;
    for id in &plan.ids_to_push {
        let block = local.export_block(id)?;
        if peer.import_block(block)? == InsertOutcome::Inserted {
            stored += 1;
        }
    }
    for id in &plan.ids_to_pull {
        let block = peer.export_block(id)?;
        if local.import_block(block)? == InsertOutcome::Inserted {
            stored += 1;
        }
    }
    Ok(stored)
}
