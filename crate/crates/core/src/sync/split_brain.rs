use std::collections::{BTreeMap, BTreeSet};

use crate::identity::CompositeId;
use crate::index::{IdentifierIndex, UserKey};

/// Caller-supplied resolution for keys written on both sides.
pub trait MergeResolver {
    /// `older` and `newer` are ordered by `(lcv, nid)`, so the call does not
    /// depend on which view was passed first.
    fn resolve(&mut self, key: UserKey, older: CompositeId, newer: CompositeId) -> CompositeId;
}

pub enum ReconciliationPolicy<'a> {
    /// Higher lcv wins; equal lcvs fall back to the greater node id.
    LwwByLcv,
    ApplicationMerge(&'a mut dyn MergeResolver),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conflict {
    pub key: UserKey,
    /// Newest candidate from each side, ascending by `(lcv, nid)`.
    pub candidates: [CompositeId; 2],
    pub winner: CompositeId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Reconciliation {
    pub merged: BTreeSet<CompositeId>,
    /// Current id per user key after resolution.
    pub resolved: BTreeMap<UserKey, CompositeId>,
    pub conflicts: Vec<Conflict>,
    /// Same `(nid, lcv)` bound to different entries on the two sides.
    pub id_collisions: usize,
}

fn newest(ids: &[CompositeId]) -> Option<CompositeId> {
    ids.iter().copied().max_by_key(|id| (id.lcv, id.nid))
}

fn keyed(index: &IdentifierIndex) -> BTreeMap<UserKey, Vec<CompositeId>> {
    let mut out: BTreeMap<UserKey, Vec<CompositeId>> = BTreeMap::new();
    for e in index.iter() {
        if let Some(k) = e.user_key {
            out.entry(k).or_default().push(e.id);
        }
    }
    out
}

/// Merges two independently progressed views. Ids never collide because each
/// primary mints under its own node id; only user keys can conflict.
pub fn reconcile_split_brain(
    a: &IdentifierIndex,
    b: &IdentifierIndex,
    mut policy: ReconciliationPolicy<'_>,
) -> Reconciliation {
    let mut out = Reconciliation::default();
    for e in a.iter() {
        if let Some(other) = b.get(&e.id) {
            if other.crc != e.crc || other.byte_len != e.byte_len || other.user_key != e.user_key {
                out.id_collisions += 1;
            }
        }
    }
    out.merged = a.ids().chain(b.ids()).collect();

    let (ka, kb) = (keyed(a), keyed(b));
    let keys: BTreeSet<UserKey> = ka.keys().chain(kb.keys()).copied().collect();
    for key in keys {
        let only = |mine: &BTreeMap<UserKey, Vec<CompositeId>>, other: &IdentifierIndex| -> Vec<CompositeId> {
            mine.get(&key).map_or_else(Vec::new, |v| v.iter().copied().filter(|id| !other.contains(id)).collect())
        };
        let (a_only, b_only) = (only(&ka, b), only(&kb, a));
        let all: Vec<CompositeId> = ka.get(&key).into_iter().chain(kb.get(&key)).flatten().copied().collect();
        let fallback = newest(&all).expect("key has at least one id");
        let winner = match (newest(&a_only), newest(&b_only)) {
            (Some(x), Some(y)) if x.nid != y.nid => {
                let (older, newer) = if (x.lcv, x.nid) < (y.lcv, y.nid) { (x, y) } else { (y, x) };
                let winner = match &mut policy {
                    ReconciliationPolicy::LwwByLcv => newer,
                    ReconciliationPolicy::ApplicationMerge(r) => r.resolve(key, older, newer),
                };
                out.conflicts.push(Conflict { key, candidates: [older, newer], winner });
                winner
            }
            _ => fallback,
        };
        out.resolved.insert(key, winner);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::{NamespaceTag, NodeId};
    use crate::index::IndexEntry;

    fn id(n: u8, lcv: u64) -> CompositeId {
        CompositeId::new(NodeId::from_bytes([n; 16]), lcv, NamespaceTag::DEFAULT)
    }

    fn put(ix: &mut IdentifierIndex, id: CompositeId, key: u64) {
        ix.insert(IndexEntry { id, location: id.lcv, byte_len: 1, crc: 0, user_key: Some(UserKey(key)) }).unwrap();
    }

    #[test]
    fn disjoint_keys_merge_to_union() {
        let (mut a, mut b) = (IdentifierIndex::new(), IdentifierIndex::new());
        put(&mut a, id(1, 1), 1);
        put(&mut b, id(2, 1), 2);
        let r = reconcile_split_brain(&a, &b, ReconciliationPolicy::LwwByLcv);
        assert!(r.conflicts.is_empty());
        assert_eq!(r.merged.len(), 2);
        assert_eq!(r.id_collisions, 0);
    }

    #[test]
    fn lww_picks_higher_lcv() {
        let (mut a, mut b) = (IdentifierIndex::new(), IdentifierIndex::new());
        put(&mut a, id(1, 17), 9);
        put(&mut b, id(2, 40), 9);
        let r = reconcile_split_brain(&a, &b, ReconciliationPolicy::LwwByLcv);
        assert_eq!(r.conflicts.len(), 1);
        assert_eq!(r.resolved[&UserKey(9)], id(2, 40));
        let r2 = reconcile_split_brain(&b, &a, ReconciliationPolicy::LwwByLcv);
        assert_eq!(r, r2);
    }

    #[test]
    fn lww_tie_breaks_on_node_id() {
        let (mut a, mut b) = (IdentifierIndex::new(), IdentifierIndex::new());
        put(&mut a, id(7, 5), 1);
        put(&mut b, id(3, 5), 1);
        let r = reconcile_split_brain(&a, &b, ReconciliationPolicy::LwwByLcv);
        assert_eq!(r.resolved[&UserKey(1)], id(7, 5));
    }

    #[test]
    fn one_sided_update_is_not_a_conflict() {
        let (mut a, mut b) = (IdentifierIndex::new(), IdentifierIndex::new());
        put(&mut a, id(1, 1), 4);
        put(&mut b, id(1, 1), 4);
        put(&mut a, id(1, 2), 4);
        let r = reconcile_split_brain(&a, &b, ReconciliationPolicy::LwwByLcv);
        assert!(r.conflicts.is_empty());
        assert_eq!(r.resolved[&UserKey(4)], id(1, 2));
    }

    struct KeepOlder(usize);
    impl MergeResolver for KeepOlder {
        fn resolve(&mut self, _key: UserKey, older: CompositeId, _newer: CompositeId) -> CompositeId {
            self.0 += 1;
            older
        }
    }

    #[test]
    fn application_hook_sees_both_candidates() {
        let (mut a, mut b) = (IdentifierIndex::new(), IdentifierIndex::new());
        put(&mut a, id(1, 17), 9);
        put(&mut b, id(2, 40), 9);
        let mut hook = KeepOlder(0);
        let r = reconcile_split_brain(&a, &b, ReconciliationPolicy::ApplicationMerge(&mut hook));
        assert_eq!(hook.0, 1);
        assert_eq!(r.resolved[&UserKey(9)], id(1, 17));
        assert_eq!(r.conflicts[0].candidates, [id(1, 17), id(2, 40)]);
    }
}
