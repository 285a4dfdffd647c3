//! Per-node identifier index.
//!
//! Entries are kept per source node id, sorted by LCV. Local ingests append;
//! replicated entries from other nodes are placed by binary search. The wire
//! form exchanged between peers is ids only:
//!
//! ```text
//! "MDRI" | version u32 BE (1) | count u64 BE | count × 32-byte CompositeId
//! ```

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::Locator;
use crate::identity::{CompositeId, NamespaceTag, NodeId, ID_LEN};

pub const STREAM_MAGIC: [u8; 4] = *b"MDRI";
pub const STREAM_VERSION: u32 = 1;
pub const STREAM_HEADER_LEN: usize = 16;
/// Dump file extension for serialized indexes.
pub const DUMP_EXTENSION: &str = "mdri";

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("id {0} already indexed with different content metadata")]
    ConflictingEntry(CompositeId),
    #[error("entry {0} has zero length")]
    ZeroLength(CompositeId),
    #[error("bad stream magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported stream version {0}")]
    BadVersion(u32),
    #[error("stream declares {declared} entries but holds {available} bytes of entries")]
    TruncatedStream { declared: u64, available: usize },
    #[error("{0} unexpected bytes after the last entry")]
    TrailingBytes(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Logical address a client writes to. Several ids may share one key when the
/// datum is rewritten.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct UserKey(pub u64);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub id: CompositeId,
    pub location: Locator,
    pub byte_len: u64,
    pub crc: u32,
    pub user_key: Option<UserKey>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted,
    /// Identical entry already present.
    Duplicate,
    /// At or below the retention floor for its node id; ignored.
    Expired,
}

#[derive(Debug, Clone, Default)]
struct NidLog {
    /// Entries with `lcv <= floor` were expired and are never re-admitted.
    floor: u64,
    entries: VecDeque<IndexEntry>,
}

impl NidLog {
    fn position(&self, lcv: u64) -> Result<usize, usize> {
        let i = self.entries.partition_point(|e| e.id.lcv < lcv);
        match self.entries.get(i) {
            Some(e) if e.id.lcv == lcv => Ok(i),
            _ => Err(i),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct IdentifierIndex {
    logs: BTreeMap<NodeId, NidLog>,
    count: usize,
}

impl IdentifierIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// `32 × entries`.
    pub fn logical_size_bytes(&self) -> u64 {
        ID_LEN as u64 * self.count as u64
    }

    /// `32 × entries × (1 + fragmentation_factor)`.
    pub fn physical_size_bytes(&self, fragmentation_factor: f64) -> f64 {
        physical_size_bytes(self.count as u64, fragmentation_factor)
    }

    pub fn insert(&mut self, entry: IndexEntry) -> Result<InsertOutcome, IndexError> {
        if entry.byte_len == 0 {
            return Err(IndexError::ZeroLength(entry.id));
        }
        let log = self.logs.entry(entry.id.nid).or_default();
        if entry.id.lcv <= log.floor {
            return Ok(InsertOutcome::Expired);
        }
        if log.entries.back().is_none_or(|last| last.id.lcv < entry.id.lcv) {
            log.entries.push_back(entry);
            self.count += 1;
            return Ok(InsertOutcome::Inserted);
        }
        match log.position(entry.id.lcv) {
            Ok(i) => {
                let existing = &log.entries[i];
                if existing == &entry {
                    Ok(InsertOutcome::Duplicate)
                } else {
                    Err(IndexError::ConflictingEntry(entry.id))
                }
            }
            Err(i) => {
                log.entries.insert(i, entry);
                self.count += 1;
                Ok(InsertOutcome::Inserted)
            }
        }
    }

    pub fn get(&self, id: &CompositeId) -> Option<&IndexEntry> {
        let log = self.logs.get(&id.nid)?;
        let i = log.position(id.lcv).ok()?;
        let e = &log.entries[i];
        (e.id == *id).then_some(e)
    }

    pub fn contains(&self, id: &CompositeId) -> bool {
        self.get(id).is_some()
    }

    /// Entries of `nid` with `lcv > watermark`, located by binary search.
    pub fn entries_above(&self, nid: &NodeId, watermark: u64) -> impl Iterator<Item = &IndexEntry> {
        let slice = self.logs.get(nid).map(|log| {
            let start = log.entries.partition_point(|e| e.id.lcv <= watermark);
            log.entries.range(start..)
        });
        slice.into_iter().flatten()
    }

    /// All entries in `(nid, lcv)` order.
    pub fn iter(&self) -> impl Iterator<Item = &IndexEntry> {
        self.logs.values().flat_map(|l| l.entries.iter())
    }

    pub fn ids(&self) -> impl Iterator<Item = CompositeId> + '_ {
        self.iter().map(|e| e.id)
    }

    pub fn nids(&self) -> impl Iterator<Item = &NodeId> {
        self.logs.iter().filter(|(_, l)| !l.entries.is_empty()).map(|(n, _)| n)
    }

    pub fn max_lcv(&self, nid: &NodeId) -> u64 {
        self.logs.get(nid).and_then(|l| l.entries.back()).map_or(0, |e| e.id.lcv)
    }

    pub fn retention_floor(&self, nid: &NodeId) -> u64 {
        self.logs.get(nid).map_or(0, |l| l.floor)
    }

    /// Removes an entry. Removing the oldest entry of a node id raises that
    /// id's retention floor so a late replica cannot resurrect it.
    pub fn expire(&mut self, id: &CompositeId) -> Option<IndexEntry> {
        let log = self.logs.get_mut(&id.nid)?;
        let i = log.position(id.lcv).ok()?;
        if log.entries[i].id != *id {
            return None;
        }
        let e = log.entries.remove(i).expect("position is in range");
        if i == 0 {
            log.floor = log.floor.max(e.id.lcv);
        }
        self.count -= 1;
        Some(e)
    }

    /// Sets the placement of an existing entry; used when blocks move.
    pub fn relocate(&mut self, id: &CompositeId, location: Locator) -> bool {
        let Some(log) = self.logs.get_mut(&id.nid) else { return false };
        match log.position(id.lcv) {
            Ok(i) if log.entries[i].id == *id => {
                log.entries[i].location = location;
                true
            }
            _ => false,
        }
    }
}

pub fn physical_size_bytes(entries: u64, fragmentation_factor: f64) -> f64 {
    ID_LEN as f64 * entries as f64 * (1.0 + fragmentation_factor)
}

// ---- Set difference ----

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SetDifference {
    pub missing_in_b: Vec<CompositeId>,
    pub missing_in_a: Vec<CompositeId>,
    pub comparisons: u64,
}

impl SetDifference {
    pub fn is_empty(&self) -> bool {
        self.missing_in_a.is_empty() && self.missing_in_b.is_empty()
    }
}

/// Single merge pass over two ascending id sequences.
pub fn merge_difference<A, B>(a: A, b: B) -> SetDifference
where
    A: IntoIterator<Item = CompositeId>,
    B: IntoIterator<Item = CompositeId>,
{
    let mut out = SetDifference::default();
    let mut a = a.into_iter().peekable();
    let mut b = b.into_iter().peekable();
    loop {
        match (a.peek(), b.peek()) {
            (Some(x), Some(y)) => {
                out.comparisons += 1;
                match x.cmp(y) {
                    std::cmp::Ordering::Less => out.missing_in_b.push(a.next().expect("peeked")),
                    std::cmp::Ordering::Greater => out.missing_in_a.push(b.next().expect("peeked")),
                    std::cmp::Ordering::Equal => {
                        a.next();
                        b.next();
                    }
                }
            }
            (Some(_), None) => out.missing_in_b.extend(a.by_ref()),
            (None, Some(_)) => out.missing_in_a.extend(b.by_ref()),
            (None, None) => break,
        }
    }
    out
}

pub fn set_difference(a: &IdentifierIndex, b: &IdentifierIndex) -> SetDifference {
    merge_difference(a.ids(), b.ids())
}

/// Set difference restricted to one namespace.
pub fn set_difference_scoped(
    a: &IdentifierIndex,
    b: &IdentifierIndex,
    nst: NamespaceTag,
) -> SetDifference {
    merge_difference(a.ids().filter(|i| i.nst == nst), b.ids().filter(|i| i.nst == nst))
}

// ---- Checkpoints ----

/// What this node has synchronized with `peer`, per source node id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub peer: NodeId,
    watermarks: BTreeMap<NodeId, u64>,
}

impl Checkpoint {
    pub fn new(peer: NodeId) -> Self {
        Self { peer, watermarks: BTreeMap::new() }
    }

    pub fn watermark(&self, nid: &NodeId) -> u64 {
        self.watermarks.get(nid).copied().unwrap_or(0)
    }

    /// Raises the watermark for `nid`; lower values are ignored.
    pub fn advance(&mut self, nid: NodeId, lcv: u64) {
        let w = self.watermarks.entry(nid).or_insert(0);
        *w = (*w).max(lcv);
    }

    /// Advances every watermark to the highest lcv present in `index`.
    pub fn advance_to(&mut self, index: &IdentifierIndex) {
        for nid in index.nids().copied().collect::<Vec<_>>() {
            self.advance(nid, index.max_lcv(&nid));
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeId, &u64)> {
        self.watermarks.iter()
    }
}

// ---- Wire stream ----

pub fn stream_len(entries: u64) -> u64 {
    STREAM_HEADER_LEN as u64 + ID_LEN as u64 * entries
}

pub fn encode_stream<I>(ids: I) -> Vec<u8>
where
    I: IntoIterator<Item = CompositeId>,
{
    let mut body = Vec::new();
    let mut n = 0u64;
    for id in ids {
        body.extend_from_slice(&id.encode());
        n += 1;
    }
    let mut out = Vec::with_capacity(STREAM_HEADER_LEN + body.len());
    out.extend_from_slice(&STREAM_MAGIC);
    out.extend_from_slice(&STREAM_VERSION.to_be_bytes());
    out.extend_from_slice(&n.to_be_bytes());
    out.extend_from_slice(&body);
    out
}

/// Full index, or only entries above `since`'s watermarks.
pub fn serialize_index(index: &IdentifierIndex, since: Option<&Checkpoint>) -> Vec<u8> {
    match since {
        None => encode_stream(index.ids()),
        Some(cp) => encode_stream(
            index
                .logs.keys().flat_map(|nid| index.entries_above(nid, cp.watermark(nid)))
                .map(|e| e.id),
        ),
    }
}

pub fn deserialize_index(stream: &[u8]) -> Result<Vec<CompositeId>, IndexError> {
    if stream.len() < STREAM_HEADER_LEN {
        if stream.len() >= 4 && stream[..4] != STREAM_MAGIC {
            return Err(IndexError::BadMagic(stream[..4].try_into().expect("4 bytes")));
        }
        return Err(IndexError::TruncatedStream { declared: 0, available: 0 });
    }
    let magic: [u8; 4] = stream[..4].try_into().expect("4 bytes");
    if magic != STREAM_MAGIC {
        return Err(IndexError::BadMagic(magic));
    }
    let version = u32::from_be_bytes(stream[4..8].try_into().expect("4 bytes"));
    if version != STREAM_VERSION {
        return Err(IndexError::BadVersion(version));
    }
    let declared = u64::from_be_bytes(stream[8..16].try_into().expect("8 bytes"));
    let body = &stream[STREAM_HEADER_LEN..];
    let need = declared.saturating_mul(ID_LEN as u64);
    if (body.len() as u64) < need {
        return Err(IndexError::TruncatedStream { declared, available: body.len() });
    }
    if body.len() as u64 > need {
        return Err(IndexError::TrailingBytes(body.len() - need as usize));
    }
    Ok(body
        .chunks_exact(ID_LEN)
        .map(|c| CompositeId::decode(c).expect("exact-width chunk"))
        .collect())
}

pub fn write_dump(path: &Path, index: &IdentifierIndex) -> Result<(), IndexError> {
    fs::write(path, serialize_index(index, None))?;
    Ok(())
}

pub fn read_dump(path: &Path) -> Result<Vec<CompositeId>, IndexError> {
    deserialize_index(&fs::read(path)?)
}
