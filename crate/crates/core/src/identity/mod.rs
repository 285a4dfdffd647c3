//! Composite block identifiers.
//!
//! A [`CompositeId`] is assigned at ingestion time and never derived from
//! block content. It is the triple `NID:LCV:NST`:
//!
//! - `NID` ([`NodeId`]): 128-bit opaque token, unique per node.
//! - `LCV`: per-node logical clock value, strictly increasing, persisted to a
//!   write-ahead log before it is exposed (see [`LogicalClock`]).
//! - `NST` ([`NamespaceTag`]): tenant / partition scope, `0` by default.
//!
//! The wire encoding is exactly 32 bytes: `nid (16) ∥ lcv (8, BE) ∥ nst (8, BE)`.

mod clock;
mod wal;

use std::cmp::Ordering;
use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use clock::{recover_clock, LogicalClock, RecoveryReport};
pub use wal::{
    decode_wal, encode_wal_record, AppendFault, FileWal, MemWal, WalScan, WalStorage, WalRecord,
    WAL_RECORD_LEN,
};

/// Serialized width of a [`CompositeId`].
pub const ID_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum IdentityError {
    #[error("identifier token must be {ID_LEN} bytes, got {0}")]
    BadLength(usize),
    #[error("WAL append failed: {0}")]
    WalAppendFailure(#[source] std::io::Error),
    #[error("WAL corrupted at byte offset {offset}: {reason}")]
    WalCorruption { offset: u64, reason: String },
    #[error("WAL I/O error: {0}")]
    WalIo(#[from] std::io::Error),
    #[error("logical clock exhausted")]
    ClockExhausted,
}

/// 128-bit node identifier.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId([u8; 16]);

impl NodeId {
    pub const fn from_bytes(bytes: [u8; 16]) -> Self {
        Self(bytes)
    }

    /// Draws a fresh identifier from `entropy`. Deterministic for a seeded source.
    pub fn generate<R: RngCore + ?Sized>(entropy: &mut R) -> Self {
        let mut bytes = [0u8; 16];
        entropy.fill_bytes(&mut bytes);
        Self(bytes)
    }

    pub const fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeId({})", &self.to_hex()[..8])
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Logical partition / tenant tag. `0` is the default namespace.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct NamespaceTag(pub u64);

impl NamespaceTag {
    pub const DEFAULT: NamespaceTag = NamespaceTag(0);
}

/// `NID:LCV:NST` block identity.
///
/// Ordering is by `(nid, lcv)`. The namespace tag only breaks ties so that
/// `Ord` stays consistent with `Eq`; a well-formed cluster never produces two
/// ids that share `(nid, lcv)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CompositeId {
    pub nid: NodeId,
    pub lcv: u64,
    pub nst: NamespaceTag,
}

impl CompositeId {
    pub const fn new(nid: NodeId, lcv: u64, nst: NamespaceTag) -> Self {
        Self { nid, lcv, nst }
    }

    pub fn encode(&self) -> [u8; ID_LEN] {
        let mut out = [0u8; ID_LEN];
        out[..16].copy_from_slice(&self.nid.0);
        out[16..24].copy_from_slice(&self.lcv.to_be_bytes());
        out[24..].copy_from_slice(&self.nst.0.to_be_bytes());
        out
    }

    pub fn decode(token: &[u8]) -> Result<Self, IdentityError> {
        if token.len() != ID_LEN {
            return Err(IdentityError::BadLength(token.len()));
        }
        let mut nid = [0u8; 16];
        nid.copy_from_slice(&token[..16]);
        let lcv = u64::from_be_bytes(token[16..24].try_into().expect("8-byte slice"));
        let nst = u64::from_be_bytes(token[24..].try_into().expect("8-byte slice"));
        Ok(Self { nid: NodeId(nid), lcv, nst: NamespaceTag(nst) })
    }
}

impl Ord for CompositeId {
    fn cmp(&self, other: &Self) -> Ordering {
        self.nid
            .cmp(&other.nid)
            .then(self.lcv.cmp(&other.lcv))
            .then(self.nst.cmp(&other.nst))
    }
}

impl PartialOrd for CompositeId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for CompositeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.nid, self.lcv, self.nst.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn node_ids_are_seed_deterministic_and_distinct() {
        let mut a = ChaCha8Rng::seed_from_u64(42);
        let mut b = ChaCha8Rng::seed_from_u64(42);
        let first = NodeId::generate(&mut a);
        assert_eq!(first, NodeId::generate(&mut b));
        assert_ne!(first, NodeId::generate(&mut a));
    }

    #[test]
    fn ten_thousand_node_ids_pairwise_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut ids: Vec<NodeId> = (0..10_000).map(|_| NodeId::generate(&mut rng)).collect();
        ids.sort();
        assert!(ids.windows(2).all(|w| w[0] != w[1]));
    }

    #[test]
    fn genesis_layout() {
        let id = CompositeId::new(NodeId::from_bytes([0; 16]), 1, NamespaceTag::DEFAULT);
        let mut expected = [0u8; 32];
        expected[23] = 1;
        assert_eq!(id.encode(), expected);
    }

    #[test]
    fn big_endian_lcv_sorts_numerically() {
        let nid = NodeId::from_bytes([7; 16]);
        let a = CompositeId::new(nid, 255, NamespaceTag::DEFAULT).encode();
        let b = CompositeId::new(nid, 256, NamespaceTag::DEFAULT).encode();
        assert!(b > a);
    }

    #[test]
    fn decode_rejects_short_token() {
        assert!(matches!(CompositeId::decode(&[0u8; 31]), Err(IdentityError::BadLength(31))));
        assert!(matches!(CompositeId::decode(&[0u8; 33]), Err(IdentityError::BadLength(33))));
    }

    #[test]
    fn round_trip_random_ids() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100_000 {
            let id = CompositeId::new(
                NodeId::generate(&mut rng),
                rng.next_u64(),
                NamespaceTag(rng.next_u64()),
            );
            assert_eq!(CompositeId::decode(&id.encode()).unwrap(), id);
        }
    }

    proptest! {
        #[test]
        fn any_token_decodes_and_reencodes(token in proptest::collection::vec(any::<u8>(), 32)) {
            let id = CompositeId::decode(&token).unwrap();
            prop_assert_eq!(id.encode().to_vec(), token);
        }

        #[test]
        fn byte_order_matches_lcv_order_within_nid(nid in any::<[u8; 16]>(), a in any::<u64>(), b in any::<u64>(), s in any::<u64>(), t in any::<u64>()) {
            let nid = NodeId::from_bytes(nid);
            let x = CompositeId::new(nid, a, NamespaceTag(s));
            let y = CompositeId::new(nid, b, NamespaceTag(t));
            if a != b {
                prop_assert_eq!(x.encode().cmp(&y.encode()), a.cmp(&b));
                prop_assert_eq!(x.cmp(&y), a.cmp(&b));
            }
        }
    }
}
