use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::block::Payload;

/// SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

pub fn fingerprint_block(content: &[u8]) -> Digest {
    Digest(Sha256::digest(content).into())
}

/// `SHA-256(left ∥ right)`.
pub fn hash_pair(left: &Digest, right: &Digest) -> Digest {
    let mut h = Sha256::new();
    h.update(left.0);
    h.update(right.0);
    Digest(h.finalize().into())
}

/// Root of a tree with no leaves, and the padding leaf for uneven diffs.
pub fn empty_digest() -> Digest {
    fingerprint_block(&[])
}

/// Counts hashing work done by the baseline framework.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct HashMeter {
    /// SHA-256 invocations: one per fingerprinted block, one per internal Merkle node.
    pub hash_ops: u64,
    /// Content bytes fed through fingerprinting.
    pub hashed_bytes: u64,
    /// Block contents read in order to fingerprint them.
    pub content_reads: u64,
}

impl HashMeter {
    pub fn fingerprint(&mut self, payload: &Payload) -> Digest {
        self.hash_ops += 1;
        self.hashed_bytes += payload.len();
        self.content_reads += 1;
        payload.fingerprint()
    }

    pub fn merge(&mut self, other: &HashMeter) {
        self.hash_ops += other.hash_ops;
        self.hashed_bytes += other.hashed_bytes;
        self.content_reads += other.content_reads;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_vectors() {
        assert_eq!(
            fingerprint_block(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            fingerprint_block(b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn pair_is_hash_of_concatenation() {
        let a = fingerprint_block(b"a");
        let b = fingerprint_block(b"b");
        let mut cat = a.0.to_vec();
        cat.extend_from_slice(&b.0);
        assert_eq!(hash_pair(&a, &b), fingerprint_block(&cat));
    }

    #[test]
    fn meter_counts_bytes() {
        let mut m = HashMeter::default();
        m.fingerprint(&Payload::virtual_block(1000, 1));
        m.fingerprint(&Payload::concrete(vec![1u8; 10]));
        assert_eq!((m.hash_ops, m.hashed_bytes, m.content_reads), (2, 1010, 2));
    }
}
