//! Block payloads.
//!
//! Concrete payloads carry real bytes. Virtual payloads carry only a
//! `(len, seed)` descriptor so petabyte-scale inventories fit in memory; two
//! virtual payloads are content-equal iff their descriptors are equal.

use std::fmt;
use std::sync::Arc;

use crate::checksum::crc32c;
use crate::hashline::{fingerprint_block, Digest};
use crate::identity::CompositeId;
use crate::index::UserKey;

/// Physical position of a block in a node's block store.
pub type Locator = u64;

#[derive(Clone, PartialEq, Eq)]
pub enum Payload {
    Concrete(Arc<[u8]>),
    Virtual { len: u64, seed: u64 },
}

impl Payload {
    pub fn concrete(bytes: impl Into<Arc<[u8]>>) -> Self {
        Payload::Concrete(bytes.into())
    }

    pub fn virtual_block(len: u64, seed: u64) -> Self {
        Payload::Virtual { len, seed }
    }

    pub fn len(&self) -> u64 {
        match self {
            Payload::Concrete(b) => b.len() as u64,
            Payload::Virtual { len, .. } => *len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            Payload::Concrete(b) => Some(b),
            Payload::Virtual { .. } => None,
        }
    }

    fn descriptor(len: u64, seed: u64) -> [u8; 16] {
        let mut d = [0u8; 16];
        d[..8].copy_from_slice(&len.to_be_bytes());
        d[8..].copy_from_slice(&seed.to_be_bytes());
        d
    }

    /// CRC-32C of the content, or of the 16-byte descriptor for virtual blocks.
    pub fn crc(&self) -> u32 {
        match self {
            Payload::Concrete(b) => crc32c(b),
            Payload::Virtual { len, seed } => crc32c(&Self::descriptor(*len, *seed)),
        }
    }

    /// SHA-256 content fingerprint. Pure; callers meter it.
    pub fn fingerprint(&self) -> Digest {
        match self {
            Payload::Concrete(b) => fingerprint_block(b),
            Payload::Virtual { len, seed } => {
                let mut buf = [0u8; 24];
                buf[..8].copy_from_slice(b"mdr-vblk");
                buf[8..].copy_from_slice(&Self::descriptor(*len, *seed));
                fingerprint_block(&buf)
            }
        }
    }
}

impl fmt::Debug for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payload::Concrete(b) => write!(f, "Concrete({} bytes)", b.len()),
            Payload::Virtual { len, seed } => write!(f, "Virtual(len={len}, seed={seed:#x})"),
        }
    }
}

/// A stored block. The id binds to content for life; `crc` is taken at ingest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub id: CompositeId,
    pub user_key: Option<UserKey>,
    pub payload: Payload,
    pub crc: u32,
}

impl Block {
    pub fn new(id: CompositeId, user_key: Option<UserKey>, payload: Payload) -> Self {
        let crc = payload.crc();
        Self { id, user_key, payload, crc }
    }

    pub fn byte_len(&self) -> u64 {
        self.payload.len()
    }

    /// Returns the CRC actually found when it differs from the stored one.
    pub fn verify(&self) -> Result<(), u32> {
        let found = self.payload.crc();
        if found == self.crc {
            Ok(())
        } else {
            Err(found)
        }
    }
}
