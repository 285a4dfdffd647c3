//! Content-hash baseline.
//!
//! SHA-256 fingerprints, a binary Merkle tree, a digest index fed by an
//! asynchronous hashing pipeline, and the three ways that index stops being
//! trustworthy: it lags ingest, the pipeline crashes mid-stream, or the index
//! store is lost outright. Each forces rehashing before a delta can be served.

mod digest;
mod hash_index;
mod merkle;

use thiserror::Error;

pub use digest::{empty_digest, fingerprint_block, hash_pair, Digest, HashMeter};
pub use hash_index::{
    crash_interrupt, hash_delta, install_rebuilt, pipeline_drain, pipeline_tick, rebuild_index,
    HashDelta, HashIndex, PipelineState,
};
pub use merkle::{merkle_diff, MerkleDiff, MerkleTree};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HashError {
    #[error("{0} hash index is stale, interrupted or lost; rehash required")]
    InconsistentIndex(&'static str),
}
