use super::digest::{empty_digest, hash_pair, Digest, HashMeter};

/// Binary Merkle tree over leaf digests.
///
/// An odd node at the end of a level is paired with itself, so
/// `parent = H(last ∥ last)`. A tree with no leaves has root `SHA-256("")`;
/// a single leaf is its own root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerkleTree {
    /// `levels[0]` are the leaves, the last level holds the root.
    levels: Vec<Vec<Digest>>,
}

impl MerkleTree {
    pub fn build(leaves: Vec<Digest>, meter: &mut HashMeter) -> Self {
        let mut levels = vec![leaves];
        while levels.last().expect("at least one level").len() > 1 {
            let prev = levels.last().expect("at least one level");
            let next: Vec<Digest> = prev
                .chunks(2)
                .map(|pair| hash_pair(&pair[0], pair.get(1).unwrap_or(&pair[0])))
                .collect();
            meter.hash_ops += next.len() as u64;
            levels.push(next);
        }
        Self { levels }
    }

    pub fn root(&self) -> Digest {
        match self.levels.last() {
            Some(top) if !top.is_empty() => top[0],
            _ => empty_digest(),
        }
    }

    pub fn leaves(&self) -> &[Digest] {
        &self.levels[0]
    }

    pub fn leaf_count(&self) -> usize {
        self.levels[0].len()
    }

    pub fn internal_node_count(&self) -> usize {
        self.levels[1..].iter().map(Vec::len).sum()
    }

    pub fn node_count(&self) -> usize {
        self.leaf_count() + self.internal_node_count()
    }

    /// Edges from root to leaf.
    pub fn height(&self) -> usize {
        self.levels.len() - 1
    }
}

/// Leaf positions that differ, with the number of node pairs compared.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MerkleDiff {
    pub positions: Vec<usize>,
    pub visits: u64,
}

/// Top-down comparison. The shorter tree is padded with empty-leaf sentinels.
pub fn merkle_diff(a: &MerkleTree, b: &MerkleTree) -> MerkleDiff {
    if a.leaf_count() != b.leaf_count() {
        let width = a.leaf_count().max(b.leaf_count());
        let pad = |t: &MerkleTree| {
            let mut leaves = t.leaves().to_vec();
            leaves.resize(width, empty_digest());
            MerkleTree::build(leaves, &mut HashMeter::default())
        };
        return merkle_diff(&pad(a), &pad(b));
    }
    let mut out = MerkleDiff { positions: Vec::new(), visits: 0 };
    if a.leaf_count() == 0 {
        return out;
    }
    let top = a.height();
    descend(a, b, top, 0, &mut out);
    out
}

fn descend(a: &MerkleTree, b: &MerkleTree, level: usize, idx: usize, out: &mut MerkleDiff) {
    out.visits += 1;
    if a.levels[level][idx] == b.levels[level][idx] {
        return;
    }
    if level == 0 {
        out.positions.push(idx);
        return;
    }
    let below = a.levels[level - 1].len();
    descend(a, b, level - 1, 2 * idx, out);
    if 2 * idx + 1 < below {
        descend(a, b, level - 1, 2 * idx + 1, out);
    }
}
