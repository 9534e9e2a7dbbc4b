//! Integer arithmetic and combinatorics of the regular binary tree.
//!
//! Nodes are labelled by positive integers: the root is 1 and node `n` has
//! daughters `2n` (branch 0, the new pole) and `2n + 1` (branch 1, the old
//! pole). Generation `q` is the label range `2^q .. 2^(q+1)`.

use crate::rng::Stream;
use thiserror::Error;

/// Largest admissible node label. Labels are capped so that a daughter
/// label always fits in a `u64`.
pub const MAX_NODE: u64 = (1 << 63) - 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("node labels start at 1, got {0}")]
    InvalidLabel(u64),
    #[error("the root has no mother")]
    RootHasNoMother,
    #[error("tree arithmetic overflows 64-bit labels")]
    Overflow,
    #[error("permutation images are not a bijection of generation {0}")]
    NotABijection(u32),
}

/// A node of the regular binary tree, by positive-integer label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(u64);

impl NodeId {
    pub const ROOT: NodeId = NodeId(1);

    pub fn new(label: u64) -> Result<Self, TreeError> {
        if label == 0 || label > MAX_NODE {
            return Err(TreeError::InvalidLabel(label));
        }
        Ok(NodeId(label))
    }

    pub fn get(self) -> u64 {
        self.0
    }

    /// Generation of the node, `floor(log2 label)`.
    pub fn generation(self) -> u32 {
        63 - self.0.leading_zeros()
    }

    pub fn mother(self) -> Result<NodeId, TreeError> {
        if self.0 == 1 {
            return Err(TreeError::RootHasNoMother);
        }
        Ok(NodeId(self.0 / 2))
    }

    /// Daughter labels `(2n, 2n + 1)`.
    pub fn daughters(self) -> Result<(NodeId, NodeId), TreeError> {
        if self.0 > (MAX_NODE - 1) / 2 {
            return Err(TreeError::Overflow);
        }
        Ok((NodeId(2 * self.0), NodeId(2 * self.0 + 1)))
    }

    /// Branch bits from the root down to this node; bit 0 selects daughter
    /// `2m`, bit 1 selects `2m + 1`. Empty for the root.
    pub fn path_from_root(self) -> Vec<u8> {
        let q = self.generation();
        (0..q)
            .map(|k| ((self.0 >> (q - 1 - k)) & 1) as u8)
            .collect()
    }

    /// Replay a branch-bit path from the root.
    pub fn from_path(bits: &[u8]) -> Result<NodeId, TreeError> {
        let mut label: u64 = 1;
        for &bit in bits {
            if label > (MAX_NODE - 1) / 2 {
                return Err(TreeError::Overflow);
            }
            label = 2 * label + u64::from(bit & 1);
        }
        Ok(NodeId(label))
    }

    /// Most recent common ancestor of two nodes.
    pub fn mrca(self, other: NodeId) -> NodeId {
        let (mut a, mut b) = (self.0, other.0);
        while a.leading_zeros() < b.leading_zeros() {
            a >>= 1;
        }
        while b.leading_zeros() < a.leading_zeros() {
            b >>= 1;
        }
        while a != b {
            a >>= 1;
            b >>= 1;
        }
        NodeId(a)
    }
}

/// `|G_q| = 2^q`.
pub fn generation_size(q: u32) -> Result<u64, TreeError> {
    if q >= 63 {
        return Err(TreeError::Overflow);
    }
    Ok(1u64 << q)
}

/// `|T_r| = 2^(r+1) - 1`.
pub fn subtree_size(r: u32) -> Result<u64, TreeError> {
    if r >= 63 {
        return Err(TreeError::Overflow);
    }
    Ok((1u64 << (r + 1)) - 1)
}

/// Convenience pair `(|G_q|, |T_r|)`.
pub fn sizes(q: u32, r: u32) -> Result<(u64, u64), TreeError> {
    Ok((generation_size(q)?, subtree_size(r)?))
}

/// Independent uniform shuffles of each generation `0..=max_generation`.
///
/// The permutation leaves every generation invariant, which is the only
/// freedom a breadth-first exploration of the tree actually has.
#[derive(Clone, Debug)]
pub struct GenerationPermutation {
    /// `images[q][k]` is the image of node `2^q + k`.
    images: Vec<Vec<u64>>,
}

impl GenerationPermutation {
    /// Draw each generation's shuffle uniformly, deterministically in `seed`.
    pub fn sample(max_generation: u32, seed: u64) -> Result<Self, TreeError> {
        if max_generation >= 63 {
            return Err(TreeError::Overflow);
        }
        let base = Stream::new(seed);
        let mut images = Vec::with_capacity(max_generation as usize + 1);
        for q in 0..=max_generation {
            let start = 1u64 << q;
            let mut gen: Vec<u64> = (start..2 * start).collect();
            let mut stream = base.derive(u64::from(q));
            // Fisher-Yates, unbiased via rejection sampling.
            for i in (1..gen.len()).rev() {
                let j = stream.next_below(i as u64 + 1) as usize;
                gen.swap(i, j);
            }
            images.push(gen);
        }
        Ok(GenerationPermutation { images })
    }

    /// Identity permutation up to `max_generation`.
    pub fn identity(max_generation: u32) -> Result<Self, TreeError> {
        if max_generation >= 63 {
            return Err(TreeError::Overflow);
        }
        let images = (0..=max_generation)
            .map(|q| {
                let start = 1u64 << q;
                (start..2 * start).collect()
            })
            .collect();
        Ok(GenerationPermutation { images })
    }

    /// Build from explicit per-generation images; each `images[q]` must be a
    /// bijection of `{2^q, ..., 2^(q+1) - 1}`.
    pub fn from_images(images: Vec<Vec<u64>>) -> Result<Self, TreeError> {
        for (q, gen) in images.iter().enumerate() {
            let q = q as u32;
            let start = 1u64 << q;
            if gen.len() as u64 != start {
                return Err(TreeError::NotABijection(q));
            }
            let mut seen = vec![false; gen.len()];
            for &img in gen {
                if img < start || img >= 2 * start || seen[(img - start) as usize] {
                    return Err(TreeError::NotABijection(q));
                }
                seen[(img - start) as usize] = true;
            }
        }
        Ok(GenerationPermutation { images })
    }

    pub fn max_generation(&self) -> u32 {
        self.images.len() as u32 - 1
    }

    /// Image of a node. Panics if the node lies beyond `max_generation`.
    pub fn apply(&self, node: NodeId) -> NodeId {
        let q = node.generation() as usize;
        assert!(
            q < self.images.len(),
            "permutation only covers generations 0..={}",
            self.images.len() - 1
        );
        let offset = (node.get() - (1u64 << q)) as usize;
        NodeId(self.images[q][offset])
    }

    /// Inverse permutation.
    pub fn inverse(&self) -> GenerationPermutation {
        let images = self
            .images
            .iter()
            .enumerate()
            .map(|(q, gen)| {
                let start = 1u64 << q;
                let mut inv = vec![0u64; gen.len()];
                for (k, &img) in gen.iter().enumerate() {
                    inv[(img - start) as usize] = start + k as u64;
                }
                inv
            })
            .collect();
        GenerationPermutation { images }
    }
}
