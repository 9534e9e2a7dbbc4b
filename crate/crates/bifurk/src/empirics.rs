//! Empirical averages over an observed lineage.
//!
//! Three index sets are supported: a single generation, a full subtree,
//! and the first `n` nodes of a generation-preserving random permutation.
//! Averages are over observed nodes only and always report how many nodes
//! entered the mean, so callers on incomplete trees can weight correctly.

use crate::kernel::LineageSample;
use crate::tree::{self, GenerationPermutation, NodeId};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EmpiricsError {
    #[error("no observed node in the selected index set")]
    EmptySelection,
    #[error("subtree of depth {0} is not completely observed")]
    IncompleteTree(u32),
    #[error("permutation covers generations 0..={covered}, prefix needs {needed}")]
    PermutationTooShallow { covered: u32, needed: u32 },
    #[error(transparent)]
    Tree(#[from] tree::TreeError),
}

/// A possibly incomplete tree of observed real values, keyed by node label.
///
/// Iteration over the underlying map is in ascending label order, which
/// fixes the summation order of every scan in this crate.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Lineage {
    values: BTreeMap<u64, f64>,
}

impl Lineage {
    pub fn new() -> Self {
        Lineage::default()
    }

    pub fn from_sample(sample: &LineageSample<f64>) -> Self {
        Lineage {
            values: sample.iter().map(|(n, &v)| (n, v)).collect(),
        }
    }

    /// Insert an observation, returning the previous value if any.
    pub fn insert(&mut self, node: u64, value: f64) -> Option<f64> {
        self.values.insert(node, value)
    }

    pub fn get(&self, node: u64) -> Option<f64> {
        self.values.get(&node).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_index(&self) -> Option<u64> {
        self.values.keys().next_back().copied()
    }

    /// `(label, value)` pairs in ascending label order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.values.iter().map(|(&n, &v)| (n, v))
    }

    /// Observed nodes of generation `q`, ascending. Generations beyond the
    /// label cap are empty.
    pub fn generation(&self, q: u32) -> impl Iterator<Item = (u64, f64)> + '_ {
        let range = if q < 63 {
            (1u64 << q)..(1u64 << (q + 1))
        } else {
            #[allow(clippy::reversed_empty_ranges)]
            {
                1..0
            }
        };
        self.values.range(range).map(|(&n, &v)| (n, v))
    }

    /// Whether every node of the subtree of depth `r` is observed.
    pub fn is_complete_to_depth(&self, r: u32) -> bool {
        match tree::subtree_size(r) {
            Ok(size) => self.values.range(1..=size).count() as u64 == size,
            Err(_) => false,
        }
    }
}

impl FromIterator<(u64, f64)> for Lineage {
    fn from_iter<T: IntoIterator<Item = (u64, f64)>>(iter: T) -> Self {
        Lineage {
            values: iter.into_iter().collect(),
        }
    }
}

/// Index set an empirical mean ranges over.
#[derive(Clone, Copy, Debug)]
pub enum AverageMode<'a> {
    /// All of generation `q`.
    Generation(u32),
    /// All of the subtree of depth `r`.
    Subtree(u32),
    /// The images of `1..=n` under a generation-preserving permutation.
    PermutedPrefix {
        n: u64,
        permutation: &'a GenerationPermutation,
    },
}

fn check_prefix<'a>(
    n: u64,
    permutation: &'a GenerationPermutation,
) -> Result<impl Iterator<Item = u64> + 'a, EmpiricsError> {
    let needed = NodeId::new(n)?.generation();
    let covered = permutation.max_generation();
    if needed > covered {
        return Err(EmpiricsError::PermutationTooShallow { covered, needed });
    }
    Ok((1..=n).map(move |i| permutation.apply(NodeId::new(i).expect("i >= 1")).get()))
}

/// Mean of `f` over the observed nodes of the index set, with the count
/// of nodes used.
pub fn node_average(
    lineage: &Lineage,
    f: impl Fn(f64) -> f64,
    mode: AverageMode,
) -> Result<(f64, u64), EmpiricsError> {
    let mut sum = 0.0;
    let mut count = 0u64;
    match mode {
        AverageMode::Generation(q) => {
            for (_, v) in lineage.generation(q) {
                sum += f(v);
                count += 1;
            }
        }
        AverageMode::Subtree(r) => {
            let size = tree::subtree_size(r)?;
            for (_, &v) in lineage.values.range(1..=size) {
                sum += f(v);
                count += 1;
            }
        }
        AverageMode::PermutedPrefix { n, permutation } => {
            for node in check_prefix(n, permutation)? {
                if let Some(v) = lineage.get(node) {
                    sum += f(v);
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(EmpiricsError::EmptySelection);
    }
    Ok((sum / count as f64, count))
}

/// Mean of `f(mother, daughter 2i, daughter 2i+1)` over the index-set
/// nodes whose full triangle is observed, with the triangle count.
pub fn triangle_average(
    lineage: &Lineage,
    f: impl Fn(f64, f64, f64) -> f64,
    mode: AverageMode,
) -> Result<(f64, u64), EmpiricsError> {
    let mut sum = 0.0;
    let mut count = 0u64;
    let mut visit = |i: u64, x: f64| {
        if let (Some(y), Some(z)) = (lineage.get(2 * i), lineage.get(2 * i + 1)) {
            sum += f(x, y, z);
            count += 1;
        }
    };
    match mode {
        AverageMode::Generation(q) => {
            for (i, x) in lineage.generation(q) {
                visit(i, x);
            }
        }
        AverageMode::Subtree(r) => {
            let size = tree::subtree_size(r)?;
            for (&i, &x) in lineage.values.range(1..=size) {
                visit(i, x);
            }
        }
        AverageMode::PermutedPrefix { n, permutation } => {
            for i in check_prefix(n, permutation)? {
                if let Some(x) = lineage.get(i) {
                    visit(i, x);
                }
            }
        }
    }
    if count == 0 {
        return Err(EmpiricsError::EmptySelection);
    }
    Ok((sum / count as f64, count))
}

/// One generation's contribution to a subtree average.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenerationTerm {
    pub generation: u32,
    /// `|G_q| / |T_r|`.
    pub weight: f64,
    pub average: f64,
}

/// Decompose the subtree average into its per-generation weighted terms;
/// the weights sum to one and the weighted sum reproduces the subtree
/// average.
pub fn decompose_subtree_average(
    lineage: &Lineage,
    f: impl Fn(f64) -> f64,
    r: u32,
) -> Result<Vec<GenerationTerm>, EmpiricsError> {
    if !lineage.is_complete_to_depth(r) {
        return Err(EmpiricsError::IncompleteTree(r));
    }
    let total = tree::subtree_size(r)? as f64;
    (0..=r)
        .map(|q| {
            let (average, count) = node_average(lineage, &f, AverageMode::Generation(q))?;
            debug_assert_eq!(count, 1u64 << q);
            Ok(GenerationTerm {
                generation: q,
                weight: count as f64 / total,
                average,
            })
        })
        .collect()
}
