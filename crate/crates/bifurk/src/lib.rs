//! Bifurcating Markov chains on the regular binary tree: simulation,
//! empirical averages, BAR(1) estimation, Wald-type asymmetry tests, and
//! a Monte Carlo harness that certifies the limit behavior the inference
//! relies on.
//!
//! Nodes of the tree are positive integers (root 1, daughters `2n` and
//! `2n + 1`), so a lineage is just a map from labels to values; see
//! [`tree`] for the arithmetic, [`kernel`] and [`bar`] for simulation,
//! [`empirics`] and [`inference`] for estimation, [`hypotest`] for the
//! tests, and [`experiments`] for the harness driven by plan files.

pub mod bar;
pub mod empirics;
pub mod experiments;
pub mod hypotest;
pub mod inference;
pub mod io;
pub mod kernel;
pub mod rng;
pub mod stats;
pub mod tree;

pub use bar::{BarParams, RootDist, StationaryMoments};
pub use empirics::{AverageMode, Lineage};
pub use inference::FitResult;
pub use kernel::{FiniteKernel, Kernel, LineageSample};
pub use tree::{GenerationPermutation, NodeId};
