//! Transition kernels on the binary tree: simulation of tree-indexed
//! Markov chains, the induced single-lineage chain, and exact moment
//! algebra for finite state spaces.

use crate::rng::Stream;
use crate::tree;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("simulation depth {0} overflows 64-bit node labels")]
    Overflow(u32),
    #[error("kernel row {row} sums to {sum}, not 1")]
    NotStochastic { row: usize, sum: f64 },
    #[error("kernel table has a negative entry at row {0}")]
    NegativeEntry(usize),
    #[error("kernel table row {row} has {got} entries, expected {expected}")]
    BadRowLength {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("distribution does not sum to 1 (sum = {0})")]
    InvalidDistribution(f64),
    #[error("vector length {got} does not match state count {expected}")]
    DimensionMismatch { got: usize, expected: usize },
}

/// Joint law of a daughter pair given the mother's state.
///
/// Implementors only need `sample_pair`; the induced single-lineage step
/// and the per-branch marginal samplers are derived from it.
pub trait Kernel {
    type State: Clone;

    /// Draw the daughter pair `(state of 2n, state of 2n+1)`.
    fn sample_pair(&self, x: &Self::State, rng: &mut Stream) -> (Self::State, Self::State);

    /// One step of the induced chain: draw a pair, keep a fair-coin daughter.
    /// The marginal law is the average of the two branch marginals.
    fn induced_step(&self, x: &Self::State, rng: &mut Stream) -> Self::State {
        let (first, second) = self.sample_pair(x, rng);
        if rng.next_coin() {
            second
        } else {
            first
        }
    }

    /// Marginal sampler of the branch-`0` or branch-`1` daughter.
    fn sample_daughter(&self, x: &Self::State, branch: usize, rng: &mut Stream) -> Self::State {
        let (first, second) = self.sample_pair(x, rng);
        if branch == 0 {
            first
        } else {
            second
        }
    }
}

/// A completely observed subtree of states, indexed by node label.
#[derive(Clone, Debug, PartialEq)]
pub struct LineageSample<S> {
    depth: u32,
    values: Vec<S>,
}

impl<S> LineageSample<S> {
    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value at node label `n` (1-based); panics when out of range.
    pub fn get(&self, n: u64) -> &S {
        &self.values[(n - 1) as usize]
    }

    /// `(label, value)` pairs in ascending label order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, &S)> {
        self.values.iter().enumerate().map(|(i, v)| (i as u64 + 1, v))
    }

    pub fn map<T>(&self, f: impl Fn(&S) -> T) -> LineageSample<T> {
        LineageSample {
            depth: self.depth,
            values: self.values.iter().map(f).collect(),
        }
    }
}

/// Simulate a tree-indexed chain down to `depth` generations inclusive.
///
/// The root is drawn from `root`, and each mother `n` draws her daughter
/// pair from a stream derived as `(seed, n)`, so the result is a pure
/// function of `(kernel, root, depth, seed)` no matter how mothers are
/// scheduled.
pub fn simulate<K: Kernel>(
    kernel: &K,
    root: impl FnOnce(&mut Stream) -> K::State,
    depth: u32,
    seed: u64,
) -> Result<LineageSample<K::State>, KernelError> {
    if depth >= 63 {
        return Err(KernelError::Overflow(depth));
    }
    let total = tree::subtree_size(depth).expect("depth < 63") as usize;
    let base = Stream::new(seed);
    let mut values: Vec<K::State> = Vec::with_capacity(total);
    values.push(root(&mut base.derive(0)));
    for q in 0..depth {
        let start = 1u64 << q;
        for n in start..2 * start {
            let mut stream = base.derive(n);
            let (d0, d1) = kernel.sample_pair(&values[(n - 1) as usize], &mut stream);
            values.push(d0);
            values.push(d1);
        }
    }
    Ok(LineageSample { depth, values })
}

/// A kernel on a finite state space `{0, ..., k-1}`, stored as one
/// probability row per mother state over the `k * k` daughter pairs.
#[derive(Clone, Debug)]
pub struct FiniteKernel {
    n_states: usize,
    /// `table[(x, y * k + z)]` = P(x, (y, z)).
    table: DMatrix<f64>,
}

const ROW_SUM_TOL: f64 = 1e-12;

impl FiniteKernel {
    pub fn from_table(rows: Vec<Vec<f64>>) -> Result<Self, KernelError> {
        let n_states = rows.len();
        let expected = n_states * n_states;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != expected {
                return Err(KernelError::BadRowLength {
                    row: i,
                    got: row.len(),
                    expected,
                });
            }
            if row.iter().any(|&p| p < 0.0) {
                return Err(KernelError::NegativeEntry(i));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(KernelError::NotStochastic { row: i, sum });
            }
        }
        let table = DMatrix::from_fn(n_states, expected, |x, pair| rows[x][pair]);
        Ok(FiniteKernel { n_states, table })
    }

    /// Kernel whose daughter pair is a deterministic function of the mother.
    pub fn from_deterministic(
        n_states: usize,
        pair_of: impl Fn(usize) -> (usize, usize),
    ) -> Self {
        let mut rows = vec![vec![0.0; n_states * n_states]; n_states];
        for (x, row) in rows.iter_mut().enumerate() {
            let (y, z) = pair_of(x);
            assert!(y < n_states && z < n_states);
            row[y * n_states + z] = 1.0;
        }
        Self::from_table(rows).expect("deterministic table is stochastic")
    }

    /// Two-state kernel where both daughters deterministically take the
    /// opposite of the mother's state. Its induced chain has period two,
    /// so subtree averages oscillate forever.
    pub fn two_state_flip() -> Self {
        Self::from_deterministic(2, |x| (1 - x, 1 - x))
    }

    /// Kernel whose daughters are the fixed pair `(y, z)` whatever the
    /// mother's state.
    pub fn constant_pair(n_states: usize, y: usize, z: usize) -> Self {
        Self::from_deterministic(n_states, |_| (y, z))
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    /// P(x, (y, z)).
    pub fn pair_probability(&self, x: usize, y: usize, z: usize) -> f64 {
        self.table[(x, y * self.n_states + z)]
    }

    /// Branch marginal as a row-stochastic matrix.
    pub fn marginal(&self, branch: usize) -> DMatrix<f64> {
        let k = self.n_states;
        DMatrix::from_fn(k, k, |x, target| {
            (0..k)
                .map(|other| {
                    if branch == 0 {
                        self.table[(x, target * k + other)]
                    } else {
                        self.table[(x, other * k + target)]
                    }
                })
                .sum()
        })
    }

    /// Induced single-lineage transition matrix, the average of the two
    /// branch marginals.
    pub fn induced_matrix(&self) -> DMatrix<f64> {
        (self.marginal(0) + self.marginal(1)) * 0.5
    }

    /// Apply `k` steps of the induced operator to a function vector.
    pub fn iterate_induced(&self, f: &[f64], steps: u32) -> Result<Vec<f64>, KernelError> {
        if f.len() != self.n_states {
            return Err(KernelError::DimensionMismatch {
                got: f.len(),
                expected: self.n_states,
            });
        }
        let q = self.induced_matrix();
        let mut v = DVector::from_column_slice(f);
        for _ in 0..steps {
            v = &q * v;
        }
        Ok(v.iter().copied().collect())
    }

    /// Exact second moment of the generation-`q` empirical average of `f`.
    ///
    /// Evaluates, by matrix-vector algebra,
    /// `2^-q nu Q^q f^2  +  sum_{p<q} 2^-(p+1) nu Q^p P(Q^(q-p-1)f (x) Q^(q-p-1)f)`,
    /// the decomposition of `E[(mean of f over generation q)^2]` over the
    /// generation of the most recent common ancestor of two uniform nodes.
    pub fn exact_gen_second_moment(
        &self,
        nu: &[f64],
        f: &[f64],
        q: u32,
    ) -> Result<f64, KernelError> {
        let k = self.n_states;
        if nu.len() != k {
            return Err(KernelError::DimensionMismatch {
                got: nu.len(),
                expected: k,
            });
        }
        if f.len() != k {
            return Err(KernelError::DimensionMismatch {
                got: f.len(),
                expected: k,
            });
        }
        let nu_sum: f64 = nu.iter().sum();
        if (nu_sum - 1.0).abs() > ROW_SUM_TOL || nu.iter().any(|&p| p < 0.0) {
            return Err(KernelError::InvalidDistribution(nu_sum));
        }

        let q_mat = self.induced_matrix();
        // Q^j f for j = 0..q, ascending.
        let mut iterates: Vec<DVector<f64>> = Vec::with_capacity(q as usize + 1);
        iterates.push(DVector::from_column_slice(f));
        for j in 0..q {
            let next = &q_mat * &iterates[j as usize];
            iterates.push(next);
        }

        let f_squared = DVector::from_iterator(k, f.iter().map(|v| v * v));
        // nu Q^p as a column vector, updated in place while p ascends.
        let mut nu_qp = DVector::from_column_slice(nu);
        let q_t = q_mat.transpose();
        let mut total = 0.0;
        for p in 0..q {
            let g = &iterates[(q - 1 - p) as usize];
            // h(x) = sum_{y,z} P(x, (y,z)) g(y) g(z)
            let g_outer = DVector::from_fn(k * k, |pair, _| g[pair / k] * g[pair % k]);
            let h = &self.table * g_outer;
            total += 0.5f64.powi(p as i32 + 1) * nu_qp.dot(&h);
            nu_qp = &q_t * nu_qp;
        }
        // p = q term: the two uniform indices coincide.
        total += 0.5f64.powi(q as i32) * nu_qp.dot(&f_squared);
        Ok(total)
    }

    /// Stationary law of the induced chain when its iterates converge
    /// uniformly over starting states, `None` otherwise (periodic or
    /// otherwise non-ergodic within `max_iter` steps).
    pub fn ergodic_limit(&self, tol: f64, max_iter: u32) -> Option<Vec<f64>> {
        let q = self.induced_matrix();
        let mut m = q.clone();
        for _ in 0..max_iter {
            let next = &m * &q;
            let row_spread = max_row_spread(&next);
            let step_change = (&next - &m).abs().max();
            m = next;
            if row_spread < tol && step_change < tol {
                let k = self.n_states;
                let mu: Vec<f64> = (0..k)
                    .map(|j| m.column(j).iter().sum::<f64>() / k as f64)
                    .collect();
                return Some(mu);
            }
        }
        None
    }
}

fn max_row_spread(m: &DMatrix<f64>) -> f64 {
    let mut spread: f64 = 0.0;
    for j in 0..m.ncols() {
        let col = m.column(j);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in col.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        spread = spread.max(hi - lo);
    }
    spread
}

impl Kernel for FiniteKernel {
    type State = usize;

    fn sample_pair(&self, x: &usize, rng: &mut Stream) -> (usize, usize) {
        let u = rng.next_f64();
        let row = self.table.row(*x);
        let mut acc = 0.0;
        let mut chosen = row.len() - 1;
        for (pair, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                chosen = pair;
                break;
            }
        }
        (chosen / self.n_states, chosen % self.n_states)
    }
}
