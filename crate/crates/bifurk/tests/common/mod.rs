//! Shared helpers for the integration suites: a brute-force enumeration
//! oracle for generation second moments and random-tree builders.

use bifurk::kernel::FiniteKernel;
use bifurk::rng::Stream;
use bifurk::Lineage;

/// E[(mean of f over generation q)^2] by full enumeration: every state
/// assignment of the subtree of depth q, weighted by the product law.
/// Exponential in the tree size; only sane for q <= 3 and small state
/// spaces. Deliberately independent of the operator-algebra engine.
pub fn enumerated_gen_second_moment(
    kernel: &FiniteKernel,
    nu: &[f64],
    f: &[f64],
    q: u32,
) -> f64 {
    let k = kernel.n_states();
    let n_nodes = (1usize << (q + 1)) - 1;
    let n_mothers = (1usize << q) - 1;
    let gen_start = (1usize << q) - 1; // 0-based offset of generation q
    let gen_len = 1usize << q;

    let mut assignment = vec![0usize; n_nodes];
    let mut total = 0.0;
    loop {
        let mut prob = nu[assignment[0]];
        if prob != 0.0 {
            for mother in 0..n_mothers {
                prob *= kernel.pair_probability(
                    assignment[mother],
                    assignment[2 * mother + 1],
                    assignment[2 * mother + 2],
                );
                if prob == 0.0 {
                    break;
                }
            }
        }
        if prob != 0.0 {
            let mut sum = 0.0;
            for node in gen_start..gen_start + gen_len {
                sum += f[assignment[node]];
            }
            let mean = sum / gen_len as f64;
            total += prob * mean * mean;
        }
        // odometer increment over base-k digits
        let mut pos = 0;
        loop {
            if pos == n_nodes {
                return total;
            }
            assignment[pos] += 1;
            if assignment[pos] < k {
                break;
            }
            assignment[pos] = 0;
            pos += 1;
        }
    }
}

/// Random row-stochastic pair table on `k` states.
pub fn random_finite_kernel(k: usize, seed: u64) -> FiniteKernel {
    let mut rng = Stream::new(seed);
    let rows = (0..k)
        .map(|_| {
            let raw: Vec<f64> = (0..k * k).map(|_| rng.next_f64() + 0.01).collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / sum).collect()
        })
        .collect();
    FiniteKernel::from_table(rows).expect("normalized rows are stochastic")
}

/// Random probability vector on `k` states.
pub fn random_distribution(k: usize, rng: &mut Stream) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.next_f64() + 0.01).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Complete random tree of depth `r` with values uniform in [-5, 5].
pub fn random_complete_tree(r: u32, rng: &mut Stream) -> Lineage {
    let size = (1u64 << (r + 1)) - 1;
    (1..=size).map(|n| (n, 10.0 * rng.next_f64() - 5.0)).collect()
}
