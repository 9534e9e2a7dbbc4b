//! Counter-based deterministic random streams.
//!
//! Every sampling routine in this crate takes an explicit [`Stream`]. A
//! stream is identified by a 64-bit id derived from a root seed and a chain
//! of labels, and advances a golden-ratio counter through a strong 64-bit
//! mixer. Deriving a child stream never mutates the parent, so concurrent
//! consumers (one stream per tree node, one per replication) produce the
//! same numbers regardless of scheduling.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// An independent pseudo-random sequence addressed by `(seed, labels...)`.
#[derive(Clone, Debug)]
pub struct Stream {
    id: u64,
    counter: u64,
}

impl Stream {
    /// Root stream for a user-supplied seed.
    pub fn new(seed: u64) -> Self {
        Stream {
            id: mix64(seed ^ 0xD134_2543_DE82_EF95),
            counter: 0,
        }
    }

    /// Derive an independent child stream identified by `label`.
    pub fn derive(&self, label: u64) -> Self {
        Stream {
            id: mix64(self.id ^ mix64(label.wrapping_add(GOLDEN))),
            counter: 0,
        }
    }

    /// Stream id, usable as a derived seed.
    pub fn id(&self) -> u64 {
        self.id
    }

    /// Next raw 64-bit word.
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(GOLDEN);
        mix64(self.id ^ self.counter)
    }

    /// Uniform draw in `[0, 1)` with 53-bit resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        (self.next_u64() >> 11) as f64 * SCALE
    }

    /// Uniform draw in `(0, 1]`; safe as a logarithm argument.
    #[inline]
    fn next_open01(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        ((self.next_u64() >> 11) + 1) as f64 * SCALE
    }

    /// Fair coin.
    #[inline]
    pub fn next_coin(&mut self) -> bool {
        self.next_u64() & 1 == 1
    }

    /// Unbiased uniform draw in `0..bound` (rejection sampling).
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        // Lemire's multiply-shift with rejection on the low word.
        let mut x = self.next_u64();
        let mut m = (x as u128) * (bound as u128);
        let mut low = m as u64;
        if low < bound {
            let threshold = bound.wrapping_neg() % bound;
            while low < threshold {
                x = self.next_u64();
                m = (x as u128) * (bound as u128);
                low = m as u64;
            }
        }
        (m >> 64) as u64
    }

    /// A pair of independent standard normals (Box-Muller).
    #[inline]
    pub fn next_gaussian_pair(&mut self) -> (f64, f64) {
        let u1 = self.next_open01();
        let u2 = self.next_f64();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        (radius * angle.cos(), radius * angle.sin())
    }

    /// A single standard normal (consumes a full Box-Muller pair).
    #[inline]
    pub fn next_gaussian(&mut self) -> f64 {
        self.next_gaussian_pair().0
    }
}

/// Deterministic seed for a labelled sub-task, e.g. replication `k` at
/// depth `r` uses `derive_seed(base, &[k, r])`.
pub fn derive_seed(base: u64, labels: &[u64]) -> u64 {
    let mut stream = Stream::new(base);
    for &label in labels {
        stream = stream.derive(label);
    }
    stream.id()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = Stream::new(42);
        let mut b = Stream::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn derive_is_independent_of_parent_state() {
        let mut parent = Stream::new(7);
        let child_before = parent.derive(3);
        parent.next_u64();
        let child_after = parent.derive(3);
        assert_eq!(child_before.id(), child_after.id());
    }

    #[test]
    fn distinct_labels_distinct_streams() {
        let root = Stream::new(1);
        let mut a = root.derive(10);
        let mut b = root.derive(11);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn uniform_mean_and_range() {
        let mut s = Stream::new(2024);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let u = s.next_f64();
            assert!((0.0..1.0).contains(&u));
            sum += u;
        }
        let mean = sum / n as f64;
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn next_below_is_unbiased_enough() {
        let mut s = Stream::new(5);
        let mut counts = [0u32; 3];
        for _ in 0..30_000 {
            counts[s.next_below(3) as usize] += 1;
        }
        for &c in &counts {
            assert!((c as f64 - 10_000.0).abs() < 400.0, "counts {counts:?}");
        }
    }

    #[test]
    fn gaussian_moments() {
        let mut s = Stream::new(99);
        let n = 200_000;
        let (mut sum, mut sum2) = (0.0, 0.0);
        for _ in 0..n {
            let (g0, g1) = s.next_gaussian_pair();
            sum += g0 + g1;
            sum2 += g0 * g0 + g1 * g1;
        }
        let m = sum / (2 * n) as f64;
        let v = sum2 / (2 * n) as f64;
        assert!(m.abs() < 0.01, "mean {m}");
        assert!((v - 1.0).abs() < 0.01, "var {v}");
    }
}
