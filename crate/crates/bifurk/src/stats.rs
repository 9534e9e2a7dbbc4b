//! Kolmogorov-Smirnov goodness-of-fit helpers used by the Monte Carlo
//! harness and the test suites.

use crate::hypotest::normal_survival;

/// One-sample KS statistic of `sample` against the continuous CDF `cdf`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN sample"));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i as f64 + 1.0) / n - f);
    }
    d
}

/// Two-sample KS statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|u, v| u.partial_cmp(v).expect("non-NaN sample"));
    ys.sort_by(|u, v| u.partial_cmp(v).expect("non-NaN sample"));
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let t = xs[i].min(ys[j]);
        while i < n && xs[i] <= t {
            i += 1;
        }
        while j < m && ys[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d
}

/// Survival function of the asymptotic Kolmogorov distribution,
/// `2 sum_{k>=1} (-1)^(k-1) exp(-2 k^2 x^2)`, truncated once terms drop
/// below 1e-10.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.05 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=1000u32 {
        let term = (-2.0 * f64::from(k * k) * x * x).exp();
        sum += sign * term;
        if term < 1e-10 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Asymptotic p-value of a one-sample KS statistic `d` at sample size `n`.
pub fn ks_pvalue(n: usize, d: f64) -> f64 {
    kolmogorov_survival((n as f64).sqrt() * d)
}

/// Asymptotic p-value of a two-sample KS statistic.
pub fn ks_two_sample_pvalue(n: usize, m: usize, d: f64) -> f64 {
    let effective = (n * m) as f64 / (n + m) as f64;
    kolmogorov_survival(effective.sqrt() * d)
}

/// Standard normal CDF, for KS checks against N(0, 1).
pub fn std_normal_cdf(x: f64) -> f64 {
    1.0 - normal_survival(x)
}

/// Uniform[0, 1] CDF, for KS checks of p-values.
pub fn uniform_cdf(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn ks_statistic_of_exact_grid_is_small() {
        // midpoints of n equal slices have D = 1/(2n)
        let n = 100;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_statistic(&xs, uniform_cdf);
        assert!((d - 0.005).abs() < 1e-12, "d = {d}");
    }

    #[test]
    fn ks_two_sample_identical_is_zero() {
        let xs = vec![1.0, 2.0, 3.0, 4.0];
        let ys = vec![4.0, 3.0, 2.0, 1.0];
        assert_eq!(ks_two_sample(&xs, &ys), 0.0);
    }

    #[test]
    fn ks_two_sample_known_value() {
        let xs = vec![1.0, 1.0, 4.0, 4.0];
        let ys = vec![1.0, 1.0, 1.0, 4.0];
        assert!((ks_two_sample(&xs, &ys) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn kolmogorov_survival_known_points() {
        // K(1.3581) is the classical 5% critical point
        let p = kolmogorov_survival(1.3581);
        assert!((p - 0.05).abs() < 5e-4, "p = {p}");
        let p = kolmogorov_survival(1.6276);
        assert!((p - 0.01).abs() < 2e-4, "p = {p}");
        assert_eq!(kolmogorov_survival(0.0), 1.0);
    }

    #[test]
    fn uniform_sample_passes_ks() {
        let mut rng = Stream::new(6021);
        let xs: Vec<f64> = (0..2000).map(|_| rng.next_f64()).collect();
        let p = ks_pvalue(xs.len(), ks_statistic(&xs, uniform_cdf));
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn gaussian_sample_passes_ks() {
        let mut rng = Stream::new(77);
        let xs: Vec<f64> = (0..2000).map(|_| rng.next_gaussian()).collect();
        let p = ks_pvalue(xs.len(), ks_statistic(&xs, std_normal_cdf));
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn shifted_sample_fails_ks() {
        let mut rng = Stream::new(88);
        let xs: Vec<f64> = (0..2000).map(|_| rng.next_gaussian() + 0.5).collect();
        let p = ks_pvalue(xs.len(), ks_statistic(&xs, std_normal_cdf));
        assert!(p < 1e-6, "p = {p}");
    }
}
