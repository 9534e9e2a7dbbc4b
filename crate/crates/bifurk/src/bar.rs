//! The asymmetric bifurcating autoregressive model BAR(1).
//!
//! Each daughter's value is an affine function of the mother's plus
//! correlated Gaussian noise, with branch-specific coefficients:
//! daughter `2n` gets `alpha0 * x + beta0 + e0`, daughter `2n + 1` gets
//! `alpha1 * x + beta1 + e1`, where `(e0, e1)` is centered bivariate
//! normal with common variance `sigma2` and correlation `rho`.

use crate::kernel::{self, Kernel, KernelError, LineageSample};
use crate::rng::Stream;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BarError {
    #[error("autoregression coefficient alpha{branch} = {value} outside (-1, 1)")]
    AlphaOutOfRange { branch: usize, value: f64 },
    #[error("noise variance sigma2 = {0} must be positive and finite")]
    InvalidSigma2(f64),
    #[error("noise correlation rho = {0} outside (-1, 1)")]
    RhoOutOfRange(f64),
    #[error("parameter {name} = {value} is not finite")]
    NonFinite { name: &'static str, value: f64 },
    #[error("root distribution variance {0} must be nonnegative and finite")]
    InvalidRootVariance(f64),
}

/// Validated BAR(1) parameter set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarParams {
    alpha0: f64,
    beta0: f64,
    alpha1: f64,
    beta1: f64,
    sigma2: f64,
    rho: f64,
}

/// First and second moments of the induced chain's stationary law.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StationaryMoments {
    pub mu1: f64,
    pub mu2: f64,
}

impl StationaryMoments {
    pub fn variance(&self) -> f64 {
        self.mu2 - self.mu1 * self.mu1
    }
}

/// Stationary moments from raw coefficients, without range validation.
///
/// The second moment averages the per-branch products (`alpha*beta`,
/// `beta^2`, `alpha^2`), which matters as soon as the branches differ:
/// the fixed-point recursion is `m2 = E[a^2] m2 + 2 E[ab] m1 + E[b^2]`
/// over the fair branch coin, with the noise contributing `sigma2`.
pub(crate) fn stationary_moments_raw(
    alpha0: f64,
    beta0: f64,
    alpha1: f64,
    beta1: f64,
    sigma2: f64,
) -> StationaryMoments {
    let a_mean = 0.5 * (alpha0 + alpha1);
    let b_mean = 0.5 * (beta0 + beta1);
    let a2_mean = 0.5 * (alpha0 * alpha0 + alpha1 * alpha1);
    let ab_mean = 0.5 * (alpha0 * beta0 + alpha1 * beta1);
    let b2_mean = 0.5 * (beta0 * beta0 + beta1 * beta1);
    let mu1 = b_mean / (1.0 - a_mean);
    let mu2 = (2.0 * ab_mean * mu1 + b2_mean + sigma2) / (1.0 - a2_mean);
    StationaryMoments { mu1, mu2 }
}

impl BarParams {
    pub fn new(
        alpha0: f64,
        beta0: f64,
        alpha1: f64,
        beta1: f64,
        sigma2: f64,
        rho: f64,
    ) -> Result<Self, BarError> {
        for (name, value) in [("beta0", beta0), ("beta1", beta1)] {
            if !value.is_finite() {
                return Err(BarError::NonFinite { name, value });
            }
        }
        for (branch, value) in [(0, alpha0), (1, alpha1)] {
            if !value.is_finite() || value.abs() >= 1.0 {
                return Err(BarError::AlphaOutOfRange { branch, value });
            }
        }
        if !sigma2.is_finite() || sigma2 <= 0.0 {
            return Err(BarError::InvalidSigma2(sigma2));
        }
        if !rho.is_finite() || rho.abs() >= 1.0 {
            return Err(BarError::RhoOutOfRange(rho));
        }
        let params = BarParams {
            alpha0,
            beta0,
            alpha1,
            beta1,
            sigma2,
            rho,
        };
        // sigma2 > 0 forces a non-degenerate stationary law; checked on a
        // cancellation-free form of the variance so tiny noise still passes.
        assert!(
            params.stable_stationary_variance() > 0.0,
            "stationary variance must be positive"
        );
        Ok(params)
    }

    pub fn alpha0(&self) -> f64 {
        self.alpha0
    }
    pub fn beta0(&self) -> f64 {
        self.beta0
    }
    pub fn alpha1(&self) -> f64 {
        self.alpha1
    }
    pub fn beta1(&self) -> f64 {
        self.beta1
    }
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn alpha(&self, branch: usize) -> f64 {
        if branch == 0 {
            self.alpha0
        } else {
            self.alpha1
        }
    }

    pub fn beta(&self, branch: usize) -> f64 {
        if branch == 0 {
            self.beta0
        } else {
            self.beta1
        }
    }

    /// `theta = (alpha0, beta0, alpha1, beta1)`.
    pub fn theta(&self) -> [f64; 4] {
        [self.alpha0, self.beta0, self.alpha1, self.beta1]
    }

    pub fn stationary_moments(&self) -> StationaryMoments {
        stationary_moments_raw(self.alpha0, self.beta0, self.alpha1, self.beta1, self.sigma2)
    }

    /// Stationary variance without the `mu2 - mu1^2` cancellation: with
    /// `c_e = alpha_e mu1 + beta_e` the branch means at the fixed point,
    /// the variance is `(((c0 - c1)/2)^2 + sigma2) / (1 - mean(alpha^2))`.
    fn stable_stationary_variance(&self) -> f64 {
        let mu1 = self.stationary_moments().mu1;
        let c_gap = 0.5 * ((self.alpha0 - self.alpha1) * mu1 + self.beta0 - self.beta1);
        let a2_mean = 0.5 * (self.alpha0 * self.alpha0 + self.alpha1 * self.alpha1);
        (c_gap * c_gap + self.sigma2) / (1.0 - a2_mean)
    }

    /// One correlated noise pair with covariance
    /// `sigma2 * [[1, rho], [rho, 1]]`, via the Cholesky factor
    /// `sigma * [[1, 0], [rho, sqrt(1 - rho^2)]]`.
    pub fn noise_pair(&self, rng: &mut Stream) -> (f64, f64) {
        let (g0, g1) = rng.next_gaussian_pair();
        let sigma = self.sigma2.sqrt();
        (
            sigma * g0,
            sigma * (self.rho * g0 + (1.0 - self.rho * self.rho).sqrt() * g1),
        )
    }

    /// Daughter pair given the mother's value.
    pub fn step(&self, x: f64, rng: &mut Stream) -> (f64, f64) {
        let (e0, e1) = self.noise_pair(rng);
        (
            self.alpha0 * x + self.beta0 + e0,
            self.alpha1 * x + self.beta1 + e1,
        )
    }

    /// One draw from the stationary law of the induced chain, by the
    /// truncated random affine series `sum a_1..a_(k-1) b_k`. The cut-off
    /// `K` makes the discarded tail smaller than 1e-12 against a
    /// conservative envelope of the summands.
    pub fn sample_stationary(&self, rng: &mut Stream) -> f64 {
        let alpha_max = self.alpha0.abs().max(self.alpha1.abs());
        let terms = if alpha_max == 0.0 {
            1
        } else {
            let envelope = self.beta0.abs() + self.beta1.abs() + 6.0 * self.sigma2.sqrt() + 1.0;
            let k = ((1e-12 / envelope).ln() / alpha_max.ln()).ceil();
            (k as u64).max(1)
        };
        let sigma = self.sigma2.sqrt();
        let mut weight = 1.0;
        let mut total = 0.0;
        for _ in 0..terms {
            let branch = usize::from(rng.next_coin());
            let b = self.beta(branch) + sigma * rng.next_gaussian();
            total += weight * b;
            weight *= self.alpha(branch);
        }
        total
    }

    /// One step of the induced single-lineage chain: a fair coin picks the
    /// branch, then the affine map plus fresh noise is applied.
    pub fn induced_ar1_step(&self, y: f64, rng: &mut Stream) -> f64 {
        let branch = usize::from(rng.next_coin());
        self.alpha(branch) * y + self.beta(branch) + self.sigma2.sqrt() * rng.next_gaussian()
    }
}

impl Kernel for BarParams {
    type State = f64;

    fn sample_pair(&self, x: &f64, rng: &mut Stream) -> (f64, f64) {
        self.step(*x, rng)
    }
}

/// Law of the root value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RootDist {
    Dirac { value: f64 },
    Gaussian { mean: f64, var: f64 },
    /// Stationary law of the induced chain; the natural choice for an
    /// ancestor sampled from a long-evolved colony.
    Stationary,
}

impl RootDist {
    pub fn validate(&self) -> Result<(), BarError> {
        match *self {
            RootDist::Dirac { value } => {
                if !value.is_finite() {
                    return Err(BarError::NonFinite {
                        name: "root value",
                        value,
                    });
                }
            }
            RootDist::Gaussian { mean, var } => {
                if !mean.is_finite() {
                    return Err(BarError::NonFinite {
                        name: "root mean",
                        value: mean,
                    });
                }
                if !var.is_finite() || var < 0.0 {
                    return Err(BarError::InvalidRootVariance(var));
                }
            }
            RootDist::Stationary => {}
        }
        Ok(())
    }

    pub fn sample(&self, params: &BarParams, rng: &mut Stream) -> f64 {
        match *self {
            RootDist::Dirac { value } => value,
            RootDist::Gaussian { mean, var } => mean + var.sqrt() * rng.next_gaussian(),
            RootDist::Stationary => params.sample_stationary(rng),
        }
    }
}

/// Simulate a complete BAR lineage down to `depth` generations.
pub fn simulate_bar(
    params: &BarParams,
    root: &RootDist,
    depth: u32,
    seed: u64,
) -> Result<LineageSample<f64>, KernelError> {
    kernel::simulate(params, |rng| root.sample(params, rng), depth, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn reference() -> BarParams {
        BarParams::new(0.5, 1.0, 0.7, 0.3, 1.0, 0.4).unwrap()
    }

    #[test]
    fn constructor_rejects_bad_parameters() {
        assert!(BarParams::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0).is_err());
        assert!(BarParams::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0).is_err());
        assert!(BarParams::new(0.0, 0.0, 0.0, 0.0, -1.0, 0.0).is_err());
        assert!(BarParams::new(0.0, 0.0, 0.0, 0.0, 1.0, 0.999999).is_ok());
        assert!(BarParams::new(0.0, 0.0, 0.0, 0.0, 1.0, 1.0).is_err());
        assert!(BarParams::new(0.0, f64::NAN, 0.0, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn stationary_moments_symmetric_case() {
        let p = BarParams::new(0.5, 1.0, 0.5, 1.0, 1.0, 0.0).unwrap();
        let m = p.stationary_moments();
        assert_relative_eq!(m.mu1, 2.0, max_relative = 1e-14);
        assert_relative_eq!(m.mu2, 16.0 / 3.0, max_relative = 1e-14);
        assert_relative_eq!(m.variance(), 1.0 / (1.0 - 0.25), max_relative = 1e-12);
    }

    #[test]
    fn stationary_mean_depends_only_on_branch_averages() {
        let a = BarParams::new(0.3, 1.0, 0.7, 1.0, 1.0, 0.0).unwrap();
        let b = BarParams::new(0.5, 1.0, 0.5, 1.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(
            a.stationary_moments().mu1,
            b.stationary_moments().mu1,
            max_relative = 1e-14
        );
    }

    #[test]
    fn stationary_moments_memoryless_case() {
        let p = BarParams::new(0.0, 2.5, 0.0, 2.5, 1.5, 0.2).unwrap();
        let m = p.stationary_moments();
        assert_relative_eq!(m.mu1, 2.5, max_relative = 1e-14);
        assert_relative_eq!(m.mu2, 2.5 * 2.5 + 1.5, max_relative = 1e-14);
    }

    #[test]
    fn stationary_moments_swap_branches() {
        let a = BarParams::new(0.5, 1.0, 0.7, 0.3, 1.3, 0.2).unwrap();
        let b = BarParams::new(0.7, 0.3, 0.5, 1.0, 1.3, 0.2).unwrap();
        assert_eq!(a.stationary_moments(), b.stationary_moments());
    }

    #[test]
    fn noise_pair_with_zero_rho_is_uncorrelated() {
        let p = BarParams::new(0.0, 0.0, 0.0, 0.0, 1.0, 0.0).unwrap();
        let mut rng = Stream::new(17);
        let n = 1_000_000;
        let mut cross = 0.0;
        for _ in 0..n {
            let (e0, e1) = p.noise_pair(&mut rng);
            cross += e0 * e1;
        }
        assert!((cross / f64::from(n)).abs() < 0.01);
    }

    #[test]
    fn noise_pair_covariance_matches_gamma() {
        let p = BarParams::new(0.0, 0.0, 0.0, 0.0, 1.0, 0.4).unwrap();
        let mut rng = Stream::new(8);
        let n = 1_000_000;
        let (mut v0, mut v1, mut cross) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let (e0, e1) = p.noise_pair(&mut rng);
            v0 += e0 * e0;
            v1 += e1 * e1;
            cross += e0 * e1;
        }
        let n = f64::from(n);
        assert!((v0 / n - 1.0).abs() < 0.01, "var0 {}", v0 / n);
        assert!((v1 / n - 1.0).abs() < 0.01, "var1 {}", v1 / n);
        assert!((cross / n - 0.4).abs() < 0.01, "cov {}", cross / n);
    }

    #[test]
    fn step_noise_free_limit() {
        let p = BarParams::new(0.5, 1.0, 0.7, 0.3, 1e-20, 0.0).unwrap();
        let mut rng = Stream::new(1);
        let (d0, d1) = p.step(2.0, &mut rng);
        assert!((d0 - 2.0).abs() < 1e-8);
        assert!((d1 - 1.7).abs() < 1e-8);
    }

    #[test]
    fn step_at_origin_with_zero_intercepts_is_noise() {
        let p = BarParams::new(0.5, 0.0, 0.7, 0.0, 1.0, 0.4).unwrap();
        let mut a = Stream::new(9);
        let mut b = Stream::new(9);
        assert_eq!(p.step(0.0, &mut a), p.noise_pair(&mut b));
    }

    #[test]
    fn step_mean_matches_affine_map() {
        let p = BarParams::new(0.5, 1.0, 0.7, 0.3, 1.0, 0.4).unwrap();
        let mut rng = Stream::new(21);
        let n = 1_000_000;
        let (mut s0, mut s1) = (0.0, 0.0);
        for _ in 0..n {
            let (d0, d1) = p.step(1.0, &mut rng);
            s0 += d0;
            s1 += d1;
        }
        let n = f64::from(n);
        let se = (1.0 / n).sqrt();
        assert!((s0 / n - 1.5).abs() < 3.0 * se, "mean0 {}", s0 / n);
        assert!((s1 / n - 1.0).abs() < 3.0 * se, "mean1 {}", s1 / n);
    }

    #[test]
    fn sample_stationary_matches_moments() {
        let p = reference();
        let m = p.stationary_moments();
        let mut rng = Stream::new(4);
        let n = 1_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z = p.sample_stationary(&mut rng);
            s1 += z;
            s2 += z * z;
        }
        let n = f64::from(n);
        let mean = s1 / n;
        let second = s2 / n;
        let se1 = (m.variance() / n).sqrt();
        // rough standard error for the second moment of a light-tailed law
        let se2 = ((m.mu2 * m.mu2 * 3.0) / n).sqrt();
        assert!((mean - m.mu1).abs() < 3.0 * se1, "mean {mean} vs {}", m.mu1);
        assert!(
            (second - m.mu2).abs() < 3.0 * se2,
            "second {second} vs {}",
            m.mu2
        );
    }

    #[test]
    fn sample_stationary_memoryless_is_single_term() {
        let p = BarParams::new(0.0, 1.0, 0.0, -1.0, 1.0, 0.0).unwrap();
        let mut a = Stream::new(6);
        let mut b = Stream::new(6);
        let direct = {
            let branch = usize::from(b.next_coin());
            p.beta(branch) + b.next_gaussian()
        };
        assert_eq!(p.sample_stationary(&mut a), direct);
    }

    #[test]
    fn induced_step_deterministic_limit() {
        let p = BarParams::new(0.5, 1.0, 0.5, 1.0, 1e-20, 0.0).unwrap();
        let mut rng = Stream::new(2);
        let y = p.induced_ar1_step(3.0, &mut rng);
        assert!((y - 2.5).abs() < 1e-8);
    }

    #[test]
    fn induced_chain_long_run_mean() {
        let p = reference();
        let m = p.stationary_moments();
        let mut rng = Stream::new(13);
        let n = 1_000_000u32;
        let mut y = m.mu1;
        let mut sum = 0.0;
        for _ in 0..n {
            y = p.induced_ar1_step(y, &mut rng);
            sum += y;
        }
        let mean = sum / f64::from(n);
        // variance of the ergodic average of an AR(1), conservative factor
        let a_mean = 0.6;
        let se = (m.variance() * (1.0 + a_mean) / (1.0 - a_mean) / f64::from(n)).sqrt();
        assert!((mean - m.mu1).abs() < 3.0 * se, "mean {mean} vs {}", m.mu1);
    }

    #[test]
    fn induced_chain_marginal_matches_stationary_law() {
        // run the induced chain well past its mixing time, compare the
        // marginal against direct stationary draws by two-sample KS
        let p = reference();
        let mut rng = Stream::new(2025);
        let burn = 60;
        let n = 10_000;
        let mut chain_draws = Vec::with_capacity(n);
        for _ in 0..n {
            let mut y = 0.0;
            for _ in 0..burn {
                y = p.induced_ar1_step(y, &mut rng);
            }
            chain_draws.push(y);
        }
        let direct: Vec<f64> = (0..n).map(|_| p.sample_stationary(&mut rng)).collect();
        let d = crate::stats::ks_two_sample(&chain_draws, &direct);
        let p_value = crate::stats::ks_two_sample_pvalue(n, n, d);
        assert!(p_value > 0.01, "KS p = {p_value}");
    }

    #[test]
    fn stationary_law_is_stable_under_one_step() {
        let p = reference();
        let mut rng = Stream::new(808);
        let n = 10_000;
        let stepped: Vec<f64> = (0..n)
            .map(|_| {
                let z = p.sample_stationary(&mut rng);
                p.induced_ar1_step(z, &mut rng)
            })
            .collect();
        let direct: Vec<f64> = (0..n).map(|_| p.sample_stationary(&mut rng)).collect();
        let d = crate::stats::ks_two_sample(&stepped, &direct);
        let p_value = crate::stats::ks_two_sample_pvalue(n, n, d);
        assert!(p_value > 0.01, "KS p = {p_value}");
    }

    #[test]
    fn simulate_bar_is_deterministic() {
        let p = reference();
        let a = simulate_bar(&p, &RootDist::Stationary, 6, 42).unwrap();
        let b = simulate_bar(&p, &RootDist::Stationary, 6, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn simulate_bar_depth_zero_is_root_draw() {
        let p = reference();
        let s = simulate_bar(&p, &RootDist::Dirac { value: 7.5 }, 0, 1).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(*s.get(1), 7.5);
    }
}
