//! Least-squares / maximum-likelihood estimation of the BAR(1) parameters
//! from an observed lineage, residues, fixed points, and the plug-in
//! asymptotic covariance of the estimator.

use crate::bar::stationary_moments_raw;
use crate::empirics::Lineage;
use nalgebra::{Matrix2, Matrix4};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("branch {branch} has {got} mother-daughter pairs, needs at least {needed}")]
    InsufficientData {
        branch: usize,
        got: u64,
        needed: u64,
    },
    #[error("branch {0} mothers have zero sample variance")]
    DegenerateDesign(usize),
    #[error("all residues are zero, correlation is undefined")]
    ZeroVariance,
}

/// Per-branch affine coefficients `(alpha0, beta0, alpha1, beta1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThetaHat {
    pub alpha0: f64,
    pub beta0: f64,
    pub alpha1: f64,
    pub beta1: f64,
}

impl ThetaHat {
    pub fn as_array(&self) -> [f64; 4] {
        [self.alpha0, self.beta0, self.alpha1, self.beta1]
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
}

/// How many observations each estimator actually used.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    /// Observed (mother, daughter 2i) pairs.
    pub pairs0: u64,
    /// Observed (mother, daughter 2i+1) pairs.
    pub pairs1: u64,
    /// Mothers with both daughters observed.
    pub triangles: u64,
}

/// Fitted innovations, one pair per complete triangle, ascending in the
/// mother's label.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Residuals {
    /// `(mother label i, residue of 2i, residue of 2i+1)`.
    pub triangles: Vec<(u64, f64, f64)>,
}

impl Residuals {
    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }
}

/// Full output of a fit.
#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub theta_hat: ThetaHat,
    pub sigma2_hat: f64,
    pub rho_hat: f64,
    /// Per-branch fixed points `beta / (1 - alpha)`.
    pub gamma_hat: [f64; 2],
    pub counts: Counts,
    /// Plug-in stationary moments at the fitted parameters.
    pub mu1_hat: f64,
    pub mu2_hat: f64,
    /// Plug-in asymptotic covariance of the scaled estimator error.
    pub sigma_prime_hat: Matrix4<f64>,
}

/// Per-branch simple linear regression of daughters on mothers.
///
/// Branch `e` regresses the observed values at `2i + e` on the values at
/// `i`, over every observed pair; a missing sister does not disqualify a
/// pair. With `constrain_alpha_zero` the slope is pinned to zero and the
/// intercept is the daughters' mean.
pub fn fit_theta(
    lineage: &Lineage,
    constrain_alpha_zero: bool,
) -> Result<(ThetaHat, Counts), FitError> {
    let mut coeffs = [(0.0, 0.0); 2];
    let mut pair_counts = [0u64; 2];
    for branch in 0..2usize {
        let pairs: Vec<(f64, f64)> = lineage
            .iter()
            .filter_map(|(i, x)| {
                lineage
                    .get(2 * i + branch as u64)
                    .map(|daughter| (x, daughter))
            })
            .collect();
        let n = pairs.len() as u64;
        pair_counts[branch] = n;
        if n == 0 {
            return Err(FitError::InsufficientData {
                branch,
                got: 0,
                needed: if constrain_alpha_zero { 1 } else { 2 },
            });
        }
        let nf = n as f64;
        let mean_x = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
        let mean_y = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
        if constrain_alpha_zero {
            coeffs[branch] = (0.0, mean_y);
            continue;
        }
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for (x, y) in &pairs {
            sxx += (x - mean_x) * (x - mean_x);
            sxy += (x - mean_x) * (y - mean_y);
        }
        // covers the single-pair case: one mother has zero variance
        if sxx == 0.0 {
            return Err(FitError::DegenerateDesign(branch));
        }
        let alpha = sxy / sxx;
        coeffs[branch] = (alpha, mean_y - alpha * mean_x);
    }
    let triangles = lineage
        .iter()
        .filter(|&(i, _)| lineage.get(2 * i).is_some() && lineage.get(2 * i + 1).is_some())
        .count() as u64;
    Ok((
        ThetaHat {
            alpha0: coeffs[0].0,
            beta0: coeffs[0].1,
            alpha1: coeffs[1].0,
            beta1: coeffs[1].1,
        },
        Counts {
            pairs0: pair_counts[0],
            pairs1: pair_counts[1],
            triangles,
        },
    ))
}

/// Residues over every complete triangle: each daughter's value minus its
/// branch's fitted affine prediction from the mother.
pub fn residuals(lineage: &Lineage, theta: &ThetaHat) -> Residuals {
    let triangles = lineage
        .iter()
        .filter_map(|(i, x)| {
            let y = lineage.get(2 * i)?;
            let z = lineage.get(2 * i + 1)?;
            Some((
                i,
                y - theta.alpha0 * x - theta.beta0,
                z - theta.alpha1 * x - theta.beta1,
            ))
        })
        .collect();
    Residuals { triangles }
}

/// Noise variance and sister-sister correlation from the residues,
/// normalized by the number of triangles actually observed.
pub fn fit_sigma2_rho(residuals: &Residuals) -> Result<(f64, f64), FitError> {
    let m = residuals.len() as u64;
    if m == 0 {
        return Err(FitError::InsufficientData {
            branch: 0,
            got: 0,
            needed: 1,
        });
    }
    let mf = m as f64;
    let mut sq = 0.0;
    let mut cross = 0.0;
    for &(_, e0, e1) in &residuals.triangles {
        sq += e0 * e0 + e1 * e1;
        cross += e0 * e1;
    }
    let sigma2 = sq / (2.0 * mf);
    if sigma2 == 0.0 {
        return Err(FitError::ZeroVariance);
    }
    Ok((sigma2, cross / mf / sigma2))
}

/// Asymptotic covariance of the scaled estimator error at the given
/// parameters: `sigma2 * [[K, rho K], [rho K, K]]` where
/// `K = [[1, -mu1], [-mu1, mu2]] / (mu2 - mu1^2)`.
pub fn asymptotic_covariance(theta: &ThetaHat, sigma2: f64, rho: f64) -> Matrix4<f64> {
    let m = stationary_moments_raw(theta.alpha0, theta.beta0, theta.alpha1, theta.beta1, sigma2);
    let k = Matrix2::new(1.0, -m.mu1, -m.mu1, m.mu2) / m.variance();
    let mut out = Matrix4::zeros();
    for (bi, bj, scale) in [
        (0, 0, sigma2),
        (1, 1, sigma2),
        (0, 1, sigma2 * rho),
        (1, 0, sigma2 * rho),
    ] {
        for i in 0..2 {
            for j in 0..2 {
                out[(2 * bi + i, 2 * bj + j)] = scale * k[(i, j)];
            }
        }
    }
    out
}

/// Full fit: theta, noise parameters from the residues, fixed points, and
/// the plug-in covariance.
pub fn fit(lineage: &Lineage) -> Result<FitResult, FitError> {
    fit_with_options(lineage, false)
}

/// As [`fit`], optionally constraining both slopes to zero.
pub fn fit_with_options(
    lineage: &Lineage,
    constrain_alpha_zero: bool,
) -> Result<FitResult, FitError> {
    let (theta_hat, counts) = fit_theta(lineage, constrain_alpha_zero)?;
    let res = residuals(lineage, &theta_hat);
    let (sigma2_hat, rho_hat) = fit_sigma2_rho(&res)?;
    let gamma_hat = [
        theta_hat.beta0 / (1.0 - theta_hat.alpha0),
        theta_hat.beta1 / (1.0 - theta_hat.alpha1),
    ];
    let moments = stationary_moments_raw(
        theta_hat.alpha0,
        theta_hat.beta0,
        theta_hat.alpha1,
        theta_hat.beta1,
        sigma2_hat,
    );
    let sigma_prime_hat = asymptotic_covariance(&theta_hat, sigma2_hat, rho_hat);
    Ok(FitResult {
        theta_hat,
        sigma2_hat,
        rho_hat,
        gamma_hat,
        counts,
        mu1_hat: moments.mu1,
        mu2_hat: moments.mu2,
        sigma_prime_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bar::{simulate_bar, BarParams, RootDist};
    use crate::rng::derive_seed;
    use approx::assert_relative_eq;

    fn reference() -> BarParams {
        BarParams::new(0.5, 1.0, 0.7, 0.3, 1.0, 0.4).unwrap()
    }

    fn simulated_lineage(params: &BarParams, depth: u32, seed: u64) -> Lineage {
        Lineage::from_sample(&simulate_bar(params, &RootDist::Stationary, depth, seed).unwrap())
    }

    #[test]
    fn three_point_regression_closed_form() {
        // branch-0 pairs (0,1), (1,1), (-1,0); branch 1 gets two pairs so
        // the whole fit is well-posed.
        let lin: Lineage = [
            (1u64, 0.0),
            (2, 1.0),
            (3, -1.0),
            (4, 1.0),
            (6, 0.0),
            (7, 5.0),
        ]
        .into_iter()
        .collect();
        let (theta, counts) = fit_theta(&lin, false).unwrap();
        assert_relative_eq!(theta.alpha0, 0.5, epsilon = 1e-12);
        assert_relative_eq!(theta.beta0, 2.0 / 3.0, epsilon = 1e-12);
        assert_eq!(counts.pairs0, 3);
        assert_eq!(counts.pairs1, 2);
        // nodes 1 and 3 have both daughters observed
        assert_eq!(counts.triangles, 2);
    }

    #[test]
    fn single_triangle_is_degenerate() {
        let lin: Lineage = [(1u64, 2.0), (2, 1.0), (3, 0.5)].into_iter().collect();
        assert_eq!(fit_theta(&lin, false).unwrap_err(), FitError::DegenerateDesign(0));
        // but the constrained fit works on one triangle
        let (theta, _) = fit_theta(&lin, true).unwrap();
        assert_eq!(theta.alpha0, 0.0);
        assert_eq!(theta.beta0, 1.0);
        assert_eq!(theta.beta1, 0.5);
    }

    #[test]
    fn too_few_pairs_is_insufficient() {
        let lin: Lineage = [(1u64, 2.0)].into_iter().collect();
        assert!(matches!(
            fit_theta(&lin, false).unwrap_err(),
            FitError::InsufficientData { branch: 0, .. }
        ));
        // one pair on branch 0, none on branch 1
        let lin: Lineage = [(1u64, 2.0), (2, 1.0)].into_iter().collect();
        assert_eq!(fit_theta(&lin, false).unwrap_err(), FitError::DegenerateDesign(0));
    }

    #[test]
    fn noiseless_simulation_recovers_theta_exactly() {
        let p = BarParams::new(0.5, 1.0, 0.7, 0.3, 1e-20, 0.0).unwrap();
        let lin = Lineage::from_sample(
            &simulate_bar(&p, &RootDist::Dirac { value: 1.0 }, 6, 11).unwrap(),
        );
        let result = fit(&lin).unwrap();
        let [a0, b0, a1, b1] = result.theta_hat.as_array();
        assert_relative_eq!(a0, 0.5, epsilon = 1e-8);
        assert_relative_eq!(b0, 1.0, epsilon = 1e-8);
        assert_relative_eq!(a1, 0.7, epsilon = 1e-8);
        assert_relative_eq!(b1, 0.3, epsilon = 1e-8);
        assert_relative_eq!(result.gamma_hat[0], 2.0, epsilon = 1e-8);
        assert_relative_eq!(result.gamma_hat[1], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn noiseless_residues_vanish() {
        let p = BarParams::new(0.4, 0.5, -0.3, 1.2, 1e-20, 0.0).unwrap();
        let lin = Lineage::from_sample(
            &simulate_bar(&p, &RootDist::Dirac { value: 2.0 }, 5, 3).unwrap(),
        );
        let theta = ThetaHat {
            alpha0: 0.4,
            beta0: 0.5,
            alpha1: -0.3,
            beta1: 1.2,
        };
        let res = residuals(&lin, &theta);
        for &(_, e0, e1) in &res.triangles {
            assert!(e0.abs() < 1e-9 && e1.abs() < 1e-9);
        }
    }

    #[test]
    fn residues_sum_to_zero_per_branch_on_complete_trees() {
        // on a complete tree the regression pairs are exactly the
        // triangles, so least squares makes residues mean-zero per branch
        let lin = simulated_lineage(&reference(), 8, 17);
        let result = fit(&lin).unwrap();
        let res = residuals(&lin, &result.theta_hat);
        let sum0: f64 = res.triangles.iter().map(|t| t.1).sum();
        let sum1: f64 = res.triangles.iter().map(|t| t.2).sum();
        assert!(sum0.abs() < 1e-8, "branch 0 residue sum {sum0}");
        assert!(sum1.abs() < 1e-8, "branch 1 residue sum {sum1}");
    }

    #[test]
    fn residues_pass_normality_moment_check() {
        let lin = simulated_lineage(&reference(), 12, 29);
        let result = fit(&lin).unwrap();
        let res = residuals(&lin, &result.theta_hat);
        let all: Vec<f64> = res
            .triangles
            .iter()
            .flat_map(|&(_, e0, e1)| [e0, e1])
            .collect();
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
        let skew = all.iter().map(|e| (e - mean).powi(3)).sum::<f64>() / n / var.powf(1.5);
        let kurt = all.iter().map(|e| (e - mean).powi(4)).sum::<f64>() / n / (var * var) - 3.0;
        assert!(skew.abs() < 0.1, "skew {skew}");
        assert!(kurt.abs() < 0.2, "excess kurtosis {kurt}");
    }

    #[test]
    fn zero_residues_give_zero_variance_error() {
        let res = Residuals {
            triangles: vec![(1, 0.0, 0.0), (2, 0.0, 0.0)],
        };
        assert_eq!(fit_sigma2_rho(&res).unwrap_err(), FitError::ZeroVariance);
    }

    #[test]
    fn perfectly_correlated_residues() {
        let res = Residuals {
            triangles: vec![(1, 1.0, 1.0), (2, -1.0, -1.0)],
        };
        let (sigma2, rho) = fit_sigma2_rho(&res).unwrap();
        assert_eq!(sigma2, 1.0);
        assert_eq!(rho, 1.0);
    }

    #[test]
    fn sigma2_rho_consistency_over_seeds() {
        let p = reference();
        for k in 0..20u64 {
            let lin = simulated_lineage(&p, 14, derive_seed(100, &[k]));
            let result = fit(&lin).unwrap();
            assert!(
                (result.sigma2_hat - 1.0).abs() < 0.03,
                "seed {k}: sigma2 {}",
                result.sigma2_hat
            );
            assert!(
                (result.rho_hat - 0.4).abs() < 0.03,
                "seed {k}: rho {}",
                result.rho_hat
            );
        }
    }

    #[test]
    fn covariance_zero_rho_kills_cross_blocks() {
        let theta = ThetaHat {
            alpha0: 0.5,
            beta0: 1.0,
            alpha1: 0.7,
            beta1: 0.3,
        };
        let cov = asymptotic_covariance(&theta, 1.0, 0.0);
        for i in 0..2 {
            for j in 2..4 {
                assert_eq!(cov[(i, j)], 0.0);
                assert_eq!(cov[(j, i)], 0.0);
            }
        }
    }

    #[test]
    fn covariance_centered_memoryless_case() {
        let theta = ThetaHat {
            alpha0: 0.0,
            beta0: 0.0,
            alpha1: 0.0,
            beta1: 0.0,
        };
        let rho = 0.3;
        let cov = asymptotic_covariance(&theta, 1.0, rho);
        // mu1 = 0, mu2 = 1 so K is the identity
        let expect = Matrix4::new(
            1.0, 0.0, rho, 0.0, //
            0.0, 1.0, 0.0, rho, //
            rho, 0.0, 1.0, 0.0, //
            0.0, rho, 0.0, 1.0,
        );
        assert_relative_eq!(cov, expect, epsilon = 1e-14);
    }

    #[test]
    fn covariance_is_positive_semidefinite() {
        for (a0, b0, a1, b1, s2, rho) in [
            (0.5, 1.0, 0.7, 0.3, 1.0, 0.4),
            (-0.8, 2.0, 0.9, -1.0, 0.5, -0.9),
            (0.0, 0.0, 0.0, 0.0, 2.0, 0.0),
            (0.3, 0.7, 0.6, 0.4, 1.0, 0.5),
        ] {
            let theta = ThetaHat {
                alpha0: a0,
                beta0: b0,
                alpha1: a1,
                beta1: b1,
            };
            let cov = asymptotic_covariance(&theta, s2, rho);
            let eig = cov.symmetric_eigen();
            for &lambda in eig.eigenvalues.iter() {
                assert!(lambda >= -1e-10, "eigenvalue {lambda}");
            }
        }
    }

    /// The tree automorphism that swaps every node's daughters: flip all
    /// branch bits of the path, i.e. `n -> 3 * 2^q - 1 - n` in generation q.
    fn mirror(n: u64) -> u64 {
        let q = 63 - n.leading_zeros();
        3 * (1u64 << q) - 1 - n
    }

    #[test]
    fn covariance_blocks_are_symmetric_and_equal() {
        let lin = simulated_lineage(&reference(), 10, 3);
        let fit = fit(&lin).unwrap();
        assert!(fit.mu2_hat - fit.mu1_hat * fit.mu1_hat > 0.0);
        assert!(fit.sigma2_hat > 0.0);
        let cov = fit.sigma_prime_hat;
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(cov[(i, j)], cov[(j, i)]);
            }
        }
        // both diagonal 2x2 blocks are the same positive definite matrix
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(cov[(i, j)], cov[(2 + i, 2 + j)]);
            }
        }
        let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
        assert!(cov[(0, 0)] > 0.0 && det > 0.0);
    }

    #[test]
    fn branch_swap_symmetry() {
        let lin = simulated_lineage(&reference(), 9, 41);
        let swapped: Lineage = lin.iter().map(|(n, v)| (mirror(n), v)).collect();
        let a = fit(&lin).unwrap();
        let b = fit(&swapped).unwrap();
        // identical pair multisets, summed in a different node order
        assert_relative_eq!(a.theta_hat.alpha0, b.theta_hat.alpha1, max_relative = 1e-13);
        assert_relative_eq!(a.theta_hat.beta0, b.theta_hat.beta1, max_relative = 1e-13);
        assert_relative_eq!(a.theta_hat.alpha1, b.theta_hat.alpha0, max_relative = 1e-13);
        assert_relative_eq!(a.theta_hat.beta1, b.theta_hat.beta0, max_relative = 1e-13);
        assert_relative_eq!(a.sigma2_hat, b.sigma2_hat, max_relative = 1e-13);
        assert_relative_eq!(a.rho_hat.abs(), b.rho_hat.abs(), max_relative = 1e-13);
    }

    #[test]
    fn affine_equivariance() {
        let lin = simulated_lineage(&reference(), 9, 43);
        let (c, d) = (2.5, -1.25);
        let scaled: Lineage = lin.iter().map(|(n, v)| (n, c * v + d)).collect();
        let base = fit(&lin).unwrap();
        let moved = fit(&scaled).unwrap();
        for branch in 0..2 {
            assert_relative_eq!(
                moved.theta_hat.alpha(branch),
                base.theta_hat.alpha(branch),
                epsilon = 1e-10
            );
            assert_relative_eq!(
                moved.theta_hat.beta(branch),
                c * base.theta_hat.beta(branch) + d * (1.0 - base.theta_hat.alpha(branch)),
                epsilon = 1e-10
            );
        }
        assert_relative_eq!(moved.sigma2_hat, c * c * base.sigma2_hat, max_relative = 1e-10);
        assert_relative_eq!(moved.rho_hat, base.rho_hat, max_relative = 1e-10);
    }

    #[test]
    fn theta_error_shrinks_with_depth() {
        let p = reference();
        let truth = p.theta();
        let mut medians = Vec::new();
        for &depth in &[8u32, 10, 12, 14] {
            let mut errors: Vec<f64> = (0..20u64)
                .map(|k| {
                    let lin = simulated_lineage(&p, depth, derive_seed(7, &[k, u64::from(depth)]));
                    let est = fit(&lin).unwrap().theta_hat.as_array();
                    est.iter()
                        .zip(truth)
                        .map(|(e, t)| (e - t) * (e - t))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
            medians.push(errors[errors.len() / 2]);
        }
        for w in medians.windows(2) {
            assert!(w[1] <= w[0], "medians not non-increasing: {medians:?}");
        }
        assert!(medians[3] < 0.05, "median at r=14: {}", medians[3]);
    }
}
