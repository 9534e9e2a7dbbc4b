//! Wald-type asymmetry tests and the tail functions backing their
//! p-values.
//!
//! Four null hypotheses are covered: equal branch dynamics (both affine
//! maps coincide), equal slopes, equal intercepts, equal fixed points, and
//! a sister-difference z-test for the memoryless submodel. Chi-square and
//! normal tails are evaluated through the regularized incomplete gamma
//! function.
//!
//! Single-coordinate nullity tests (e.g. `alpha0 = 0`) would follow the
//! same Wald construction from the estimator's covariance; they are not
//! implemented here.

use crate::empirics::Lineage;
use crate::inference::FitResult;
use nalgebra::Vector4;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TestError {
    #[error("chi-square statistic must be nonnegative, got {0}")]
    NegativeStatistic(f64),
    #[error("degrees of freedom must be positive")]
    ZeroDof,
    #[error("estimated noise scale is degenerate ({0})")]
    DegenerateVariance(String),
    #[error("fitted slope alpha{branch} = {value} leaves no stable fixed point")]
    UnstableFit { branch: usize, value: f64 },
}

// --- tail functions ---------------------------------------------------

/// ln Gamma(k/2) by recurrence from Gamma(1) = 1 and Gamma(1/2) = sqrt(pi).
fn ln_gamma_half(k: u32) -> f64 {
    let mut a = f64::from(k) / 2.0;
    let mut acc = 0.0;
    while a > 1.25 {
        a -= 1.0;
        acc += a.ln();
    }
    if (a - 0.5).abs() < 0.25 {
        acc + 0.5 * std::f64::consts::PI.ln()
    } else {
        acc
    }
}

const GAMMA_EPS: f64 = 1e-15;
const GAMMA_MAX_ITER: usize = 1000;

/// Regularized lower incomplete gamma P(a, x) by its power series,
/// for x < a + 1.
fn reg_gamma_p_series(a: f64, x: f64, ln_gamma_a: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut denom = a;
    for _ in 0..GAMMA_MAX_ITER {
        denom += 1.0;
        term *= x / denom;
        sum += term;
        if term.abs() < sum.abs() * GAMMA_EPS {
            break;
        }
    }
    sum * (a * x.ln() - x - ln_gamma_a).exp()
}

/// Regularized upper incomplete gamma Q(a, x) by continued fraction
/// (modified Lentz), for x >= a + 1.
fn reg_gamma_q_cf(a: f64, x: f64, ln_gamma_a: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=GAMMA_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < GAMMA_EPS {
            break;
        }
    }
    (a * x.ln() - x - ln_gamma_a).exp() * h
}

/// Upper tail of the chi-square distribution with `k` degrees of freedom:
/// the regularized upper incomplete gamma Q(k/2, x/2).
pub fn chi2_survival(x: f64, k: u32) -> Result<f64, TestError> {
    if k == 0 {
        return Err(TestError::ZeroDof);
    }
    if x.is_nan() || x < 0.0 {
        return Err(TestError::NegativeStatistic(x));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    let a = f64::from(k) / 2.0;
    let y = x / 2.0;
    let ln_gamma_a = ln_gamma_half(k);
    let q = if y < a + 1.0 {
        1.0 - reg_gamma_p_series(a, y, ln_gamma_a)
    } else {
        reg_gamma_q_cf(a, y, ln_gamma_a)
    };
    Ok(q.clamp(0.0, 1.0))
}

/// Upper tail of the standard normal distribution,
/// `P(N(0,1) >= z) = Q(1/2, z^2 / 2) / 2` for `z >= 0`.
pub fn normal_survival(z: f64) -> f64 {
    if z < 0.0 {
        return 1.0 - normal_survival(-z);
    }
    if z == 0.0 {
        return 0.5;
    }
    0.5 * chi2_survival(z * z, 1).expect("z^2 >= 0")
}

// --- test reports -----------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TestName {
    EqualDynamics,
    EqualAlpha,
    EqualBeta,
    EqualFixedPoint,
    SisterDifference,
}

impl TestName {
    pub fn as_str(self) -> &'static str {
        match self {
            TestName::EqualDynamics => "equal_dynamics",
            TestName::EqualAlpha => "equal_alpha",
            TestName::EqualBeta => "equal_beta",
            TestName::EqualFixedPoint => "equal_fixed_point",
            TestName::SisterDifference => "sister_difference",
        }
    }
}

/// Reference distribution of a statistic under its null.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dof {
    ChiSquared(u32),
    Normal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestReport {
    pub name: TestName,
    pub statistic: f64,
    pub dof: Dof,
    pub p_value: f64,
    pub n_effective: u64,
}

/// Guard against unusable noise estimates: requires a positive variance
/// and a correlation strictly inside (-1, 1); within that open interval
/// the correlation is clamped away from 1 by 1e-12 before it enters a
/// `1 - rho` denominator.
fn noise_scale(fit: &FitResult) -> Result<(f64, f64), TestError> {
    if !fit.sigma2_hat.is_finite() || fit.sigma2_hat <= 0.0 {
        return Err(TestError::DegenerateVariance(format!(
            "sigma2_hat = {}",
            fit.sigma2_hat
        )));
    }
    if !fit.rho_hat.is_finite() || fit.rho_hat.abs() >= 1.0 {
        return Err(TestError::DegenerateVariance(format!(
            "rho_hat = {}",
            fit.rho_hat
        )));
    }
    let guard = 1.0 - 1e-12;
    Ok((fit.sigma2_hat, fit.rho_hat.clamp(-guard, guard)))
}

fn plug_in_spread(fit: &FitResult) -> Result<f64, TestError> {
    let spread = fit.mu2_hat - fit.mu1_hat * fit.mu1_hat;
    if !spread.is_finite() || spread <= 0.0 {
        return Err(TestError::DegenerateVariance(format!(
            "mu2_hat - mu1_hat^2 = {spread}"
        )));
    }
    Ok(spread)
}

/// Wald test of equal branch dynamics (both slopes and intercepts agree);
/// chi-square with two degrees of freedom under the null.
pub fn test_equal_dynamics(fit: &FitResult, n: u64) -> Result<TestReport, TestError> {
    let (sigma2, rho) = noise_scale(fit)?;
    let spread = plug_in_spread(fit)?;
    let d_alpha = fit.theta_hat.alpha0 - fit.theta_hat.alpha1;
    let d_beta = fit.theta_hat.beta0 - fit.theta_hat.beta1;
    let quad = d_alpha * d_alpha * spread + (d_alpha * fit.mu1_hat + d_beta).powi(2);
    let statistic = n as f64 / (2.0 * sigma2 * (1.0 - rho)) * quad;
    Ok(TestReport {
        name: TestName::EqualDynamics,
        statistic,
        dof: Dof::ChiSquared(2),
        p_value: chi2_survival(statistic, 2)?,
        n_effective: n,
    })
}

/// Wald test of equal slopes; chi-square with one degree of freedom.
pub fn test_equal_alpha(fit: &FitResult, n: u64) -> Result<TestReport, TestError> {
    let (sigma2, rho) = noise_scale(fit)?;
    let spread = plug_in_spread(fit)?;
    let d_alpha = fit.theta_hat.alpha0 - fit.theta_hat.alpha1;
    let statistic = n as f64 * d_alpha * d_alpha * spread / (2.0 * sigma2 * (1.0 - rho));
    Ok(TestReport {
        name: TestName::EqualAlpha,
        statistic,
        dof: Dof::ChiSquared(1),
        p_value: chi2_survival(statistic, 1)?,
        n_effective: n,
    })
}

/// Wald test of equal intercepts; chi-square with one degree of freedom.
/// The variance of `beta0_hat - beta1_hat` reads `2 sigma2 (1 - rho) K22`
/// off the covariance structure, with `K22 = mu2 / (mu2 - mu1^2)`.
pub fn test_equal_beta(fit: &FitResult, n: u64) -> Result<TestReport, TestError> {
    let (sigma2, rho) = noise_scale(fit)?;
    let spread = plug_in_spread(fit)?;
    if !fit.mu2_hat.is_finite() || fit.mu2_hat <= 0.0 {
        return Err(TestError::DegenerateVariance(format!(
            "mu2_hat = {}",
            fit.mu2_hat
        )));
    }
    let k22 = fit.mu2_hat / spread;
    let d_beta = fit.theta_hat.beta0 - fit.theta_hat.beta1;
    let statistic = n as f64 * d_beta * d_beta / (2.0 * sigma2 * (1.0 - rho) * k22);
    Ok(TestReport {
        name: TestName::EqualBeta,
        statistic,
        dof: Dof::ChiSquared(1),
        p_value: chi2_survival(statistic, 1)?,
        n_effective: n,
    })
}

/// Wald test of equal fixed points `beta / (1 - alpha)` via the delta
/// method; chi-square with one degree of freedom. The null is strictly
/// weaker than equal dynamics: different branches may share a fixed point.
pub fn test_equal_fixed_point(fit: &FitResult, n: u64) -> Result<TestReport, TestError> {
    for (branch, alpha) in [(0, fit.theta_hat.alpha0), (1, fit.theta_hat.alpha1)] {
        if !alpha.is_finite() || alpha.abs() >= 1.0 {
            return Err(TestError::UnstableFit {
                branch,
                value: alpha,
            });
        }
    }
    // gradient of beta0/(1-alpha0) - beta1/(1-alpha1) in theta; the two
    // branch-1 components carry minus signs
    let gradient = Vector4::new(
        fit.theta_hat.beta0 / (1.0 - fit.theta_hat.alpha0).powi(2),
        1.0 / (1.0 - fit.theta_hat.alpha0),
        -fit.theta_hat.beta1 / (1.0 - fit.theta_hat.alpha1).powi(2),
        -1.0 / (1.0 - fit.theta_hat.alpha1),
    );
    let s2 = (fit.sigma_prime_hat * gradient).dot(&gradient);
    if !s2.is_finite() || s2 <= 0.0 {
        return Err(TestError::DegenerateVariance(format!(
            "delta-method variance = {s2}"
        )));
    }
    let gap = fit.gamma_hat[0] - fit.gamma_hat[1];
    let statistic = n as f64 * gap * gap / s2;
    Ok(TestReport {
        name: TestName::EqualFixedPoint,
        statistic,
        dof: Dof::ChiSquared(1),
        p_value: chi2_survival(statistic, 1)?,
        n_effective: n,
    })
}

/// Sister-difference z-test for the memoryless submodel (both slopes
/// zero). `fit_constrained` must come from fitting the same lineage with
/// the slopes constrained to zero; validity rests on the data-generating
/// slopes actually being zero, which is not checked here. The two-sided
/// p-value is reported; the sign of the statistic carries the direction.
pub fn test_sister_difference(
    lineage: &Lineage,
    fit_constrained: &FitResult,
) -> Result<TestReport, TestError> {
    let (sigma2, rho) = noise_scale(fit_constrained)?;
    let mut diff_sum = 0.0;
    let mut n_tri = 0u64;
    for (i, _) in lineage.iter() {
        if let (Some(y), Some(z)) = (lineage.get(2 * i), lineage.get(2 * i + 1)) {
            diff_sum += y - z;
            n_tri += 1;
        }
    }
    if n_tri == 0 {
        return Err(TestError::DegenerateVariance(
            "no complete triangle observed".to_string(),
        ));
    }
    let statistic = diff_sum / (sigma2.sqrt() * (2.0 * n_tri as f64 * (1.0 - rho)).sqrt());
    Ok(TestReport {
        name: TestName::SisterDifference,
        statistic,
        dof: Dof::Normal,
        p_value: 2.0 * normal_survival(statistic.abs()),
        n_effective: n_tri,
    })
}
