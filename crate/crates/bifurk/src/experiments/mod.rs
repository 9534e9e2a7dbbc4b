//! Monte Carlo certification harness.
//!
//! An [`ExperimentPlan`] (normally read from JSON) names a model, depths,
//! a replication count and a base seed; [`run`] dispatches on the
//! experiment kind and produces an [`ExperimentReport`] of per-depth
//! summaries plus pass/fail verdicts against the plan's declared
//! tolerances, and a flat per-replication table for external plotting.
//!
//! Replication `k` at depth `r` draws its seed from
//! `(base seed, offset + k, r)`, so replications are independent, runs
//! parallelize freely, and splitting a run across processes pools back
//! into the same numbers.

mod calibration;
mod clt;
mod lln;

use crate::bar::{BarError, BarParams, RootDist};
use crate::kernel::{FiniteKernel, KernelError};
use crate::rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Bar(#[from] BarError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Lln,
    Clt,
    Calibration,
}

/// Model under study.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ModelSpec {
    Bar {
        alpha0: f64,
        beta0: f64,
        alpha1: f64,
        beta1: f64,
        sigma2: f64,
        rho: f64,
        #[serde(default = "default_root")]
        root: RootDist,
    },
    Finite {
        /// One probability row per mother state over the k*k daughter pairs.
        table: Vec<Vec<f64>>,
        /// Root distribution over states.
        nu: Vec<f64>,
        /// Function values per state; defaults to the state index.
        #[serde(default)]
        f: Option<Vec<f64>>,
    },
}

fn default_root() -> RootDist {
    RootDist::Stationary
}

impl ModelSpec {
    pub(crate) fn bar_params(&self) -> Result<(BarParams, RootDist), ExperimentError> {
        match self {
            ModelSpec::Bar {
                alpha0,
                beta0,
                alpha1,
                beta1,
                sigma2,
                rho,
                root,
            } => {
                root.validate()?;
                Ok((
                    BarParams::new(*alpha0, *beta0, *alpha1, *beta1, *sigma2, *rho)?,
                    *root,
                ))
            }
            ModelSpec::Finite { .. } => Err(ExperimentError::Plan(
                "this experiment kind needs a BAR model".into(),
            )),
        }
    }

    pub(crate) fn finite_kernel(
        &self,
    ) -> Result<(FiniteKernel, Vec<f64>, Vec<f64>), ExperimentError> {
        match self {
            ModelSpec::Finite { table, nu, f } => {
                let kernel = FiniteKernel::from_table(table.clone())?;
                let f = f
                    .clone()
                    .unwrap_or_else(|| (0..kernel.n_states()).map(|s| s as f64).collect());
                if f.len() != kernel.n_states() {
                    return Err(ExperimentError::Plan(format!(
                        "functional has {} values for {} states",
                        f.len(),
                        kernel.n_states()
                    )));
                }
                Ok((kernel, nu.clone(), f))
            }
            ModelSpec::Bar { .. } => Err(ExperimentError::Plan(
                "this experiment kind needs a finite model".into(),
            )),
        }
    }
}

/// Pass/fail thresholds; plan files may override any of them.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Bias at the deepest level must stay within this many Monte Carlo
    /// standard errors.
    pub lln_bias_se_factor: f64,
    /// L2 error at the deepest level over L2 error at the shallowest.
    pub lln_l2_ratio: f64,
    /// Simulated generation second moments must match the exact engine
    /// within this many standard errors.
    pub exact_moment_se_factor: f64,
    /// Relative Frobenius error of the empirical covariance.
    pub clt_cov_frobenius: f64,
    /// KS level for marginal normality of standardized coordinates.
    pub clt_ks_level: f64,
    /// Relative error allowed on the functional CLT variance.
    pub clt_functional_var_rel: f64,
    /// Nominal level whose rejection rate is verdicted under nulls.
    pub size_level: f64,
    pub size_low: f64,
    pub size_high: f64,
    /// Minimum KS p-value of null p-values against Uniform[0, 1].
    pub uniform_ks_min_p: f64,
    /// Level at which power is measured under alternatives.
    pub power_level: f64,
    pub power_min: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            lln_bias_se_factor: 3.0,
            lln_l2_ratio: 0.5,
            exact_moment_se_factor: 4.0,
            clt_cov_frobenius: 0.15,
            clt_ks_level: 0.01,
            clt_functional_var_rel: 0.10,
            size_level: 0.05,
            size_low: 0.035,
            size_high: 0.065,
            uniform_ks_min_p: 0.01,
            power_level: 0.05,
            power_min: 0.99,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WhichTest {
    EqualDynamics,
    EqualAlpha,
    EqualBeta,
    EqualFixedPoint,
    Sister,
}

impl WhichTest {
    pub fn as_str(self) -> &'static str {
        match self {
            WhichTest::EqualDynamics => "equal-dynamics",
            WhichTest::EqualAlpha => "equal-alpha",
            WhichTest::EqualBeta => "equal-beta",
            WhichTest::EqualFixedPoint => "equal-fixed-point",
            WhichTest::Sister => "sister",
        }
    }
}

/// Calibration-specific plan section.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub tests: Vec<WhichTest>,
    /// Whether the model satisfies each test's null; selects size or
    /// power verdicts.
    pub null_holds: bool,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
}

fn default_levels() -> Vec<f64> {
    vec![0.01, 0.05, 0.10]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub kind: ExperimentKind,
    pub model: ModelSpec,
    pub depths: Vec<u32>,
    pub replications: u32,
    pub seed: u64,
    /// Global index of the first replication; lets two runs with disjoint
    /// ranges pool into one.
    #[serde(default)]
    pub replication_offset: u32,
    /// Named statistic: "x", "x^2" or "one" for LLN plans, "theta" or
    /// "y-z" for CLT plans. Defaults per kind.
    #[serde(default)]
    pub functional: Option<String>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub calibration: Option<CalibrationSpec>,
}

impl ExperimentPlan {
    fn validate(&self) -> Result<(), ExperimentError> {
        if self.replications == 0 {
            return Err(ExperimentError::Plan("replications must be >= 1".into()));
        }
        if self.depths.is_empty() {
            return Err(ExperimentError::Plan("depths must be non-empty".into()));
        }
        if self.depths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ExperimentError::Plan(
                "depths must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    /// Seed of replication `k` (global index) at depth `r`.
    pub(crate) fn seed_for(&self, k: u32, depth: u32) -> u64 {
        rng::derive_seed(self.seed, &[u64::from(k), u64::from(depth)])
    }

    pub(crate) fn global_reps(&self) -> std::ops::Range<u32> {
        self.replication_offset..self.replication_offset + self.replications
    }
}

/// One named pass/fail check.
#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub rule: String,
    pub pass: bool,
    pub observed: f64,
    pub requirement: String,
}

impl Verdict {
    pub(crate) fn at_most(rule: impl Into<String>, observed: f64, bound: f64) -> Self {
        Verdict {
            rule: rule.into(),
            pass: observed <= bound,
            observed,
            requirement: format!("<= {bound}"),
        }
    }

    pub(crate) fn at_least(rule: impl Into<String>, observed: f64, bound: f64) -> Self {
        Verdict {
            rule: rule.into(),
            pass: observed >= bound,
            observed,
            requirement: format!(">= {bound}"),
        }
    }

    pub(crate) fn within(rule: impl Into<String>, observed: f64, low: f64, high: f64) -> Self {
        Verdict {
            rule: rule.into(),
            pass: (low..=high).contains(&observed),
            observed,
            requirement: format!("in [{low}, {high}]"),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LlnSummary {
    pub depth: u32,
    pub n_replications: u32,
    pub mean: f64,
    pub std_dev: f64,
    pub mc_se: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abs_bias: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l2_error: Option<f64>,
    /// Finite models only: simulated vs exact second moment of the
    /// generation average at this depth.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gen_square_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gen_square_exact: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gen_square_se: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CltSummary {
    pub depth: u32,
    pub n_effective: u64,
    pub n_replications: u32,
    pub fit_failures: u32,
    pub covariance: [[f64; 4]; 4],
    pub target_covariance: [[f64; 4]; 4],
    pub frobenius_rel_error: f64,
    pub ks_distances: [f64; 4],
    pub ks_p_values: [f64; 4],
}

#[derive(Clone, Debug, Serialize)]
pub struct FunctionalSummary {
    pub depth: u32,
    pub n_replications: u32,
    pub variance: f64,
    pub target_variance: f64,
    pub rel_error: f64,
    pub ks_p_value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TestCalibration {
    pub test: String,
    /// `(level, rejection rate)` pairs.
    pub rejection_rates: Vec<(f64, f64)>,
    pub uniform_ks_p: f64,
    pub median_statistic: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CalibrationSummary {
    pub depth: u32,
    pub n_replications: u32,
    pub fit_failures: u32,
    pub tests: Vec<TestCalibration>,
}

#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
#[allow(clippy::large_enum_variant)]
pub enum DepthSummary {
    Lln(LlnSummary),
    Clt(CltSummary),
    Functional(FunctionalSummary),
    Calibration(CalibrationSummary),
}

/// Flat per-replication statistics, written as CSV for external plotting.
#[derive(Clone, Debug, Default)]
pub struct RepTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RepTable {
    pub(crate) fn new(header: &[&str]) -> Self {
        RepTable {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{}", self.header.join(","))?;
        for row in &self.rows {
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub replications: u32,
    pub replication_offset: u32,
    /// Harness-level observations, e.g. a non-ergodic induced chain.
    pub flags: Vec<String>,
    pub summaries: Vec<DepthSummary>,
    pub verdicts: Vec<Verdict>,
    #[serde(skip)]
    pub table: RepTable,
}

impl ExperimentReport {
    pub(crate) fn new(plan: &ExperimentPlan) -> Self {
        ExperimentReport {
            kind: plan.kind,
            seed: plan.seed,
            replications: plan.replications,
            replication_offset: plan.replication_offset,
            flags: Vec::new(),
            summaries: Vec::new(),
            verdicts: Vec::new(),
            table: RepTable::default(),
        }
    }

    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }
}

/// Run a plan on the harness thread pool (capped by `BIFURK_THREADS`).
pub fn run(plan: &ExperimentPlan) -> Result<ExperimentReport, ExperimentError> {
    plan.validate()?;
    let body = || match plan.kind {
        ExperimentKind::Lln => lln::run(plan),
        ExperimentKind::Clt => clt::run(plan),
        ExperimentKind::Calibration => calibration::run(plan),
    };
    match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| ExperimentError::Plan(format!("thread pool: {e}")))?
            .install(body),
        None => body(),
    }
}

fn thread_cap() -> Option<usize> {
    std::env::var("BIFURK_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0)
}

pub(crate) fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub(crate) fn fmt(x: f64) -> String {
    format!("{x}")
}
