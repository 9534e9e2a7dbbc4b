//! Size and power calibration of the asymmetry tests: rejection rates at
//! the plan's levels, uniformity of null p-values, and median statistics.

use super::{
    CalibrationSummary, DepthSummary, ExperimentError, ExperimentPlan, ExperimentReport, RepTable,
    TestCalibration, Verdict, WhichTest,
};
use crate::bar::{simulate_bar, BarParams, RootDist};
use crate::empirics::Lineage;
use crate::hypotest;
use crate::inference;
use crate::stats;
use rayon::prelude::*;

pub(super) fn run(plan: &ExperimentPlan) -> Result<ExperimentReport, ExperimentError> {
    let (params, root) = plan.model.bar_params()?;
    let spec = plan
        .calibration
        .as_ref()
        .ok_or_else(|| ExperimentError::Plan("calibration plans need a `calibration` section".into()))?;
    if spec.tests.is_empty() {
        return Err(ExperimentError::Plan("no tests selected".into()));
    }

    let mut report = ExperimentReport::new(plan);
    report.table = RepTable::new(&["depth", "replication", "test", "statistic", "p_value"]);

    for &depth in &plan.depths {
        let outcomes: Vec<Option<Vec<(f64, f64)>>> = plan
            .global_reps()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&k| one_replication(plan, &params, &root, &spec.tests, depth, k))
            .collect();
        let fit_failures = outcomes.iter().filter(|o| o.is_none()).count() as u32;
        for (k, outcome) in plan.global_reps().zip(&outcomes) {
            if let Some(results) = outcome {
                for (test, (stat, p)) in spec.tests.iter().zip(results) {
                    report.table.rows.push(vec![
                        depth.to_string(),
                        k.to_string(),
                        test.as_str().to_string(),
                        super::fmt(*stat),
                        super::fmt(*p),
                    ]);
                }
            }
        }

        let mut summaries = Vec::new();
        for (t, test) in spec.tests.iter().enumerate() {
            let stats_and_ps: Vec<(f64, f64)> = outcomes
                .iter()
                .flatten()
                .map(|results| results[t])
                .collect();
            if stats_and_ps.is_empty() {
                return Err(ExperimentError::Plan(format!(
                    "every fit failed at depth {depth}"
                )));
            }
            let statistics: Vec<f64> = stats_and_ps.iter().map(|v| v.0).collect();
            let p_values: Vec<f64> = stats_and_ps.iter().map(|v| v.1).collect();
            let n = p_values.len() as f64;
            let rejection_rates: Vec<(f64, f64)> = spec
                .levels
                .iter()
                .map(|&level| {
                    let rate = p_values.iter().filter(|&&p| p < level).count() as f64 / n;
                    (level, rate)
                })
                .collect();
            let uniform_ks_p = stats::ks_pvalue(
                p_values.len(),
                stats::ks_statistic(&p_values, stats::uniform_cdf),
            );
            let median_statistic = super::median(&statistics);

            let rate_at = |level: f64| {
                p_values.iter().filter(|&&p| p < level).count() as f64 / n
            };
            if spec.null_holds {
                report.verdicts.push(Verdict::within(
                    format!(
                        "size_within_band[{}, level={}, r={depth}]",
                        test.as_str(),
                        plan.tolerances.size_level
                    ),
                    rate_at(plan.tolerances.size_level),
                    plan.tolerances.size_low,
                    plan.tolerances.size_high,
                ));
                report.verdicts.push(Verdict::at_least(
                    format!("pvalues_uniform[{}, r={depth}]", test.as_str()),
                    uniform_ks_p,
                    plan.tolerances.uniform_ks_min_p,
                ));
            } else {
                report.verdicts.push(Verdict::at_least(
                    format!(
                        "power[{}, level={}, r={depth}]",
                        test.as_str(),
                        plan.tolerances.power_level
                    ),
                    rate_at(plan.tolerances.power_level),
                    plan.tolerances.power_min,
                ));
            }
            summaries.push(TestCalibration {
                test: test.as_str().to_string(),
                rejection_rates,
                uniform_ks_p,
                median_statistic,
            });
        }
        report
            .summaries
            .push(DepthSummary::Calibration(CalibrationSummary {
                depth,
                n_replications: plan.replications,
                fit_failures,
                tests: summaries,
            }));
    }
    Ok(report)
}

/// Simulate one tree and evaluate every requested test on it; `None` when
/// a fit or a test is degenerate (counted, not fatal).
fn one_replication(
    plan: &ExperimentPlan,
    params: &BarParams,
    root: &RootDist,
    tests: &[WhichTest],
    depth: u32,
    k: u32,
) -> Option<Vec<(f64, f64)>> {
    let sample = simulate_bar(params, root, depth, plan.seed_for(k, depth)).ok()?;
    let lineage = Lineage::from_sample(&sample);
    let needs_free = tests.iter().any(|t| !matches!(t, WhichTest::Sister));
    let needs_constrained = tests.iter().any(|t| matches!(t, WhichTest::Sister));
    let free_fit = if needs_free {
        Some(inference::fit(&lineage).ok()?)
    } else {
        None
    };
    let constrained_fit = if needs_constrained {
        Some(inference::fit_with_options(&lineage, true).ok()?)
    } else {
        None
    };
    let mut out = Vec::with_capacity(tests.len());
    for test in tests {
        let report = match test {
            WhichTest::EqualDynamics => {
                let fit = free_fit.as_ref()?;
                hypotest::test_equal_dynamics(fit, fit.counts.triangles).ok()?
            }
            WhichTest::EqualAlpha => {
                let fit = free_fit.as_ref()?;
                hypotest::test_equal_alpha(fit, fit.counts.triangles).ok()?
            }
            WhichTest::EqualBeta => {
                let fit = free_fit.as_ref()?;
                hypotest::test_equal_beta(fit, fit.counts.triangles).ok()?
            }
            WhichTest::EqualFixedPoint => {
                let fit = free_fit.as_ref()?;
                hypotest::test_equal_fixed_point(fit, fit.counts.triangles).ok()?
            }
            WhichTest::Sister => {
                let fit = constrained_fit.as_ref()?;
                hypotest::test_sister_difference(&lineage, fit).ok()?
            }
        };
        out.push((report.statistic, report.p_value));
    }
    Some(out)
}
