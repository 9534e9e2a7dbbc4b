//! Central-limit-theorem runs: the empirical law of the scaled estimator
//! error against its asymptotic covariance, and the scalar functional CLT
//! for the sister difference.

use super::{
    CltSummary, DepthSummary, ExperimentError, ExperimentPlan, ExperimentReport,
    FunctionalSummary, RepTable, Verdict,
};
use crate::bar::{simulate_bar, BarParams, RootDist};
use crate::empirics::Lineage;
use crate::inference::{self, ThetaHat};
use crate::stats;
use crate::tree;
use rayon::prelude::*;

pub(super) fn run(plan: &ExperimentPlan) -> Result<ExperimentReport, ExperimentError> {
    let (params, root) = plan.model.bar_params()?;
    match plan.functional.as_deref().unwrap_or("theta") {
        "theta" => run_theta(plan, &params, &root),
        "y-z" => run_sister_functional(plan, &params, &root),
        other => Err(ExperimentError::Plan(format!(
            "unknown CLT functional {other:?} (expected \"theta\" or \"y-z\")"
        ))),
    }
}

fn run_theta(
    plan: &ExperimentPlan,
    params: &BarParams,
    root: &RootDist,
) -> Result<ExperimentReport, ExperimentError> {
    let truth = params.theta();
    let theta_true = ThetaHat {
        alpha0: truth[0],
        beta0: truth[1],
        alpha1: truth[2],
        beta1: truth[3],
    };
    let target = inference::asymptotic_covariance(&theta_true, params.sigma2(), params.rho());

    let mut report = ExperimentReport::new(plan);
    report.table = RepTable::new(&[
        "depth",
        "replication",
        "z_alpha0",
        "z_beta0",
        "z_alpha1",
        "z_beta1",
    ]);

    for &depth in &plan.depths {
        let draws: Vec<Option<[f64; 4]>> = plan
            .global_reps()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&k| {
                let sample = simulate_bar(params, root, depth, plan.seed_for(k, depth))
                    .expect("depth validated");
                let lineage = Lineage::from_sample(&sample);
                inference::fit(&lineage).ok().map(|fit| {
                    let scale = (fit.counts.triangles as f64).sqrt();
                    let est = fit.theta_hat.as_array();
                    [
                        scale * (est[0] - truth[0]),
                        scale * (est[1] - truth[1]),
                        scale * (est[2] - truth[2]),
                        scale * (est[3] - truth[3]),
                    ]
                })
            })
            .collect();
        let fit_failures = draws.iter().filter(|d| d.is_none()).count() as u32;
        let zs: Vec<[f64; 4]> = draws.iter().flatten().copied().collect();
        for (k, z) in plan.global_reps().zip(draws.iter()) {
            if let Some(z) = z {
                let mut row = vec![depth.to_string(), k.to_string()];
                row.extend(z.iter().map(|v| super::fmt(*v)));
                report.table.rows.push(row);
            }
        }
        if zs.len() < 2 {
            return Err(ExperimentError::Plan(format!(
                "all but {} fits failed at depth {depth}",
                zs.len()
            )));
        }

        let n_reps = zs.len() as f64;
        let mut mean = [0.0f64; 4];
        for z in &zs {
            for (m, v) in mean.iter_mut().zip(z) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n_reps;
        }
        let mut cov = [[0.0f64; 4]; 4];
        for z in &zs {
            for i in 0..4 {
                for j in 0..4 {
                    cov[i][j] += (z[i] - mean[i]) * (z[j] - mean[j]);
                }
            }
        }
        for row in &mut cov {
            for v in row.iter_mut() {
                *v /= n_reps - 1.0;
            }
        }

        let mut diff_sq = 0.0;
        let mut target_sq = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                diff_sq += (cov[i][j] - target[(i, j)]).powi(2);
                target_sq += target[(i, j)].powi(2);
            }
        }
        let frobenius_rel_error = (diff_sq / target_sq).sqrt();

        let mut ks_distances = [0.0f64; 4];
        let mut ks_p_values = [0.0f64; 4];
        for j in 0..4 {
            let sd = target[(j, j)].sqrt();
            let standardized: Vec<f64> = zs.iter().map(|z| z[j] / sd).collect();
            ks_distances[j] = stats::ks_statistic(&standardized, stats::std_normal_cdf);
            ks_p_values[j] = stats::ks_pvalue(standardized.len(), ks_distances[j]);
        }

        let mut target_rows = [[0.0f64; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                target_rows[i][j] = target[(i, j)];
            }
        }

        report.verdicts.push(Verdict::at_most(
            format!("clt_covariance_frobenius[r={depth}]"),
            frobenius_rel_error,
            plan.tolerances.clt_cov_frobenius,
        ));
        for (j, name) in ["alpha0", "beta0", "alpha1", "beta1"].iter().enumerate() {
            report.verdicts.push(Verdict::at_least(
                format!("clt_marginal_normal[{name}, r={depth}]"),
                ks_p_values[j],
                plan.tolerances.clt_ks_level,
            ));
        }
        report.summaries.push(DepthSummary::Clt(CltSummary {
            depth,
            n_effective: tree::subtree_size(depth.saturating_sub(1)).unwrap_or(0),
            n_replications: plan.replications,
            fit_failures,
            covariance: cov,
            target_covariance: target_rows,
            frobenius_rel_error,
            ks_distances,
            ks_p_values,
        }));
    }
    Ok(report)
}

/// Scalar CLT for the centered sister difference: per replication,
/// `sum of [(y - z) - ((a0 - a1) x + b0 - b1)] / sqrt(n_triangles)`,
/// whose limiting variance is `2 sigma2 (1 - rho)` whatever theta.
fn run_sister_functional(
    plan: &ExperimentPlan,
    params: &BarParams,
    root: &RootDist,
) -> Result<ExperimentReport, ExperimentError> {
    let d_alpha = params.alpha0() - params.alpha1();
    let d_beta = params.beta0() - params.beta1();
    let target_variance = 2.0 * params.sigma2() * (1.0 - params.rho());

    let mut report = ExperimentReport::new(plan);
    report.table = RepTable::new(&["depth", "replication", "scaled_sum"]);
    for &depth in &plan.depths {
        if depth == 0 {
            return Err(ExperimentError::Plan(
                "the sister functional needs depth >= 1".into(),
            ));
        }
        let draws: Vec<f64> = plan
            .global_reps()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&k| {
                let sample = simulate_bar(params, root, depth, plan.seed_for(k, depth))
                    .expect("depth validated");
                let n_tri = tree::subtree_size(depth - 1).expect("depth validated");
                let mut sum = 0.0;
                for i in 1..=n_tri {
                    let x = *sample.get(i);
                    let y = *sample.get(2 * i);
                    let z = *sample.get(2 * i + 1);
                    sum += (y - z) - (d_alpha * x + d_beta);
                }
                sum / (n_tri as f64).sqrt()
            })
            .collect();
        for (k, u) in plan.global_reps().zip(&draws) {
            report
                .table
                .rows
                .push(vec![depth.to_string(), k.to_string(), super::fmt(*u)]);
        }
        let (_, sd) = super::mean_and_sd(&draws);
        let variance = sd * sd;
        let rel_error = (variance - target_variance).abs() / target_variance;
        let standardized: Vec<f64> = draws.iter().map(|u| u / target_variance.sqrt()).collect();
        let ks_p = stats::ks_pvalue(
            standardized.len(),
            stats::ks_statistic(&standardized, stats::std_normal_cdf),
        );
        report.verdicts.push(Verdict::at_most(
            format!("clt_functional_variance[r={depth}]"),
            rel_error,
            plan.tolerances.clt_functional_var_rel,
        ));
        report.verdicts.push(Verdict::at_least(
            format!("clt_functional_normal[r={depth}]"),
            ks_p,
            plan.tolerances.clt_ks_level,
        ));
        report.summaries.push(DepthSummary::Functional(FunctionalSummary {
            depth,
            n_replications: plan.replications,
            variance,
            target_variance,
            rel_error,
            ks_p_value: ks_p,
        }));
    }
    Ok(report)
}
