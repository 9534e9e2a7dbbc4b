//! `bifurk` — simulate bifurcating autoregressive lineages, fit the model,
//! run asymmetry tests, and drive the Monte Carlo verification harness.
//!
//! Exit codes: 0 success, 2 usage error, 3 data or computation error. A
//! `test` run exits 0 whether or not the null is rejected; the decision
//! lives in the report.

use bifurk::experiments::{self, ExperimentPlan};
use bifurk::hypotest;
use bifurk::inference;
use bifurk::io::{self, FitReport, TestReportJson};
use clap::{Parser, Subcommand, ValueEnum};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "bifurk", version, about = "Bifurcating lineage simulation and inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a complete lineage and write it as CSV.
    Simulate {
        /// BAR parameter file (JSON).
        #[arg(long)]
        params: PathBuf,
        /// Number of generations below the root.
        #[arg(long)]
        depth: u32,
        /// Seed; runs are bit-reproducible, there is no wall-clock seeding.
        #[arg(long)]
        seed: u64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the model to a lineage and write a JSON report.
    Fit {
        /// Lineage CSV.
        #[arg(long)]
        data: PathBuf,
        /// Output JSON path.
        #[arg(long)]
        out: PathBuf,
        /// Pin both slopes to zero (memoryless submodel).
        #[arg(long)]
        constrain_alpha_zero: bool,
    },
    /// Run one asymmetry test and write a JSON report.
    Test {
        /// Lineage CSV.
        #[arg(long)]
        data: PathBuf,
        /// Which test to run.
        #[arg(long)]
        which: WhichTest,
        /// Output JSON path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a Monte Carlo verification plan.
    Verify {
        /// Experiment plan (JSON). The plan carries its own seed.
        #[arg(long)]
        plan: PathBuf,
        /// Output JSON report path.
        #[arg(long)]
        out: PathBuf,
        /// Per-replication CSV path; defaults to the report path with a
        /// `.csv` extension.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum WhichTest {
    EqualDynamics,
    EqualAlpha,
    EqualBeta,
    EqualFixedPoint,
    Sister,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("bifurk: {message}");
            ExitCode::from(3)
        }
    }
}

fn run(command: Command) -> Result<(), String> {
    match command {
        Command::Simulate {
            params,
            depth,
            seed,
            out,
        } => {
            let (bar_params, root) = io::read_params(&params).map_err(|e| e.to_string())?;
            let sample = bifurk::bar::simulate_bar(&bar_params, &root, depth, seed)
                .map_err(|e| e.to_string())?;
            let lineage = bifurk::Lineage::from_sample(&sample);
            io::write_lineage(&lineage, &out).map_err(|e| e.to_string())?;
            eprintln!(
                "simulated {} nodes to depth {depth} -> {}",
                lineage.len(),
                out.display()
            );
            Ok(())
        }
        Command::Fit {
            data,
            out,
            constrain_alpha_zero,
        } => {
            let lineage = io::read_lineage(&data).map_err(|e| e.to_string())?;
            let fit = inference::fit_with_options(&lineage, constrain_alpha_zero)
                .map_err(|e| e.to_string())?;
            io::write_report(&FitReport::from(&fit), &out).map_err(|e| e.to_string())?;
            let se = |j: usize| {
                (fit.sigma_prime_hat[(j, j)] / fit.counts.triangles as f64).sqrt()
            };
            eprintln!(
                "theta_hat = ({:.6}, {:.6}, {:.6}, {:.6}) +/- ({:.6}, {:.6}, {:.6}, {:.6})",
                fit.theta_hat.alpha0,
                fit.theta_hat.beta0,
                fit.theta_hat.alpha1,
                fit.theta_hat.beta1,
                se(0),
                se(1),
                se(2),
                se(3),
            );
            eprintln!(
                "sigma2_hat = {:.6}, rho_hat = {:.6}, gamma_hat = ({:.6}, {:.6})",
                fit.sigma2_hat, fit.rho_hat, fit.gamma_hat[0], fit.gamma_hat[1]
            );
            Ok(())
        }
        Command::Test { data, which, out } => {
            let lineage = io::read_lineage(&data).map_err(|e| e.to_string())?;
            let report = match which {
                WhichTest::Sister => {
                    let fit = inference::fit_with_options(&lineage, true)
                        .map_err(|e| e.to_string())?;
                    hypotest::test_sister_difference(&lineage, &fit).map_err(|e| e.to_string())?
                }
                _ => {
                    let fit = inference::fit(&lineage).map_err(|e| e.to_string())?;
                    let n = fit.counts.triangles;
                    match which {
                        WhichTest::EqualDynamics => hypotest::test_equal_dynamics(&fit, n),
                        WhichTest::EqualAlpha => hypotest::test_equal_alpha(&fit, n),
                        WhichTest::EqualBeta => hypotest::test_equal_beta(&fit, n),
                        WhichTest::EqualFixedPoint => hypotest::test_equal_fixed_point(&fit, n),
                        WhichTest::Sister => unreachable!(),
                    }
                    .map_err(|e| e.to_string())?
                }
            };
            io::write_report(&TestReportJson::from(&report), &out).map_err(|e| e.to_string())?;
            eprintln!(
                "{}: statistic = {:.6}, p = {:.6}",
                report.name.as_str(),
                report.statistic,
                report.p_value
            );
            Ok(())
        }
        Command::Verify { plan, out, csv } => {
            let file = File::open(&plan).map_err(|e| format!("{}: {e}", plan.display()))?;
            let plan: ExperimentPlan =
                serde_json::from_reader(BufReader::new(file)).map_err(|e| e.to_string())?;
            let report = experiments::run(&plan).map_err(|e| e.to_string())?;
            io::write_report(&report, &out).map_err(|e| e.to_string())?;
            let csv_path = csv.unwrap_or_else(|| default_csv_path(&out));
            let csv_file = File::create(&csv_path).map_err(|e| e.to_string())?;
            report
                .table
                .write_csv(std::io::BufWriter::new(csv_file))
                .map_err(|e| e.to_string())?;
            for v in &report.verdicts {
                eprintln!(
                    "[{}] {} observed {} (requirement {})",
                    if v.pass { "pass" } else { "FAIL" },
                    v.rule,
                    v.observed,
                    v.requirement
                );
            }
            for flag in &report.flags {
                eprintln!("[flag] {flag}");
            }
            eprintln!("report -> {}, rows -> {}", out.display(), csv_path.display());
            Ok(())
        }
    }
}

fn default_csv_path(out: &Path) -> PathBuf {
    out.with_extension("csv")
}
