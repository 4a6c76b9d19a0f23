//! Command-line front end: simulate cohorts, fit estimators, bootstrap, and
//! replicate the bundled benchmark tables.
//!
//! Exit codes: 0 success, 2 input/validation error, 3 numerical failure.

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use prevcc::cox::XiRule;
use prevcc::data::{load_cohort, save_cohort, Cohort, CsvSchema};
use prevcc::sim;
use prevcc::tilt::{ParametricOptions, TwoStepOptions};
use prevcc::variance::{bootstrap_cov, EstimatorSpec};
use prevcc::Error;

mod tables;

#[derive(Parser)]
#[command(
    name = "prevcc",
    about = "Log-odds-ratio estimation for case-control studies with incident and prevalent cases",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    #[value(name = "two-step-em")]
    TwoStepEm,
    #[value(name = "two-step-cox")]
    TwoStepCox,
    Joint,
    Ipcc,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum XiHatRule {
    #[value(name = "tk")]
    Tk,
    #[value(name = "prevalent-max")]
    PrevalentMax,
}

impl From<XiHatRule> for XiRule {
    fn from(rule: XiHatRule) -> XiRule {
        match rule {
            XiHatRule::Tk => XiRule::LastEvent,
            XiHatRule::PrevalentMax => XiRule::PrevalentMax,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TableId {
    T1,
    T3,
    T6,
    T7,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a cohort CSV from a scenario config file.
    Simulate {
        /// Scenario file (key = value lines).
        #[arg(long)]
        config: PathBuf,
        /// Output cohort CSV path.
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit one estimator on a cohort CSV.
    Fit {
        /// Cohort CSV (columns: group, a, y, delta, covariates).
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        /// Backward-time support window for the parametric estimators.
        #[arg(long, default_value_t = 30.0)]
        xi: f64,
        /// Support-bound rule for the semi-parametric estimators.
        #[arg(long, value_enum, default_value = "tk")]
        xi_hat_rule: XiHatRule,
        /// Write the JSON result here as well as to stdout.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Bootstrap an estimator on a cohort CSV (stratified resampling).
    Bootstrap {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        /// Number of bootstrap resamples.
        #[arg(long, default_value_t = 500)]
        b: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value_t = 30.0)]
        xi: f64,
        #[arg(long, value_enum, default_value = "tk")]
        xi_hat_rule: XiHatRule,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Replicate a bundled benchmark table and compare with its reference
    /// values.
    ReplicateTable {
        #[arg(long, value_enum)]
        table: TableId,
        /// Target censoring fraction (0.10, 0.50, or 0.90).
        #[arg(long, default_value_t = 0.10)]
        censoring: f64,
        #[arg(long, default_value_t = 200)]
        reps: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        workers: Option<usize>,
        /// Write the summary as CSV here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn workers_or_env(workers: Option<usize>) -> Option<usize> {
    workers.or_else(|| {
        std::env::var("PREVCC_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    })
}

fn build_spec(method: Method, xi: f64, xi_rule: XiRule, sandwich: bool) -> EstimatorSpec {
    let two_step = TwoStepOptions {
        xi_rule,
        sandwich,
        ..TwoStepOptions::default()
    };
    let parametric = ParametricOptions {
        xi,
        compute_cov: sandwich,
        ..ParametricOptions::default()
    };
    match method {
        Method::TwoStepEm => EstimatorSpec::TwoStepEm(two_step),
        Method::TwoStepCox => EstimatorSpec::TwoStepCox(two_step),
        Method::Joint => EstimatorSpec::Joint(parametric),
        Method::Ipcc => EstimatorSpec::Ipcc(parametric),
    }
}

#[derive(Serialize)]
struct FitRecord {
    method: &'static str,
    parameter: String,
    estimate: f64,
    /// Analytic SD where available: sandwich for two-step-cox, inverse
    /// observed information for joint/ipcc.
    sd: Option<f64>,
}

fn load(input: &PathBuf) -> Result<Cohort, Error> {
    load_cohort(input, &CsvSchema::default())
}

fn run_fit(
    input: PathBuf,
    method: Method,
    xi: f64,
    xi_rule: XiRule,
    output: Option<PathBuf>,
) -> Result<(), Error> {
    let cohort = load(&input)?;
    let records = fit_records(&cohort, method, xi, xi_rule)?;
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r).expect("serializable record"));
        text.push('\n');
    }
    print!("{text}");
    if let Some(path) = &output {
        fs::write(path, &text).map_err(Error::Io)?;
    }
    // human-readable one-line summary on stderr keeps stdout machine-parsable
    let summary: Vec<String> = records
        .iter()
        .map(|r| format!("{}={:.4}", r.parameter, r.estimate))
        .collect();
    eprintln!("fitted {}: {}", records[0].method, summary.join(" "));
    Ok(())
}

fn fit_records(
    cohort: &Cohort,
    method: Method,
    xi: f64,
    xi_rule: XiRule,
) -> Result<Vec<FitRecord>, Error> {
    let spec = build_spec(method, xi, xi_rule, true);
    let names = spec.parameter_names(cohort.dim());
    let (estimates, sds) = match &spec {
        EstimatorSpec::TwoStepEm(opts) | EstimatorSpec::TwoStepCox(opts) => {
            let kind = match method {
                Method::TwoStepEm => prevcc::tilt::SurvivalMethod::Em,
                _ => prevcc::tilt::SurvivalMethod::Cox,
            };
            let fit = prevcc::tilt::fit_two_step(cohort, kind, opts)?;
            let mut est = fit.parameters();
            est.extend_from_slice(&fit.survival.gamma);
            let sd = fit.cov.as_ref().map(|cov| {
                let mut v: Vec<Option<f64>> = (0..cov.nrows())
                    .map(|j| Some(cov[(j, j)].sqrt()))
                    .collect();
                v.resize(est.len(), None); // step-1 gamma: bootstrap only
                v
            });
            (est, sd)
        }
        EstimatorSpec::Joint(opts) => {
            let fit = prevcc::tilt::fit_joint(cohort, opts)?;
            let est = fit.parameters();
            (est.clone(), joint_sds(&fit, est.len()))
        }
        EstimatorSpec::Ipcc(opts) => {
            let fit = prevcc::tilt::fit_ipcc(cohort, opts)?;
            let est = fit.parameters();
            (est.clone(), joint_sds(&fit, est.len()))
        }
    };
    Ok(names
        .into_iter()
        .zip(estimates)
        .enumerate()
        .map(|(j, (parameter, estimate))| FitRecord {
            method: spec.name(),
            parameter,
            estimate,
            sd: sds.as_ref().and_then(|v| v[j]),
        })
        .collect())
}

fn joint_sds(fit: &prevcc::tilt::JointFit, len: usize) -> Option<Vec<Option<f64>>> {
    fit.cov.as_ref().map(|cov| {
        // covariance is in (alpha, nu, beta, gamma, log k1, log k2); map the
        // log-kappa variances to the kappa scale by the delta method
        let mut v: Vec<Option<f64>> = Vec::with_capacity(len);
        let dim = cov.nrows();
        for j in 0..dim {
            let var = cov[(j, j)];
            if j == dim - 2 {
                v.push(Some((var.sqrt()) * fit.k1));
            } else if j == dim - 1 {
                v.push(Some((var.sqrt()) * fit.k2));
            } else {
                v.push(Some(var.sqrt()));
            }
        }
        v.resize(len, None);
        v
    })
}

fn real_main() -> Result<(), Error> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate {
            config,
            output,
            seed,
        } => {
            let text = fs::read_to_string(&config)?;
            let cfg = sim::parse_config(&text)?;
            let cohort = sim::simulate_cohort(&cfg, seed)?;
            save_cohort(&cohort, &output, b',')?;
            eprintln!(
                "wrote {} subjects ({} controls, {} incident, {} prevalent) to {}",
                cohort.len(),
                cohort.n0(),
                cohort.n1(),
                cohort.n2(),
                output.display()
            );
            Ok(())
        }
        Command::Fit {
            input,
            method,
            xi,
            xi_hat_rule,
            output,
        } => run_fit(input, method, xi, xi_hat_rule.into(), output),
        Command::Bootstrap {
            input,
            method,
            b,
            seed,
            workers,
            xi,
            xi_hat_rule,
            output,
        } => {
            let cohort = load(&input)?;
            let spec = build_spec(method, xi, xi_hat_rule.into(), false);
            let workers = workers_or_env(workers);
            let run = || bootstrap_cov(&cohort, &spec, b, seed);
            let result = match workers {
                Some(k) => rayon_pool(k)?.install(run),
                None => run(),
            }?;
            let names = spec.parameter_names(cohort.dim());
            let mut text = String::new();
            for (j, name) in names.iter().enumerate() {
                let rec = serde_json::json!({
                    "method": spec.name(),
                    "parameter": name,
                    "estimate": result.point[j],
                    "sd": result.sd[j],
                    "normal_ci": [result.normal_ci[j].0, result.normal_ci[j].1],
                    "percentile_ci": [result.percentile_ci[j].0, result.percentile_ci[j].1],
                    "replicates": result.replicates,
                    "failures": result.failures,
                });
                text.push_str(&rec.to_string());
                text.push('\n');
            }
            print!("{text}");
            if let Some(path) = &output {
                fs::write(path, &text).map_err(Error::Io)?;
            }
            eprintln!(
                "bootstrap ({} of {} resamples succeeded)",
                result.replicates,
                result.replicates + result.failures
            );
            Ok(())
        }
        Command::ReplicateTable {
            table,
            censoring,
            reps,
            seed,
            workers,
            output,
        } => {
            let workers = workers_or_env(workers);
            let report = tables::replicate(table.into(), censoring, reps, seed, workers)?;
            print!("{}", report.text);
            if let Some(path) = &output {
                fs::write(path, &report.csv).map_err(Error::Io)?;
            }
            Ok(())
        }
    }
}

fn rayon_pool(k: usize) -> Result<rayon::ThreadPool, Error> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(k.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let _ = writeln!(std::io::stderr(), "error: {err}");
            if err.is_numerical() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

impl From<TableId> for tables::Table {
    fn from(t: TableId) -> tables::Table {
        match t {
            TableId::T1 => tables::Table::T1,
            TableId::T3 => tables::Table::T3,
            TableId::T6 => tables::Table::T6,
            TableId::T7 => tables::Table::T7,
        }
    }
}
