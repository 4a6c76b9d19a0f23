//! Scenario generator and replication engine.
//!
//! Cohorts are generated retrospectively: control covariates from a
//! multivariate normal, incident-case covariates by importance resampling
//! under the exponential tilt, prevalent-case covariates by
//! truncation-acceptance (draw survival and a uniform backward time, keep
//! survivors), and uniform censoring applied to the forward time of
//! prevalent cases. Replications run in parallel with one random stream per
//! replication, so results do not depend on the worker count.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::data::{Cohort, Subject};
use crate::variance::EstimatorSpec;
use crate::{Error, Result};

/// Baseline hazard shapes available to the generator.
#[derive(Debug, Clone, PartialEq)]
pub enum Baseline {
    /// Constant hazard c (exponential survival).
    ConstantRate(f64),
    /// Piecewise-constant hazard: `values[i]` on `(breakpoints[i-1], breakpoints[i]]`
    /// (first piece starts at 0); the last value extends beyond the final
    /// breakpoint.
    StepFunction {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
    /// Weibull cumulative hazard (t / k2)^{k1}.
    Weibull { k1: f64, k2: f64 },
}

impl Baseline {
    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(msg.into()));
        match self {
            Baseline::ConstantRate(c) => {
                if !(c.is_finite() && *c > 0.0) {
                    return bad("constant baseline rate must be positive");
                }
            }
            Baseline::StepFunction {
                breakpoints,
                values,
            } => {
                if breakpoints.len() != values.len() || breakpoints.is_empty() {
                    return bad("step baseline needs matching breakpoints and values");
                }
                if breakpoints.windows(2).any(|w| w[1] <= w[0]) || breakpoints[0] <= 0.0 {
                    return bad("step breakpoints must be increasing and positive");
                }
                if values.iter().any(|v| !(v.is_finite() && *v >= 0.0))
                    || values.iter().all(|v| *v == 0.0)
                    || *values.last().unwrap() == 0.0
                {
                    return bad("step values must be nonnegative with a positive tail");
                }
            }
            Baseline::Weibull { k1, k2 } => {
                if !(k1.is_finite() && *k1 > 0.0 && k2.is_finite() && *k2 > 0.0) {
                    return bad("weibull baseline parameters must be positive");
                }
            }
        }
        Ok(())
    }

    /// Cumulative baseline hazard at `t`.
    pub fn cumulative(&self, t: f64) -> f64 {
        match self {
            Baseline::ConstantRate(c) => c * t,
            Baseline::StepFunction {
                breakpoints,
                values,
            } => {
                let mut acc = 0.0;
                let mut prev = 0.0;
                for (b, v) in breakpoints.iter().zip(values) {
                    if t <= *b {
                        return acc + v * (t - prev);
                    }
                    acc += v * (b - prev);
                    prev = *b;
                }
                acc + values.last().unwrap() * (t - prev)
            }
            Baseline::Weibull { k1, k2 } => (t / k2).powf(*k1),
        }
    }

    /// Inverse of the cumulative baseline hazard (piecewise-exact).
    pub fn inverse_cumulative(&self, u: f64) -> f64 {
        match self {
            Baseline::ConstantRate(c) => u / c,
            Baseline::StepFunction {
                breakpoints,
                values,
            } => {
                let mut acc = 0.0;
                let mut prev = 0.0;
                for (b, v) in breakpoints.iter().zip(values) {
                    let seg = v * (b - prev);
                    if acc + seg >= u {
                        if *v == 0.0 {
                            // no mass in this piece; jump to its end
                            prev = *b;
                            continue;
                        }
                        return prev + (u - acc) / v;
                    }
                    acc += seg;
                    prev = *b;
                }
                prev + (u - acc) / values.last().unwrap()
            }
            Baseline::Weibull { k1, k2 } => k2 * u.powf(1.0 / k1),
        }
    }

    /// Draw a survival time with relative risk `exp(lp)`.
    pub fn sample_survival(&self, rng: &mut impl Rng, lp: f64) -> f64 {
        // Lambda0(T) e^{lp} ~ Exp(1)
        let e: f64 = rand_distr::Exp1.sample(rng);
        self.inverse_cumulative(e * (-lp).exp())
    }
}

/// Scenario description for the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n0: usize,
    pub n1: usize,
    pub n2: usize,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub cov_mean: Vec<f64>,
    /// Row-major p x p covariate covariance.
    pub cov_cov: Vec<f64>,
    pub baseline: Baseline,
    /// Backward-time support: A ~ U[0, xi].
    pub xi: f64,
    pub tau_incident: f64,
    pub tau_prevalent: f64,
    /// Importance-sampling pool size multiplier for case covariates.
    pub oversample_factor: usize,
}

impl SimConfig {
    /// The benchmark scenario: n = 500 per group, beta = gamma = (1, -1),
    /// unit-rate exponential survival, xi = 30, 10% censoring taus.
    pub fn benchmark() -> SimConfig {
        SimConfig {
            n0: 500,
            n1: 500,
            n2: 500,
            beta: vec![1.0, -1.0],
            gamma: vec![1.0, -1.0],
            cov_mean: vec![0.0, 0.0],
            cov_cov: vec![1.0, 0.5, 0.5, 1.0],
            baseline: Baseline::ConstantRate(1.0),
            xi: 30.0,
            tau_incident: 5.0,
            tau_prevalent: 15.0,
            oversample_factor: 20,
        }
    }

    pub fn dim(&self) -> usize {
        self.cov_mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.dim();
        if self.beta.len() != p || self.gamma.len() != p || self.cov_cov.len() != p * p {
            return Err(Error::InvalidInput(
                "beta, gamma, cov_mean, cov_cov dimensions disagree".into(),
            ));
        }
        self.baseline.validate()?;
        if !(self.xi > 0.0 && self.tau_incident > 0.0 && self.tau_prevalent > 0.0) {
            return Err(Error::InvalidInput("xi and censoring bounds must be positive".into()));
        }
        if self.oversample_factor == 0 {
            return Err(Error::InvalidInput("oversample factor must be >= 1".into()));
        }
        self.cholesky()?;
        Ok(())
    }

    fn cholesky(&self) -> Result<DMatrix<f64>> {
        let p = self.dim();
        let m = DMatrix::from_row_slice(p, p, &self.cov_cov);
        if (&m - m.transpose()).amax() > 1e-12 {
            return Err(Error::InvalidInput("covariate covariance must be symmetric".into()));
        }
        m.cholesky()
            .map(|c| c.l())
            .ok_or_else(|| Error::InvalidInput("covariate covariance must be positive definite".into()))
    }
}

fn draw_mvn(rng: &mut impl Rng, mean: &[f64], chol_l: &DMatrix<f64>) -> Vec<f64> {
    let p = mean.len();
    let z: Vec<f64> = (0..p).map(|_| rand_distr::StandardNormal.sample(rng)).collect();
    (0..p)
        .map(|i| {
            let mut v = mean[i];
            for j in 0..=i {
                v += chol_l[(i, j)] * z[j];
            }
            v
        })
        .collect()
}

fn positive_uniform(rng: &mut impl Rng, upper: f64) -> f64 {
    loop {
        let v: f64 = rng.gen::<f64>() * upper;
        if v > 0.0 {
            return v;
        }
    }
}

/// Pool of tilted covariate draws: an empirical approximation of the
/// incident-case covariate distribution.
struct TiltedPool {
    xs: Vec<Vec<f64>>,
    index: WeightedIndex<f64>,
}

impl TiltedPool {
    fn new(rng: &mut impl Rng, cfg: &SimConfig, chol: &DMatrix<f64>, size: usize) -> Result<TiltedPool> {
        let mut xs = Vec::with_capacity(size);
        let mut weights = Vec::with_capacity(size);
        for _ in 0..size {
            let x = draw_mvn(rng, &cfg.cov_mean, chol);
            let lp: f64 = x.iter().zip(&cfg.beta).map(|(a, b)| a * b).sum();
            // common factor exp(max) is irrelevant to resampling weights
            weights.push(lp);
            xs.push(x);
        }
        let m = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = weights.iter().map(|w| (w - m).exp()).collect();
        let index = WeightedIndex::new(&weights)
            .map_err(|e| Error::InvalidInput(format!("importance weights: {e}")))?;
        Ok(TiltedPool { xs, index })
    }

    fn draw(&self, rng: &mut impl Rng) -> &[f64] {
        &self.xs[self.index.sample(rng)]
    }
}

/// Generate one cohort (controls, incident cases, prevalent cases, in that
/// order) from the scenario.
pub fn simulate_cohort(cfg: &SimConfig, seed: u64) -> Result<Cohort> {
    simulate_cohort_stream(cfg, seed, 0)
}

/// As [`simulate_cohort`] with an explicit ChaCha stream; replication `r` of
/// a study uses stream `r` of the study seed.
pub fn simulate_cohort_stream(cfg: &SimConfig, seed: u64, stream: u64) -> Result<Cohort> {
    cfg.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let chol = cfg.cholesky()?;
    let mut subjects = Vec::with_capacity(cfg.n0 + cfg.n1 + cfg.n2);

    for _ in 0..cfg.n0 {
        subjects.push(Subject::control(draw_mvn(&mut rng, &cfg.cov_mean, &chol)));
    }

    if cfg.n1 > 0 {
        let pool = TiltedPool::new(&mut rng, cfg, &chol, cfg.oversample_factor * cfg.n1)?;
        for _ in 0..cfg.n1 {
            let x = pool.draw(&mut rng).to_vec();
            let lp: f64 = x.iter().zip(&cfg.gamma).map(|(a, b)| a * b).sum();
            let t = cfg.baseline.sample_survival(&mut rng, lp);
            let c = positive_uniform(&mut rng, cfg.tau_incident);
            let (y, delta) = if t <= c { (t, true) } else { (c, false) };
            subjects.push(Subject::incident(x, y, delta));
        }
    }

    if cfg.n2 > 0 {
        let pool = TiltedPool::new(&mut rng, cfg, &chol, cfg.oversample_factor * cfg.n2)?;
        let min_rate = 1e-4;
        let max_attempts = ((cfg.n2 as f64 / min_rate) as usize).max(100_000);
        let mut accepted = 0usize;
        let mut attempts = 0usize;
        while accepted < cfg.n2 {
            attempts += 1;
            if attempts > max_attempts {
                return Err(Error::DegenerateTruncation { rate: min_rate });
            }
            let x = pool.draw(&mut rng).to_vec();
            let lp: f64 = x.iter().zip(&cfg.gamma).map(|(a, b)| a * b).sum();
            let t = cfg.baseline.sample_survival(&mut rng, lp);
            let a: f64 = rng.gen::<f64>() * cfg.xi;
            if t <= a {
                continue;
            }
            accepted += 1;
            let c = positive_uniform(&mut rng, cfg.tau_prevalent);
            let forward = t - a;
            let (y, delta) = if forward <= c {
                (a + forward, true)
            } else {
                (a + c, false)
            };
            subjects.push(Subject::prevalent(x, a, y, delta));
        }
    }

    Cohort::new(subjects)
}

/// Per-method aggregation of a replication study.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub parameter_names: Vec<String>,
    /// Mean estimate over successful replications.
    pub est: Vec<f64>,
    /// Empirical standard deviation; absent when fewer than two
    /// replications succeeded.
    pub sd: Option<Vec<f64>>,
    pub n_ok: usize,
    pub n_failed: usize,
    /// More than 10% of replications failed for this method.
    pub flagged: bool,
}

/// Replication-study output: estimates and empirical SDs per method.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub methods: Vec<MethodSummary>,
    pub replications: usize,
    pub seed: u64,
}

impl SummaryTable {
    /// Summary for a method by CLI name.
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }

    /// CSV rendering: method,parameter,est,sd,n_ok,n_failed.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,parameter,est,sd,n_ok,n_failed\n");
        for m in &self.methods {
            for (j, name) in m.parameter_names.iter().enumerate() {
                let sd = m
                    .sd
                    .as_ref()
                    .map(|s| format!("{}", s[j]))
                    .unwrap_or_default();
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    m.method, name, m.est[j], sd, m.n_ok, m.n_failed
                ));
            }
        }
        out
    }
}

impl fmt::Display for SummaryTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} replications (seed {})",
            self.replications, self.seed
        )?;
        for m in &self.methods {
            writeln!(
                f,
                "method {:<12} ok {:>4} failed {:>3}{}",
                m.method,
                m.n_ok,
                m.n_failed,
                if m.flagged { "  [flagged: >10% failures]" } else { "" }
            )?;
            write!(f, "  {:<8}", "")?;
            for name in &m.parameter_names {
                write!(f, "{name:>9}")?;
            }
            writeln!(f)?;
            write!(f, "  {:<8}", "Est")?;
            for v in &m.est {
                write!(f, "{v:>9.4}")?;
            }
            writeln!(f)?;
            if let Some(sd) = &m.sd {
                write!(f, "  {:<8}", "SD")?;
                for v in sd {
                    write!(f, "{v:>9.4}")?;
                }
                writeln!(f)?;
            }
        }
        Ok(())
    }
}

/// Run `reps` replications of the scenario, fitting every method on every
/// simulated cohort.
///
/// Deterministic given (cfg, methods, reps, seed), whatever `workers` is:
/// replication r draws from stream r of the seed, and aggregation runs in
/// replication order.
pub fn run_study(
    cfg: &SimConfig,
    methods: &[EstimatorSpec],
    reps: usize,
    seed: u64,
    workers: Option<usize>,
) -> Result<SummaryTable> {
    if reps == 0 {
        return Err(Error::InvalidInput("reps must be >= 1".into()));
    }
    cfg.validate()?;
    let run = || -> Result<Vec<Vec<Option<Vec<f64>>>>> {
        (0..reps)
            .into_par_iter()
            .map(|r| {
                let cohort = simulate_cohort_stream(cfg, seed, r as u64)?;
                Ok(methods
                    .iter()
                    .map(|m| m.fit(&cohort).ok())
                    .collect::<Vec<Option<Vec<f64>>>>())
            })
            .collect()
    };
    let per_rep: Vec<Vec<Option<Vec<f64>>>> = match workers {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }?;

    let mut methods_out = Vec::with_capacity(methods.len());
    for (mi, spec) in methods.iter().enumerate() {
        let fits: Vec<&Vec<f64>> = per_rep.iter().filter_map(|r| r[mi].as_ref()).collect();
        let n_ok = fits.len();
        let n_failed = reps - n_ok;
        let names = spec.parameter_names(cfg.dim());
        let dim = names.len();
        let mut est = vec![0.0; dim];
        if n_ok > 0 {
            for fit in &fits {
                for j in 0..dim {
                    est[j] += fit[j] / n_ok as f64;
                }
            }
        }
        let sd = if n_ok >= 2 && reps > 1 {
            let mut var = vec![0.0; dim];
            for fit in &fits {
                for j in 0..dim {
                    var[j] += (fit[j] - est[j]).powi(2) / (n_ok as f64 - 1.0);
                }
            }
            Some(var.iter().map(|v| v.sqrt()).collect())
        } else {
            None
        };
        methods_out.push(MethodSummary {
            method: spec.name().to_string(),
            parameter_names: names,
            est,
            sd,
            n_ok,
            n_failed,
            flagged: n_failed * 10 > reps,
        });
    }
    Ok(SummaryTable {
        methods: methods_out,
        replications: reps,
        seed,
    })
}

/// Find censoring bounds (tau_incident, tau_prevalent) giving the target
/// censoring fraction in each case group, by bisection against large
/// Monte Carlo draws of the survival and forward times.
pub fn calibrate_censoring(
    cfg: &SimConfig,
    target: f64,
    seed: u64,
    draws: usize,
) -> Result<(f64, f64)> {
    if !(0.0..1.0).contains(&target) || target == 0.0 {
        return Err(Error::InvalidInput("target censoring must be in (0, 1)".into()));
    }
    cfg.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX); // keep clear of replication streams
    let chol = cfg.cholesky()?;
    let pool = TiltedPool::new(&mut rng, cfg, &chol, (cfg.oversample_factor * draws).max(1000))?;

    let mut t_incident = Vec::with_capacity(draws);
    for _ in 0..draws {
        let x = pool.draw(&mut rng);
        let lp: f64 = x.iter().zip(&cfg.gamma).map(|(a, b)| a * b).sum();
        t_incident.push(cfg.baseline.sample_survival(&mut rng, lp));
    }
    let mut fwd_prevalent = Vec::with_capacity(draws);
    let max_attempts = draws * 10_000;
    let mut attempts = 0;
    while fwd_prevalent.len() < draws {
        attempts += 1;
        if attempts > max_attempts {
            return Err(Error::DegenerateTruncation { rate: 1e-4 });
        }
        let x = pool.draw(&mut rng);
        let lp: f64 = x.iter().zip(&cfg.gamma).map(|(a, b)| a * b).sum();
        let t = cfg.baseline.sample_survival(&mut rng, lp);
        let a: f64 = rng.gen::<f64>() * cfg.xi;
        if t > a {
            fwd_prevalent.push(t - a);
        }
    }

    let censored_frac = |ts: &[f64], tau: f64| -> f64 {
        ts.iter().map(|t| (t / tau).min(1.0)).sum::<f64>() / ts.len() as f64
    };
    let bisect = |ts: &[f64]| -> f64 {
        let (mut lo, mut hi) = (1e-12f64, 1e12f64);
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            // censoring decreases as tau grows
            if censored_frac(ts, mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo * hi).sqrt()
    };
    Ok((bisect(&t_incident), bisect(&fwd_prevalent)))
}

// ---------------------------------------------------------------------------
// Plain-text key=value scenario files
// ---------------------------------------------------------------------------

fn fmt_vec(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_vec(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("bad number {t:?} in config")))
        })
        .collect()
}

/// Serialize a scenario as `key = value` lines.
pub fn write_config(cfg: &SimConfig) -> String {
    let baseline = match &cfg.baseline {
        Baseline::ConstantRate(c) => format!("constant {c}"),
        Baseline::StepFunction {
            breakpoints,
            values,
        } => format!("step {} : {}", fmt_vec(breakpoints), fmt_vec(values)),
        Baseline::Weibull { k1, k2 } => format!("weibull {k1} {k2}"),
    };
    format!(
        "n0 = {}\nn1 = {}\nn2 = {}\nbeta = {}\ngamma = {}\ncov_mean = {}\ncov_cov = {}\nbaseline = {}\nxi = {}\ntau_incident = {}\ntau_prevalent = {}\noversample_factor = {}\n",
        cfg.n0,
        cfg.n1,
        cfg.n2,
        fmt_vec(&cfg.beta),
        fmt_vec(&cfg.gamma),
        fmt_vec(&cfg.cov_mean),
        fmt_vec(&cfg.cov_cov),
        baseline,
        cfg.xi,
        cfg.tau_incident,
        cfg.tau_prevalent,
        cfg.oversample_factor
    )
}

/// Parse a scenario from the `key = value` format of [`write_config`].
/// `#` starts a comment; unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<SimConfig> {
    let mut map: BTreeMap<String, String> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            row: lineno + 1,
            msg: format!("expected key = value, found {line:?}"),
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    let mut take = |key: &str| -> Result<String> {
        map.remove(key)
            .ok_or_else(|| Error::InvalidInput(format!("config is missing {key:?}")))
    };
    let parse_usize = |s: String, key: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::InvalidInput(format!("bad integer for {key:?}: {s:?}")))
    };
    let parse_f64 = |s: String, key: &str| -> Result<f64> {
        s.parse()
            .map_err(|_| Error::InvalidInput(format!("bad number for {key:?}: {s:?}")))
    };

    let n0 = parse_usize(take("n0")?, "n0")?;
    let n1 = parse_usize(take("n1")?, "n1")?;
    let n2 = parse_usize(take("n2")?, "n2")?;
    let beta = parse_vec(&take("beta")?)?;
    let gamma = parse_vec(&take("gamma")?)?;
    let cov_mean = parse_vec(&take("cov_mean")?)?;
    let cov_cov = parse_vec(&take("cov_cov")?)?;
    let baseline_text = take("baseline")?;
    let xi = parse_f64(take("xi")?, "xi")?;
    let tau_incident = parse_f64(take("tau_incident")?, "tau_incident")?;
    let tau_prevalent = parse_f64(take("tau_prevalent")?, "tau_prevalent")?;
    let oversample_factor = parse_usize(take("oversample_factor")?, "oversample_factor")?;
    if let Some(key) = map.keys().next() {
        return Err(Error::InvalidInput(format!("unknown config key {key:?}")));
    }

    let baseline = {
        let mut parts = baseline_text.split_whitespace();
        match parts.next() {
            Some("constant") => {
                let c = parse_f64(parts.collect::<Vec<_>>().join(" "), "baseline")?;
                Baseline::ConstantRate(c)
            }
            Some("weibull") => {
                let rest: Vec<&str> = parts.collect();
                if rest.len() != 2 {
                    return Err(Error::InvalidInput("weibull baseline needs k1 k2".into()));
                }
                Baseline::Weibull {
                    k1: parse_f64(rest[0].to_string(), "k1")?,
                    k2: parse_f64(rest[1].to_string(), "k2")?,
                }
            }
            Some("step") => {
                let rest: String = parts.collect::<Vec<_>>().join(" ");
                let (bp, vals) = rest.split_once(':').ok_or_else(|| {
                    Error::InvalidInput("step baseline: breakpoints : values".into())
                })?;
                Baseline::StepFunction {
                    breakpoints: parse_vec(bp)?,
                    values: parse_vec(vals)?,
                }
            }
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown baseline kind {other:?}"
                )))
            }
        }
    };

    let cfg = SimConfig {
        n0,
        n1,
        n2,
        beta,
        gamma,
        cov_mean,
        cov_cov,
        baseline,
        xi,
        tau_incident,
        tau_prevalent,
        oversample_factor,
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Group;

    #[test]
    fn config_round_trip() {
        let mut cfg = SimConfig::benchmark();
        cfg.baseline = Baseline::StepFunction {
            breakpoints: vec![7.0, 14.0, 21.0, 30.0],
            values: vec![1e-4, 1e-5, 2e-4, 0.5e-4],
        };
        let text = write_config(&cfg);
        let parsed = parse_config(&text).unwrap();
        assert_eq!(cfg, parsed);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let mut text = write_config(&SimConfig::benchmark());
        text.push_str("bogus = 1\n");
        assert!(parse_config(&text).is_err());
    }

    #[test]
    fn step_baseline_cumulative_and_inverse_agree() {
        let b = Baseline::StepFunction {
            breakpoints: vec![1.0, 3.0, 5.0],
            values: vec![0.5, 0.0, 2.0],
        };
        for &t in &[0.2, 0.9, 1.5, 3.2, 4.9, 7.0] {
            let u = b.cumulative(t);
            if u > 0.0 {
                let back = b.inverse_cumulative(u);
                assert!(b.cumulative(back) - u < 1e-12);
            }
        }
        // inverse lands beyond the dead zone
        assert!((b.inverse_cumulative(0.5 + 1e-9) - 3.0) < 1e-6);
    }

    #[test]
    fn cohort_layout_and_determinism() {
        let mut cfg = SimConfig::benchmark();
        cfg.n0 = 40;
        cfg.n1 = 30;
        cfg.n2 = 20;
        let c1 = simulate_cohort(&cfg, 11).unwrap();
        let c2 = simulate_cohort(&cfg, 11).unwrap();
        assert_eq!(c1, c2);
        assert_eq!((c1.n0(), c1.n1(), c1.n2()), (40, 30, 20));
        // groups appear in block order
        let groups: Vec<Group> = c1.subjects().iter().map(|s| s.group).collect();
        assert!(groups[..40].iter().all(|g| *g == Group::Control));
        assert!(groups[40..70].iter().all(|g| *g == Group::Incident));
        assert!(groups[70..].iter().all(|g| *g == Group::Prevalent));
        // different streams give different data
        let c3 = simulate_cohort_stream(&cfg, 11, 1).unwrap();
        assert_ne!(c1, c3);
    }

    #[test]
    fn null_tilt_matches_control_distribution() {
        let mut cfg = SimConfig::benchmark();
        cfg.beta = vec![0.0, 0.0];
        cfg.n0 = 10_000;
        cfg.n1 = 10_000;
        cfg.n2 = 0;
        let cohort = simulate_cohort(&cfg, 5).unwrap();
        let mean_of = |group: Group, coord: usize| -> f64 {
            let vals: Vec<f64> = cohort
                .subjects()
                .iter()
                .filter(|s| s.group == group)
                .map(|s| s.x[coord])
                .collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        for coord in 0..2 {
            let d = mean_of(Group::Control, coord) - mean_of(Group::Incident, coord);
            assert!(d.abs() < 0.05, "coordinate {coord} differs by {d}");
        }
    }

    #[test]
    fn survival_sampler_matches_exponential_cdf() {
        // Kolmogorov-Smirnov against 1 - exp(-e^{lp} t) at fixed lp
        let b = Baseline::ConstantRate(1.0);
        let lp = 0.7;
        let n = 10_000;
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut draws: Vec<f64> = (0..n).map(|_| b.sample_survival(&mut rng, lp)).collect();
        draws.sort_by(|a, b| a.total_cmp(b));
        let rate = lp.exp();
        let mut ks = 0.0f64;
        for (i, t) in draws.iter().enumerate() {
            let cdf = 1.0 - (-rate * t).exp();
            let emp_hi = (i + 1) as f64 / n as f64;
            let emp_lo = i as f64 / n as f64;
            ks = ks.max((cdf - emp_lo).abs()).max((emp_hi - cdf).abs());
        }
        assert!(ks < 1.36 / (n as f64).sqrt(), "KS statistic {ks}");
    }

    #[test]
    fn run_study_is_deterministic_across_workers() {
        let mut cfg = SimConfig::benchmark();
        cfg.n0 = 60;
        cfg.n1 = 60;
        cfg.n2 = 40;
        let methods = vec![EstimatorSpec::TwoStepCox(crate::tilt::TwoStepOptions {
            sandwich: false,
            ..Default::default()
        })];
        let t1 = run_study(&cfg, &methods, 4, 21, Some(1)).unwrap();
        let t2 = run_study(&cfg, &methods, 4, 21, Some(3)).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn single_replication_has_no_sd() {
        let mut cfg = SimConfig::benchmark();
        cfg.n0 = 50;
        cfg.n1 = 50;
        cfg.n2 = 30;
        let methods = vec![EstimatorSpec::TwoStepCox(crate::tilt::TwoStepOptions {
            sandwich: false,
            ..Default::default()
        })];
        let t = run_study(&cfg, &methods, 1, 9, None).unwrap();
        assert!(t.methods[0].sd.is_none());
        assert_eq!(t.methods[0].n_ok, 1);
    }
}
