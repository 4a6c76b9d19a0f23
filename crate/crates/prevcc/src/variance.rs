//! Plug-in (sandwich) covariance for the two-step estimator and stratified
//! bootstrap for every estimator.
//!
//! The two-step point estimate treats the fitted survival model as known;
//! its variance therefore needs the influence of each case on the step-1
//! estimates, propagated through mu into the step-2 score. Influences are
//! the infinitesimal-jackknife (dfbeta) kind: the sum over cases
//! approximates the estimation error, and leave-one-out refit differences
//! are the matching oracle.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::cox::{CaseData, CoxFit, CoxMethod};
use crate::data::{Cohort, Group, Subject};
use crate::tilt::{
    self, fit_ipcc, fit_joint, fit_two_step, ParametricOptions, SurvivalMethod, TiltFit,
    TwoStepOptions,
};
use crate::{Error, Result};

/// Per-case influences on the step-1 Cox fit.
#[derive(Debug, Clone)]
pub struct InfluenceSet {
    /// dfbeta rows, one per case (cohort case order): the approximate change
    /// in gamma-hat from deleting the case, negated; summing over cases
    /// approximates the estimation error.
    pub d_gamma: Vec<Vec<f64>>,
    /// Influence step functions on the cumulative baseline hazard,
    /// row-major n_cases x k: entry (i, j) is the influence of case i on
    /// Lambda-hat at grid time j.
    pub d_lambda_cum: Vec<f64>,
    /// Observed partial-likelihood information at gamma-hat.
    pub info: DMatrix<f64>,
    pub n_cases: usize,
    pub k: usize,
}

impl InfluenceSet {
    pub fn d_lambda_row(&self, i: usize) -> &[f64] {
        &self.d_lambda_cum[i * self.k..(i + 1) * self.k]
    }
}

/// Empirical influence contributions of each case on (gamma-hat, Lambda-hat)
/// for a converged partial-likelihood fit.
pub fn influence_contributions(cohort: &Cohort, fit: &CoxFit) -> Result<InfluenceSet> {
    if fit.method != CoxMethod::PartialLikelihood {
        return Err(Error::InvalidInput(
            "influence formulas are derived for the partial-likelihood fit".into(),
        ));
    }
    if !fit.converged {
        return Err(Error::InvalidInput("influences need a converged fit".into()));
    }
    let data = CaseData::from_cohort(cohort);
    let grid = &fit.grid;
    let k = grid.len();
    let p = data.p;
    let times = grid.times();
    let e: Vec<f64> = data
        .linear_predictors(&fit.gamma)
        .iter()
        .map(|lp| crate::numeric::exp_clamped(*lp))
        .collect();

    // Risk sums S0, S1 and the information at gamma-hat.
    let mut s0 = vec![0.0; k];
    let mut s1 = vec![0.0; k * p];
    let mut info = DMatrix::zeros(p, p);
    {
        let mut order_exit: Vec<usize> = (0..data.n).collect();
        order_exit.sort_by(|&i, &j| data.exit[j].total_cmp(&data.exit[i]));
        let mut order_entry: Vec<usize> = (0..data.n).collect();
        order_entry.sort_by(|&i, &j| data.entry[j].total_cmp(&data.entry[i]));
        let mut acc0 = 0.0;
        let mut acc1 = vec![0.0; p];
        let mut acc2 = vec![0.0; p * p];
        let (mut ix, mut iy) = (0usize, 0usize);
        let mut s2 = vec![0.0; k * p * p];
        for j in (0..k).rev() {
            let t = times[j];
            while ix < data.n && data.exit[order_exit[ix]] >= t {
                let i = order_exit[ix];
                let row = data.row(i);
                acc0 += e[i];
                for a in 0..p {
                    acc1[a] += e[i] * row[a];
                    for b in 0..p {
                        acc2[a * p + b] += e[i] * row[a] * row[b];
                    }
                }
                ix += 1;
            }
            while iy < data.n && data.entry[order_entry[iy]] >= t {
                let i = order_entry[iy];
                let row = data.row(i);
                acc0 -= e[i];
                for a in 0..p {
                    acc1[a] -= e[i] * row[a];
                    for b in 0..p {
                        acc2[a * p + b] -= e[i] * row[a] * row[b];
                    }
                }
                iy += 1;
            }
            if acc0 <= 0.0 {
                return Err(Error::EmptyRiskSet { time: t });
            }
            s0[j] = acc0;
            s1[j * p..(j + 1) * p].copy_from_slice(&acc1);
            s2[j * p * p..(j + 1) * p * p].copy_from_slice(&acc2);
        }
        for j in 0..k {
            let dj = grid.multiplicities()[j] as f64;
            for a in 0..p {
                let ea = s1[j * p + a] / s0[j];
                for b in 0..p {
                    let eb = s1[j * p + b] / s0[j];
                    info[(a, b)] += dj * (s2[(j * p + a) * p + b] / s0[j] - ea * eb);
                }
            }
        }
    }

    let chol = info.clone().cholesky().ok_or(Error::SingularHessian {
        context: "partial-likelihood information matrix",
    })?;

    // prefix sums of d_j/S0_j and Ebar_j d_j/S0_j over the grid
    let mut pref_q = vec![0.0; k + 1];
    let mut pref_qe = vec![0.0; (k + 1) * p];
    for j in 0..k {
        let q = grid.multiplicities()[j] as f64 / s0[j];
        pref_q[j + 1] = pref_q[j] + q;
        for a in 0..p {
            pref_qe[(j + 1) * p + a] = pref_qe[j * p + a] + q * s1[j * p + a] / s0[j];
        }
    }
    // at-risk grid window (lo..hi] per case: indices with entry < t_j <= exit
    let window = |i: usize| -> (usize, usize) {
        let lo = times.partition_point(|t| *t <= data.entry[i]);
        let hi = times.partition_point(|t| *t <= data.exit[i]);
        (lo, hi)
    };

    let mut d_gamma = Vec::with_capacity(data.n);
    for i in 0..data.n {
        let row = data.row(i);
        let mut resid = DVector::zeros(p);
        if data.event[i] {
            let j = grid.index_of(data.exit[i]).expect("event on grid");
            for a in 0..p {
                resid[a] += row[a] - s1[j * p + a] / s0[j];
            }
        }
        let (lo, hi) = window(i);
        let dq = pref_q[hi] - pref_q[lo];
        for a in 0..p {
            let dqe = pref_qe[hi * p + a] - pref_qe[lo * p + a];
            resid[a] -= e[i] * (row[a] * dq - dqe);
        }
        d_gamma.push(chol.solve(&resid).as_slice().to_vec());
    }

    // baseline-hazard influences, accumulated to the cumulative scale
    let mut d_lambda_cum = vec![0.0; data.n * k];
    for i in 0..data.n {
        let (lo, hi) = window(i);
        let dg = &d_gamma[i];
        let event_j = if data.event[i] {
            grid.index_of(data.exit[i])
        } else {
            None
        };
        let mut acc = 0.0;
        for j in 0..k {
            let lambda_j = fit.lambda[j];
            let mut jump = 0.0;
            if event_j == Some(j) {
                jump += 1.0 / s0[j];
            }
            if j >= lo && j < hi {
                jump -= lambda_j * e[i] / s0[j];
            }
            let mut s1_dg = 0.0;
            for a in 0..p {
                s1_dg += s1[j * p + a] * dg[a];
            }
            jump -= lambda_j * s1_dg / s0[j];
            acc += jump;
            d_lambda_cum[i * k + j] = acc;
        }
    }

    Ok(InfluenceSet {
        d_gamma,
        d_lambda_cum,
        info,
        n_cases: data.n,
        k,
    })
}

/// Output of [`sandwich_cov`].
#[derive(Debug, Clone)]
pub struct SandwichCov {
    /// Covariance of (alpha, nu, beta), active coordinates only; inactive
    /// rows/columns are zero.
    pub cov: DMatrix<f64>,
    /// True when the step-1 fit was the EM: the influence formulas cover the
    /// partial-likelihood fit, so the result is an approximation.
    pub approximate: bool,
}

/// Sandwich covariance V^-1 Sigma V^-1 / N for a two-step fit.
///
/// Sigma is the empirical covariance of the per-subject step-2 score plus the
/// mu-propagation correction; the correction uses the same grid and
/// telescoping rule as the implemented mu, so the chain rule is exact.
pub fn sandwich_cov(cohort: &Cohort, tilt_fit: &TiltFit, infl: &InfluenceSet) -> Result<SandwichCov> {
    let p = cohort.dim();
    let dim = p + 2;
    let n_total = cohort.len();
    let fit = &tilt_fit.survival;
    let theta = {
        let mut t = vec![tilt_fit.alpha, tilt_fit.nu];
        t.extend_from_slice(&tilt_fit.beta);
        // pin inactive intercepts to a very negative finite value
        t.iter()
            .map(|v| if v.is_finite() { *v } else { -7.0e2 })
            .collect::<Vec<f64>>()
    };
    let mu = tilt::mu_all(cohort, fit);
    let u = tilt::pseudo_score_contributions(&theta, cohort, &mu);
    let g_mu = tilt::dscore_dmu(&theta, cohort, &mu);

    let times = fit.grid.times();
    let k = fit.grid.len();
    if infl.k != k {
        return Err(Error::InvalidInput("influences do not match the survival fit".into()));
    }
    let cum = fit.cumulative_lambda();

    // H(q) = -sum_i e_i W_i(q) g_i and M_B = -sum_i e_i mtilde_i g_i x_i'
    // with W_i(q) the mu-cell mass above grid index q and mtilde the
    // Lambda-weighted cell mass.
    let mut h_q = vec![0.0; k * dim];
    let mut m_b: DMatrix<f64> = DMatrix::zeros(dim, p);
    {
        // per subject: cells l = 1..k with width (t_l ^ xi - t_{l-1}),
        // survival exp(-Lambda_{l-1} e_i)
        let mut w_cell = vec![0.0; k];
        for (s, gmi) in cohort.subjects().iter().zip(&g_mu) {
            let lp: f64 = s.x.iter().zip(&fit.gamma).map(|(a, b)| a * b).sum();
            let e_i = crate::numeric::exp_clamped(lp);
            let mut t_prev = 0.0;
            let mut cum_prev = 0.0;
            let mut mtilde = 0.0;
            for l in 0..k {
                w_cell[l] = 0.0;
                if t_prev <= fit.xi_hat {
                    let width = times[l].min(fit.xi_hat) - t_prev;
                    if width > 0.0 {
                        let arg = cum_prev * e_i;
                        if arg <= 745.0 {
                            let w = width * (-arg).exp();
                            w_cell[l] = w;
                            mtilde += w * cum_prev;
                        }
                    }
                }
                t_prev = times[l];
                cum_prev = cum[l];
            }
            // W_i(q) = sum_{l >= q+1} w_cell[l]
            let mut tail = 0.0;
            for q in (0..k).rev() {
                if q + 1 < k {
                    tail += w_cell[q + 1];
                } else {
                    tail = 0.0;
                }
                if q + 1 <= k {
                    // accumulate H(q) -= e_i W_i(q) g_i
                    if tail != 0.0 {
                        for r in 0..dim {
                            h_q[q * dim + r] -= e_i * tail * gmi[r];
                        }
                    }
                }
            }
            if mtilde != 0.0 {
                for r in 0..dim {
                    for c in 0..p {
                        m_b[(r, c)] -= e_i * mtilde * gmi[r] * s.x[c];
                    }
                }
            }
        }
    }

    // assemble psi_i = u_i (+ correction for cases) and Sigma-hat
    let mut sigma = DMatrix::zeros(dim, dim);
    let mut case_ix = 0usize;
    let mut psi = DVector::zeros(dim);
    for (i, s) in cohort.subjects().iter().enumerate() {
        for r in 0..dim {
            psi[r] = u[i][r];
        }
        if s.is_case() {
            let dg = &infl.d_gamma[case_ix];
            let row = infl.d_lambda_row(case_ix);
            // jumps from the cumulative influence
            let mut prev = 0.0;
            for q in 0..k {
                let jump = row[q] - prev;
                prev = row[q];
                if jump != 0.0 {
                    for r in 0..dim {
                        psi[r] += h_q[q * dim + r] * jump;
                    }
                }
            }
            for r in 0..dim {
                let mut acc = 0.0f64;
                for c in 0..p {
                    acc += m_b[(r, c)] * dg[c];
                }
                psi[r] += acc;
            }
            case_ix += 1;
        }
        for r in 0..dim {
            for c in 0..=r {
                sigma[(r, c)] += psi[r] * psi[c];
            }
        }
    }
    for r in 0..dim {
        for c in (r + 1)..dim {
            sigma[(r, c)] = sigma[(c, r)];
        }
    }
    sigma /= n_total as f64;

    let (_, _, hess) = tilt::pseudo_parts(&theta, cohort, &mu, true)?;
    let v_hat = -hess / n_total as f64;

    // restrict to active coordinates before inverting
    let alpha_active = cohort.n1() > 0;
    let nu_active = cohort.n2() > 0;
    let active: Vec<usize> = (0..dim)
        .filter(|&j| (j != 0 || alpha_active) && (j != 1 || nu_active))
        .collect();
    let m = active.len();
    let mut v_a = DMatrix::zeros(m, m);
    let mut s_a = DMatrix::zeros(m, m);
    for (ai, &i) in active.iter().enumerate() {
        for (aj, &j) in active.iter().enumerate() {
            v_a[(ai, aj)] = v_hat[(i, j)];
            s_a[(ai, aj)] = sigma[(i, j)];
        }
    }
    let v_inv = v_a.try_inverse().ok_or(Error::SingularHessian {
        context: "pseudo-likelihood hessian in sandwich",
    })?;
    let cov_a = (&v_inv * s_a * &v_inv) / n_total as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    for (ai, &i) in active.iter().enumerate() {
        for (aj, &j) in active.iter().enumerate() {
            cov[(i, j)] = 0.5 * (cov_a[(ai, aj)] + cov_a[(aj, ai)]);
        }
    }
    Ok(SandwichCov {
        cov,
        approximate: tilt_fit.source == SurvivalMethod::Em,
    })
}

// ---------------------------------------------------------------------------
// Stratified bootstrap
// ---------------------------------------------------------------------------

/// Estimator selector for [`bootstrap_cov`] and the replication harness.
#[derive(Debug, Clone)]
pub enum EstimatorSpec {
    TwoStepEm(TwoStepOptions),
    TwoStepCox(TwoStepOptions),
    Joint(ParametricOptions),
    Ipcc(ParametricOptions),
}

impl EstimatorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorSpec::TwoStepEm(_) => "two-step-em",
            EstimatorSpec::TwoStepCox(_) => "two-step-cox",
            EstimatorSpec::Joint(_) => "joint",
            EstimatorSpec::Ipcc(_) => "ipcc",
        }
    }

    /// Parameter labels in the order produced by [`EstimatorSpec::fit`].
    pub fn parameter_names(&self, p: usize) -> Vec<String> {
        let mut names = vec!["alpha".to_string(), "nu".to_string()];
        for j in 1..=p {
            names.push(format!("beta{j}"));
        }
        match self {
            EstimatorSpec::TwoStepEm(_) | EstimatorSpec::TwoStepCox(_) => {
                for j in 1..=p {
                    names.push(format!("gamma{j}"));
                }
            }
            EstimatorSpec::Joint(_) | EstimatorSpec::Ipcc(_) => {
                for j in 1..=p {
                    names.push(format!("gamma{j}"));
                }
                names.push("k1".to_string());
                names.push("k2".to_string());
            }
        }
        names
    }

    /// Fit the estimator and return its parameter vector: two-step fits
    /// report (alpha, nu, beta, gamma), parametric fits append (k1, k2).
    pub fn fit(&self, cohort: &Cohort) -> Result<Vec<f64>> {
        match self {
            EstimatorSpec::TwoStepEm(opts) => {
                let fit = fit_two_step(cohort, SurvivalMethod::Em, opts)?;
                let mut v = fit.parameters();
                v.extend_from_slice(&fit.survival.gamma);
                Ok(v)
            }
            EstimatorSpec::TwoStepCox(opts) => {
                let fit = fit_two_step(cohort, SurvivalMethod::Cox, opts)?;
                let mut v = fit.parameters();
                v.extend_from_slice(&fit.survival.gamma);
                Ok(v)
            }
            EstimatorSpec::Joint(opts) => Ok(fit_joint(cohort, opts)?.parameters()),
            EstimatorSpec::Ipcc(opts) => Ok(fit_ipcc(cohort, opts)?.parameters()),
        }
    }

    /// Same estimator with per-fit covariance computation switched off
    /// (bootstrap replicates only need point estimates).
    fn without_cov(&self) -> EstimatorSpec {
        match self {
            EstimatorSpec::TwoStepEm(o) => {
                let mut o = o.clone();
                o.sandwich = false;
                EstimatorSpec::TwoStepEm(o)
            }
            EstimatorSpec::TwoStepCox(o) => {
                let mut o = o.clone();
                o.sandwich = false;
                EstimatorSpec::TwoStepCox(o)
            }
            EstimatorSpec::Joint(o) => {
                let mut o = o.clone();
                o.compute_cov = false;
                EstimatorSpec::Joint(o)
            }
            EstimatorSpec::Ipcc(o) => {
                let mut o = o.clone();
                o.compute_cov = false;
                EstimatorSpec::Ipcc(o)
            }
        }
    }
}

/// Bootstrap summary: covariance, standard deviations, and 95% intervals.
#[derive(Debug, Clone)]
pub struct BootstrapResult {
    pub point: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub sd: Vec<f64>,
    /// point +/- 1.96 sd
    pub normal_ci: Vec<(f64, f64)>,
    /// 2.5% / 97.5% quantiles of the bootstrap distribution
    pub percentile_ci: Vec<(f64, f64)>,
    pub replicates: usize,
    pub failures: usize,
}

fn stratified_indices(cohort: &Cohort) -> [Vec<usize>; 3] {
    let mut by_group: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (i, s) in cohort.subjects().iter().enumerate() {
        by_group[match s.group {
            Group::Control => 0,
            Group::Incident => 1,
            Group::Prevalent => 2,
        }]
        .push(i);
    }
    by_group
}

/// One stratified resample: controls, incident, and prevalent cases drawn
/// with replacement within their groups, sizes fixed.
pub fn resample_stratified(cohort: &Cohort, rng: &mut impl Rng) -> Cohort {
    let by_group = stratified_indices(cohort);
    let mut subjects: Vec<Subject> = Vec::with_capacity(cohort.len());
    for group in &by_group {
        for _ in 0..group.len() {
            let pick = group[rng.gen_range(0..group.len())];
            subjects.push(cohort.subjects()[pick].clone());
        }
    }
    Cohort::new(subjects).expect("resample of a valid cohort is valid")
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    // linear interpolation between order statistics
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Stratified bootstrap covariance of an estimator.
///
/// Replicate `b` draws from an independent random stream derived from
/// `(seed, b)`, so results are identical for any parallelism. Failed
/// resample fits are excluded and counted.
pub fn bootstrap_cov(
    cohort: &Cohort,
    spec: &EstimatorSpec,
    b_reps: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    if b_reps < 2 {
        return Err(Error::InvalidInput("bootstrap needs B >= 2".into()));
    }
    let point = spec.fit(cohort)?;
    let quiet = spec.without_cov();
    let draws: Vec<Option<Vec<f64>>> = (0..b_reps)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(b as u64 + 1);
            let resample = resample_stratified(cohort, &mut rng);
            quiet.fit(&resample).ok()
        })
        .collect();

    let ok: Vec<&Vec<f64>> = draws.iter().flatten().collect();
    let failures = b_reps - ok.len();
    if failures * 5 > b_reps {
        return Err(Error::BootstrapUnstable {
            failures,
            total: b_reps,
        });
    }
    let dim = point.len();
    let m = ok.len() as f64;
    let mut mean = vec![0.0; dim];
    for rep in &ok {
        for j in 0..dim {
            mean[j] += rep[j] / m;
        }
    }
    let mut cov: DMatrix<f64> = DMatrix::zeros(dim, dim);
    for rep in &ok {
        for r in 0..dim {
            for c in 0..=r {
                cov[(r, c)] += (rep[r] - mean[r]) * (rep[c] - mean[c]) / (m - 1.0);
            }
        }
    }
    for r in 0..dim {
        for c in (r + 1)..dim {
            cov[(r, c)] = cov[(c, r)];
        }
    }
    let sd: Vec<f64> = (0..dim).map(|j| cov[(j, j)].sqrt()).collect();
    const Z975: f64 = 1.959963984540054;
    let normal_ci: Vec<(f64, f64)> = point
        .iter()
        .zip(&sd)
        .map(|(est, s)| (est - Z975 * s, est + Z975 * s))
        .collect();
    let percentile_ci: Vec<(f64, f64)> = (0..dim)
        .map(|j| {
            let mut col: Vec<f64> = ok.iter().map(|rep| rep[j]).collect();
            col.sort_by(|a, b| a.total_cmp(b));
            (quantile(&col, 0.025), quantile(&col, 0.975))
        })
        .collect();
    Ok(BootstrapResult {
        point,
        cov,
        sd,
        normal_ci,
        percentile_ci,
        replicates: ok.len(),
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cox::{fit_cox_lt, CoxOptions};
    use approx::assert_relative_eq;

    fn seeded_cohort(n: usize, seed: u64) -> Cohort {
        let mut subjects = Vec::new();
        let mut state = seed;
        let mut unif = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for i in 0..n {
            let x = vec![unif() * 2.0 - 1.0, unif() * 2.0 - 1.0];
            subjects.push(match i % 3 {
                0 => Subject::control(x),
                1 => Subject::incident(x, 0.2 + unif() * 3.0, unif() < 0.8),
                _ => {
                    let a = unif() * 1.2;
                    Subject::prevalent(x, a, a + 0.05 + unif() * 2.0, unif() < 0.7)
                }
            });
        }
        Cohort::new(subjects).unwrap()
    }

    #[test]
    fn influences_sum_to_zero() {
        let cohort = seeded_cohort(45, 9);
        let fit = fit_cox_lt(&cohort, &CoxOptions::default()).unwrap();
        let infl = influence_contributions(&cohort, &fit).unwrap();
        for a in 0..2 {
            let total: f64 = infl.d_gamma.iter().map(|d| d[a]).sum();
            assert!(total.abs() < 1e-8, "component {a} sums to {total}");
        }
        // cumulative baseline influences also sum to ~0 at every grid time
        for j in 0..infl.k {
            let total: f64 = (0..infl.n_cases).map(|i| infl.d_lambda_row(i)[j]).sum();
            assert!(total.abs() < 1e-8, "Lambda influence at {j} sums to {total}");
        }
    }

    #[test]
    fn single_subject_baseline_influence_is_zero() {
        // one incident subject with x = 0 and an event at t = 1: the
        // estimator equals its own plug-in, so the centered influence is 0
        let cohort = Cohort::new(vec![
            Subject::control(vec![0.0]),
            Subject::incident(vec![0.0], 1.0, true),
        ])
        .unwrap();
        let fit = fit_cox_lt(&cohort, &CoxOptions::default()).unwrap();
        let infl = influence_contributions(&cohort, &fit).unwrap();
        assert_eq!(infl.n_cases, 1);
        assert_relative_eq!(infl.d_lambda_row(0)[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn dfbeta_matches_leave_one_out_refits() {
        let cohort = seeded_cohort(60, 31);
        let fit = fit_cox_lt(&cohort, &CoxOptions::default()).unwrap();
        let infl = influence_contributions(&cohort, &fit).unwrap();
        let scale = infl
            .d_gamma
            .iter()
            .flat_map(|d| d.iter().map(|v| v.abs()))
            .fold(0.0f64, f64::max);
        let case_indices: Vec<usize> = cohort
            .subjects()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_case())
            .map(|(i, _)| i)
            .collect();
        for (ci, &subject_ix) in case_indices.iter().enumerate() {
            let mut subjects = cohort.subjects().to_vec();
            subjects.remove(subject_ix);
            let reduced = Cohort::new(subjects).unwrap();
            let refit = match fit_cox_lt(&reduced, &CoxOptions::default()) {
                Ok(f) => f,
                Err(_) => continue,
            };
            for a in 0..2 {
                let loo = fit.gamma[a] - refit.gamma[a];
                assert!(
                    (infl.d_gamma[ci][a] - loo).abs() <= 0.05 * scale.max(loo.abs()),
                    "case {ci} coord {a}: dfbeta {} vs loo {}",
                    infl.d_gamma[ci][a],
                    loo
                );
            }
        }
    }

    #[test]
    fn bootstrap_is_deterministic_and_stratified() {
        let cohort = seeded_cohort(36, 4);
        let spec = EstimatorSpec::TwoStepCox(TwoStepOptions {
            sandwich: false,
            ..TwoStepOptions::default()
        });
        let r1 = bootstrap_cov(&cohort, &spec, 8, 99).unwrap();
        let r2 = bootstrap_cov(&cohort, &spec, 8, 99).unwrap();
        assert_eq!(r1.point, r2.point);
        assert_eq!(r1.sd, r2.sd);
        assert_eq!(r1.percentile_ci, r2.percentile_ci);
        // group sizes preserved in resamples
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let rs = resample_stratified(&cohort, &mut rng);
        assert_eq!(rs.n0(), cohort.n0());
        assert_eq!(rs.n1(), cohort.n1());
        assert_eq!(rs.n2(), cohort.n2());
    }

    #[test]
    fn sandwich_is_symmetric_psd_and_reorder_invariant() {
        let cohort = seeded_cohort(90, 17);
        let fit = fit_two_step(&cohort, SurvivalMethod::Cox, &TwoStepOptions::default()).unwrap();
        let cov = fit.cov.clone().unwrap();
        let eig = nalgebra::SymmetricEigen::new(cov.clone());
        assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-12));
        // reorder subjects: covariance unchanged
        let mut subjects = cohort.subjects().to_vec();
        subjects.rotate_left(7);
        subjects.swap(0, 5);
        let shuffled = Cohort::new(subjects).unwrap();
        let fit2 = fit_two_step(&shuffled, SurvivalMethod::Cox, &TwoStepOptions::default()).unwrap();
        let cov2 = fit2.cov.unwrap();
        for r in 0..cov.nrows() {
            for c in 0..cov.ncols() {
                assert_relative_eq!(cov[(r, c)], cov2[(r, c)], epsilon = 1e-9);
            }
        }
    }
}
