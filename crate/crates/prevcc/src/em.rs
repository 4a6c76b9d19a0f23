//! EM estimation of the Cox model from left-truncated, right-censored cases.
//!
//! Each observed prevalent case stands in for a geometric number of
//! unobserved cases that were truncated away (their survival ended before
//! sampling). The E-step distributes that missing event mass over the
//! observed event grid; the M-step is a weighted Breslow fit on the
//! augmented data, with closed-form baseline-hazard updates. Unlike the
//! partial likelihood, this uses the uniform backward-time distribution and
//! is fully efficient.

use crate::cox::{
    fit_cox_lt, BreslowEngine, CaseData, CoxFit, CoxMethod, CoxOptions, EventGrid, XiRule,
};
use crate::data::Cohort;
use crate::numeric::{exp_clamped, KahanSum};
use crate::{Error, Result};

/// Options for [`fit_cox_em`].
#[derive(Debug, Clone)]
pub struct EmOptions {
    /// Convergence: max of the parameter max-norm change and the
    /// observed-data log-likelihood change must fall below this.
    pub tol: f64,
    pub max_iter: usize,
    pub xi_rule: XiRule,
    /// Abort when the observed-data log-likelihood drops by more than this.
    pub ascent_tol: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            tol: 1e-7,
            max_iter: 500,
            xi_rule: XiRule::LastEvent,
            ascent_tol: 1e-10,
        }
    }
}

fn inner_newton_options() -> CoxOptions {
    CoxOptions {
        tol: 1e-9,
        max_iter: 50,
        gamma_bound: 30.0,
        xi_rule: XiRule::LastEvent,
    }
}

/// E-step weights over cases (rows) and the event grid (columns).
///
/// Incident rows are identically zero; for prevalent rows, `tw[i][j]` is the
/// expected number of truncated counterparts of case `i` with survival time
/// at grid point `j`.
#[derive(Debug, Clone)]
pub struct EStepWeights {
    pub tw: Vec<f64>,
    pub omega: Vec<f64>,
    pub upsilon: Vec<f64>,
    pub n: usize,
    pub k: usize,
    pub grid: EventGrid,
    pub xi_hat: f64,
}

impl EStepWeights {
    pub fn tw_row(&self, i: usize) -> &[f64] {
        &self.tw[i * self.k..(i + 1) * self.k]
    }

    pub fn omega_row(&self, i: usize) -> &[f64] {
        &self.omega[i * self.k..(i + 1) * self.k]
    }
}

/// Fill one prevalent row of omega / tw; returns upsilon for that row.
///
/// omega_j = lambda_j e^xg exp(-Lambda_j e^xg); upsilon = sum_j min(t_j, xi) omega_j;
/// tw_j = (xi / upsilon) (1 - t_j / xi)_+ omega_j.
#[inline]
fn estep_row(
    times: &[f64],
    lambda: &[f64],
    exg: f64,
    xi_hat: f64,
    omega_out: &mut [f64],
    tw_out: &mut [f64],
) -> f64 {
    let k = times.len();
    let mut cum = 0.0;
    let mut upsilon = 0.0;
    for j in 0..k {
        cum += lambda[j];
        let arg = cum * exg;
        let w = if arg > 745.0 {
            0.0
        } else {
            lambda[j] * exg * (-arg).exp()
        };
        omega_out[j] = w;
        upsilon += times[j].min(xi_hat) * w;
    }
    if upsilon <= 0.0 {
        return 0.0;
    }
    let scale = xi_hat / upsilon;
    for j in 0..k {
        let frac = (1.0 - times[j] / xi_hat).max(0.0);
        tw_out[j] = scale * frac * omega_out[j];
    }
    upsilon
}

/// Compute E-step weights for the cases of `cohort` at the current fit.
pub fn e_step(fit: &CoxFit, cohort: &Cohort) -> Result<EStepWeights> {
    let data = CaseData::from_cohort(cohort);
    e_step_data(&data, &fit.grid, &fit.gamma, &fit.lambda, fit.xi_hat)
}

fn e_step_data(
    data: &CaseData,
    grid: &EventGrid,
    gamma: &[f64],
    lambda: &[f64],
    xi_hat: f64,
) -> Result<EStepWeights> {
    let k = grid.len();
    let n = data.n;
    let mut tw = vec![0.0; n * k];
    let mut omega = vec![0.0; n * k];
    let mut upsilon = vec![0.0; n];
    let lp = data.linear_predictors(gamma);
    for i in 0..n {
        if !data.prevalent[i] {
            continue;
        }
        let u = estep_row(
            grid.times(),
            lambda,
            exp_clamped(lp[i]),
            xi_hat,
            &mut omega[i * k..(i + 1) * k],
            &mut tw[i * k..(i + 1) * k],
        );
        if u <= 0.0 {
            return Err(Error::DegenerateEStep { index: i });
        }
        upsilon[i] = u;
    }
    Ok(EStepWeights {
        tw,
        omega,
        upsilon,
        n,
        k,
        grid: grid.clone(),
        xi_hat,
    })
}

/// One M-step: maximize the expected complete-data log-likelihood.
///
/// Returns the updated log-hazard ratios and baseline jumps. The hazard
/// update is the closed form
/// `lambda_j = sum_i (tw_ij r_i + dN_i(t_j)) / sum_i (I(y_i >= t_j) + r_i sum_{l>=j} tw_il) e^{x_i gamma}`.
pub fn m_step(
    weights: &EStepWeights,
    cohort: &Cohort,
    gamma_init: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let data = CaseData::from_cohort(cohort);
    let (gamma, lambda, _) = m_step_data(&data, &weights.grid, &weights.tw, gamma_init)?;
    Ok((gamma, lambda))
}

fn m_step_data(
    data: &CaseData,
    grid: &EventGrid,
    tw: &[f64],
    gamma_init: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let engine = BreslowEngine::em_m_step(data, grid, tw);
    let outcome = engine.newton(gamma_init, &inner_newton_options())?;
    let lambda = engine.baseline_jumps(&outcome.gamma)?;
    Ok((outcome.gamma, lambda, outcome.gradient_norm))
}

/// Expected complete-data log-likelihood Q at (gamma, lambda) given weights.
pub fn q_value(weights: &EStepWeights, cohort: &Cohort, gamma: &[f64], lambda: &[f64]) -> f64 {
    let data = CaseData::from_cohort(cohort);
    let grid = &weights.grid;
    let k = grid.len();
    let times = grid.times();
    let cum: Vec<f64> = lambda
        .iter()
        .scan(0.0, |acc, l| {
            *acc += l;
            Some(*acc)
        })
        .collect();
    let lp = data.linear_predictors(gamma);
    let mut q = KahanSum::new();
    for i in 0..data.n {
        let e = exp_clamped(lp[i]);
        // own event / exposure terms, hazard accumulated up to y_i
        let mut j_at = None;
        for j in 0..k {
            if times[j] <= data.exit[i] {
                j_at = Some(j);
            } else {
                break;
            }
        }
        if data.event[i] {
            let j = grid.index_of(data.exit[i]).expect("event on grid");
            q.add(lambda[j].ln() + lp[i]);
        }
        if let Some(j) = j_at {
            q.add(-e * cum[j]);
        }
        if data.prevalent[i] {
            let row = &tw_row(weights, i)[..k];
            for j in 0..k {
                let w = row[j];
                if w > 0.0 {
                    q.add(w * (lambda[j].ln() + lp[i] - e * cum[j]));
                }
            }
        }
    }
    q.value()
}

fn tw_row(weights: &EStepWeights, i: usize) -> &[f64] {
    &weights.tw[i * weights.k..(i + 1) * weights.k]
}

/// Observed-data log-likelihood of the discrete survival model the EM fits.
///
/// Event mass lives on the grid; a prevalent case contributes its full
/// survival term divided by the truncation probability
/// `P(T > A | x) = upsilon / xi`, with A uniform on `[0, xi]`.
pub fn observed_loglik(
    cohort: &Cohort,
    grid: &EventGrid,
    gamma: &[f64],
    lambda: &[f64],
    xi_hat: f64,
) -> Result<f64> {
    let data = CaseData::from_cohort(cohort);
    observed_loglik_data(&data, grid, gamma, lambda, xi_hat)
}

fn observed_loglik_data(
    data: &CaseData,
    grid: &EventGrid,
    gamma: &[f64],
    lambda: &[f64],
    xi_hat: f64,
) -> Result<f64> {
    let k = grid.len();
    let times = grid.times();
    let cum: Vec<f64> = lambda
        .iter()
        .scan(0.0, |acc, l| {
            *acc += l;
            Some(*acc)
        })
        .collect();
    let lp = data.linear_predictors(gamma);
    let mut ll = KahanSum::new();
    let mut omega = vec![0.0; k];
    let mut tw_scratch = vec![0.0; k];
    for i in 0..data.n {
        let e = exp_clamped(lp[i]);
        let mut cum_at_y = 0.0;
        for j in 0..k {
            if times[j] <= data.exit[i] {
                cum_at_y = cum[j];
            } else {
                break;
            }
        }
        if data.event[i] {
            let j = grid.index_of(data.exit[i]).expect("event on grid");
            ll.add(lambda[j].ln() + lp[i]);
        }
        ll.add(-cum_at_y * e);
        if data.prevalent[i] {
            let upsilon = estep_row(times, lambda, e, xi_hat, &mut omega, &mut tw_scratch);
            if upsilon <= 0.0 {
                return Err(Error::DegenerateEStep { index: i });
            }
            ll.add(-(upsilon / xi_hat).ln());
        }
    }
    let v = ll.value();
    if !v.is_finite() {
        return Err(Error::InvalidInput("non-finite observed log-likelihood".into()));
    }
    Ok(v)
}

/// Fit the Cox model by EM.
///
/// Warm-started from the partial-likelihood fit when it converges. The
/// observed-data log-likelihood is checked for ascent at every iteration and
/// a decrease beyond `ascent_tol` aborts with a diagnostic.
pub fn fit_cox_em(cohort: &Cohort, opts: &EmOptions) -> Result<CoxFit> {
    cohort.ensure_fit_ready()?;
    let data = CaseData::from_cohort(cohort);
    let grid = EventGrid::from_cases(cohort.cases())?;
    let xi_hat = data.xi_hat(&grid, opts.xi_rule)?;
    let k = grid.len();

    // Warm start from the truncation-adjusted partial likelihood.
    let pl_opts = CoxOptions {
        xi_rule: opts.xi_rule,
        ..CoxOptions::default()
    };
    let mut gamma = match fit_cox_lt_quiet(cohort, &pl_opts) {
        Some(fit) => fit.gamma,
        None => vec![0.0; data.p],
    };
    let pl_engine = BreslowEngine::partial_likelihood(&data, &grid);
    let mut lambda = pl_engine.baseline_jumps(&gamma)?;

    let mut ll = observed_loglik_data(&data, &grid, &gamma, &lambda, xi_hat)?;
    let mut tw = vec![0.0; data.n * k];
    let mut omega_scratch = vec![0.0; k];

    let mut converged = false;
    let mut iterations = 0;
    let mut grad_norm = f64::NAN;
    for iter in 1..=opts.max_iter {
        iterations = iter;
        // E-step (in place).
        let lp = data.linear_predictors(&gamma);
        for i in 0..data.n {
            if !data.prevalent[i] {
                continue;
            }
            let u = estep_row(
                grid.times(),
                &lambda,
                exp_clamped(lp[i]),
                xi_hat,
                &mut omega_scratch,
                &mut tw[i * k..(i + 1) * k],
            );
            if u <= 0.0 {
                return Err(Error::DegenerateEStep { index: i });
            }
        }
        // M-step.
        let (gamma_new, lambda_new, gnorm) = m_step_data(&data, &grid, &tw, &gamma)?;
        grad_norm = gnorm;
        let ll_new = observed_loglik_data(&data, &grid, &gamma_new, &lambda_new, xi_hat)?;
        if ll_new < ll - opts.ascent_tol {
            return Err(Error::AscentViolation {
                iteration: iter,
                drop: ll - ll_new,
            });
        }
        let dg = max_abs_diff(&gamma, &gamma_new);
        let dl = max_abs_diff(&lambda, &lambda_new);
        let dll = (ll_new - ll).abs();
        gamma = gamma_new;
        lambda = lambda_new;
        ll = ll_new;
        if dg.max(dl).max(dll) <= opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotConverged {
            what: "em",
            iterations,
        });
    }
    Ok(CoxFit {
        gamma,
        grid,
        lambda,
        xi_hat,
        method: CoxMethod::Em,
        converged,
        iterations,
        final_gradient_norm: grad_norm,
    })
}

fn fit_cox_lt_quiet(cohort: &Cohort, opts: &CoxOptions) -> Option<CoxFit> {
    fit_cox_lt(cohort, opts).ok()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Subject;
    use approx::assert_relative_eq;

    fn prevalent_k2_setup() -> (Cohort, CoxFit) {
        // grid {1, 2} from two incident events plus one prevalent subject
        let cohort = Cohort::new(vec![
            Subject::incident(vec![0.0], 1.0, true),
            Subject::incident(vec![0.0], 2.0, true),
            Subject::prevalent(vec![0.0], 0.3, 2.5, false),
        ])
        .unwrap();
        let grid = EventGrid::from_cases(cohort.cases()).unwrap();
        let fit = CoxFit {
            gamma: vec![0.0],
            grid,
            lambda: vec![0.5, 0.5],
            xi_hat: 2.0,
            method: CoxMethod::Em,
            converged: true,
            iterations: 0,
            final_gradient_norm: 0.0,
        };
        (cohort, fit)
    }

    #[test]
    fn e_step_matches_direct_formula() {
        let (cohort, fit) = prevalent_k2_setup();
        let w = e_step(&fit, &cohort).unwrap();
        // prevalent subject is row 2; direct evaluation oracle:
        // omega_1 = 0.5 e^{-0.5}, omega_2 = 0.5 e^{-1};
        // upsilon = 1 omega_1 + 2 omega_2; tw_1 = (2/upsilon)(1/2) omega_1, tw_2 = 0
        let o1 = 0.5 * (-0.5f64).exp();
        let o2 = 0.5 * (-1.0f64).exp();
        let upsilon = o1 + 2.0 * o2;
        assert_relative_eq!(w.omega_row(2)[0], o1, epsilon = 1e-15);
        assert_relative_eq!(w.omega_row(2)[1], o2, epsilon = 1e-15);
        assert_relative_eq!(w.upsilon[2], upsilon, epsilon = 1e-15);
        assert_relative_eq!(w.tw_row(2)[0], (2.0 / upsilon) * 0.5 * o1, epsilon = 1e-14);
        assert_relative_eq!(w.tw_row(2)[0], 0.45187, epsilon = 1e-5);
        assert_eq!(w.tw_row(2)[1], 0.0);
        // incident rows carry no weight
        assert!(w.tw_row(0).iter().all(|v| *v == 0.0));
        assert!(w.tw_row(1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_event_time_zeroes_all_weights() {
        let cohort = Cohort::new(vec![
            Subject::incident(vec![0.0], 1.0, true),
            Subject::prevalent(vec![0.0], 0.2, 1.5, false),
        ])
        .unwrap();
        let grid = EventGrid::from_cases(cohort.cases()).unwrap();
        let fit = CoxFit {
            gamma: vec![0.0],
            grid,
            lambda: vec![0.8],
            xi_hat: 1.0,
            method: CoxMethod::Em,
            converged: true,
            iterations: 0,
            final_gradient_norm: 0.0,
        };
        let w = e_step(&fit, &cohort).unwrap();
        assert!(w.tw_row(1).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn m_step_reduces_to_nelson_aalen_without_weights() {
        let cohort = Cohort::new(vec![
            Subject::incident(vec![0.0], 1.0, true),
            Subject::incident(vec![0.0], 2.0, true),
            Subject::incident(vec![0.0], 3.0, true),
        ])
        .unwrap();
        let grid = EventGrid::from_cases(cohort.cases()).unwrap();
        let weights = EStepWeights {
            tw: vec![0.0; 9],
            omega: vec![0.0; 9],
            upsilon: vec![0.0; 3],
            n: 3,
            k: 3,
            grid,
            xi_hat: 3.0,
        };
        let (_, lambda) = m_step(&weights, &cohort, &[0.0]).unwrap();
        assert_relative_eq!(lambda[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(lambda[1], 1.0 / 2.0, epsilon = 1e-12);
        assert_relative_eq!(lambda[2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn m_step_closed_form_with_weights() {
        let (cohort, fit) = prevalent_k2_setup();
        let w = e_step(&fit, &cohort).unwrap();
        let (gamma, lambda) = m_step(&w, &cohort, &[0.0]).unwrap();
        // covariates are all zero, so gamma stays at the start value
        assert_eq!(gamma, vec![0.0]);
        // symbolic substitution into the closed form:
        // lambda_1 = (tw_1 + 1) / (3 + tw_1 + tw_2); lambda_2 = 1 / 2
        let tw1 = w.tw_row(2)[0];
        assert_relative_eq!(lambda[0], (tw1 + 1.0) / (3.0 + tw1), epsilon = 1e-12);
        assert_relative_eq!(lambda[1], 1.0 / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn m_step_does_not_decrease_q() {
        let (cohort, fit) = prevalent_k2_setup();
        let w = e_step(&fit, &cohort).unwrap();
        let q_old = q_value(&w, &cohort, &fit.gamma, &fit.lambda);
        let (gamma, lambda) = m_step(&w, &cohort, &fit.gamma).unwrap();
        let q_new = q_value(&w, &cohort, &gamma, &lambda);
        assert!(q_new >= q_old - 1e-12, "{q_new} < {q_old}");
    }

    #[test]
    fn em_equals_partial_likelihood_without_prevalent_cases() {
        let cohort = Cohort::new(vec![
            Subject::incident(vec![1.0, 0.2], 1.0, true),
            Subject::incident(vec![0.0, -0.4], 2.0, true),
            Subject::incident(vec![1.0, 0.9], 3.0, true),
            Subject::incident(vec![-0.5, 0.1], 2.5, false),
            Subject::incident(vec![0.3, -1.0], 1.7, true),
            Subject::incident(vec![0.8, 0.5], 0.9, false),
        ])
        .unwrap();
        let pl = fit_cox_lt(&cohort, &CoxOptions::default()).unwrap();
        let em = fit_cox_em(&cohort, &EmOptions::default()).unwrap();
        for (a, b) in em.gamma.iter().zip(&pl.gamma) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
        for (a, b) in em.lambda.iter().zip(&pl.lambda) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn em_ascends_on_truncated_data() {
        let cohort = Cohort::new(vec![
            Subject::incident(vec![0.5], 0.8, true),
            Subject::incident(vec![-0.3], 1.4, true),
            Subject::incident(vec![0.1], 2.2, false),
            Subject::prevalent(vec![0.7], 0.5, 1.9, true),
            Subject::prevalent(vec![-0.6], 1.0, 2.8, true),
            Subject::prevalent(vec![0.2], 0.4, 3.0, false),
        ])
        .unwrap();
        let fit = fit_cox_em(&cohort, &EmOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(fit.lambda.iter().all(|l| *l >= 0.0));
        assert_eq!(fit.method, CoxMethod::Em);
    }
}

#[cfg(test)]
mod ascent_probe {
    use super::*;
    use crate::cox::CoxOptions;
    use crate::sim::{simulate_cohort, SimConfig};

    // Candidate observed-data log-likelihood variants, differing in the
    // truncation-probability normalizer for prevalent cases.
    fn loglik_variants(
        cohort: &Cohort,
        grid: &EventGrid,
        gamma: &[f64],
        lambda: &[f64],
        xi_hat: f64,
    ) -> (f64, f64, f64) {
        let data = CaseData::from_cohort(cohort);
        let k = grid.len();
        let times = grid.times();
        let cum: Vec<f64> = lambda
            .iter()
            .scan(0.0, |acc, l| {
                *acc += l;
                Some(*acc)
            })
            .collect();
        let lp = data.linear_predictors(gamma);
        let mut base = KahanSum::new();
        let mut pen_upsilon = KahanSum::new();
        let mut pen_geo = KahanSum::new();
        let mut pen_muint = KahanSum::new();
        for i in 0..data.n {
            let e = exp_clamped(lp[i]);
            let mut cum_at_y = 0.0;
            for j in 0..k {
                if times[j] <= data.exit[i] {
                    cum_at_y = cum[j];
                } else {
                    break;
                }
            }
            if data.event[i] {
                let j = grid.index_of(data.exit[i]).unwrap();
                base.add(lambda[j].ln() + lp[i]);
            }
            base.add(-cum_at_y * e);
            if data.prevalent[i] {
                // omega weights
                let mut cumh = 0.0;
                let mut upsilon = 0.0;
                let mut w_fail = 0.0;
                for j in 0..k {
                    cumh += lambda[j];
                    let arg = cumh * e;
                    let w = if arg > 745.0 { 0.0 } else { lambda[j] * e * (-arg).exp() };
                    upsilon += times[j].min(xi_hat) * w;
                    w_fail += (1.0 - times[j] / xi_hat).max(0.0) * w;
                }
                pen_upsilon.add(-(upsilon / xi_hat).ln());
                pen_geo.add(-(1.0 - w_fail).ln());
                // integral of the step survival over [0, xi]
                let mut mu = 0.0;
                let mut t_prev = 0.0;
                let mut c_prev = 0.0;
                for j in 0..k {
                    if t_prev > xi_hat {
                        break;
                    }
                    let width = times[j].min(xi_hat) - t_prev;
                    if width > 0.0 {
                        mu += width * (-(c_prev * e)).exp();
                    }
                    t_prev = times[j];
                    c_prev = cum[j];
                }
                pen_muint.add(-(mu / xi_hat).ln());
            }
        }
        (
            base.value() + pen_upsilon.value(),
            base.value() + pen_geo.value(),
            base.value() + pen_muint.value(),
        )
    }

    #[test]
    fn probe_monotonicity() {
        let mut cfg = SimConfig::benchmark();
        cfg.n0 = 5;
        cfg.n1 = 150;
        cfg.n2 = 150;
        cfg.tau_incident = 0.6; // 50% censoring
        cfg.tau_prevalent = 1.5;
        for seed in [1u64, 2, 3] {
            let cohort = simulate_cohort(&cfg, seed).unwrap();
            let data = CaseData::from_cohort(&cohort);
            let grid = EventGrid::from_cases(cohort.cases()).unwrap();
            let xi_hat = data.xi_hat(&grid, XiRule::LastEvent).unwrap();
            let k = grid.len();
            let mut gamma = match fit_cox_lt(&cohort, &CoxOptions::default()) {
                Ok(f) => f.gamma,
                Err(_) => vec![0.0; data.p],
            };
            let pl_engine = BreslowEngine::partial_likelihood(&data, &grid);
            let mut lambda = pl_engine.baseline_jumps(&gamma).unwrap();
            let mut prev = loglik_variants(&cohort, &grid, &gamma, &lambda, xi_hat);
            let mut tw = vec![0.0; data.n * k];
            let mut omega = vec![0.0; k];
            let (mut worst_a, mut worst_b, mut worst_c) = (0.0f64, 0.0f64, 0.0f64);
            for iter in 1..=300 {
                let lp = data.linear_predictors(&gamma);
                for i in 0..data.n {
                    if !data.prevalent[i] {
                        continue;
                    }
                    estep_row(
                        grid.times(),
                        &lambda,
                        exp_clamped(lp[i]),
                        xi_hat,
                        &mut omega,
                        &mut tw[i * k..(i + 1) * k],
                    );
                }
                let (g2, l2, _) = m_step_data(&data, &grid, &tw, &gamma).unwrap();
                let cur = loglik_variants(&cohort, &grid, &g2, &l2, xi_hat);
                worst_a = worst_a.max(prev.0 - cur.0);
                worst_b = worst_b.max(prev.1 - cur.1);
                worst_c = worst_c.max(prev.2 - cur.2);
                let delta = max_abs_diff(&gamma, &gamma)
                    .max(max_abs_diff(&lambda, &l2))
                    .max(max_abs_diff(&gamma, &g2));
                gamma = g2;
                lambda = l2;
                prev = cur;
                if delta < 1e-9 && iter > 5 {
                    break;
                }
            }
            println!(
                "seed {seed}: worst drops  upsilon {worst_a:.3e}  geometric {worst_b:.3e}  mu-integral {worst_c:.3e}  gamma {:?}",
                gamma
            );
        }
    }
}

#[cfg(test)]
mod bias_probe {
    use super::*;
    use crate::sim::{simulate_cohort, SimConfig};

    // E-step weights under the coherent step-survival model: mass
    // p_j = S(t_{j-1}) - S(t_j), normalizer mu = int_0^xi S.
    fn estep_row_jump(
        times: &[f64],
        lambda: &[f64],
        exg: f64,
        xi_hat: f64,
        tw_out: &mut [f64],
    ) -> f64 {
        let k = times.len();
        let mut cum = 0.0;
        let mut s_prev = 1.0;
        let mut mu = 0.0;
        let mut t_prev = 0.0;
        for j in 0..k {
            // integral cell before the jump at t_j
            if t_prev <= xi_hat {
                let width = times[j].min(xi_hat) - t_prev;
                if width > 0.0 {
                    mu += width * s_prev;
                }
            }
            cum += lambda[j];
            let s_now = (-(cum * exg).min(745.0)).exp();
            tw_out[j] = (s_prev - s_now) * (1.0 - times[j] / xi_hat).max(0.0);
            s_prev = s_now;
            t_prev = times[j];
        }
        if mu <= 0.0 {
            return 0.0;
        }
        for w in tw_out.iter_mut() {
            *w *= xi_hat / mu;
        }
        mu
    }

    #[test]
    fn probe_jump_variant() {
        let mut cfg = SimConfig::benchmark();
        cfg.n0 = 5;
        cfg.n1 = 1500;
        cfg.n2 = 1500;
        cfg.tau_incident = 5.0;
        cfg.tau_prevalent = 15.0;
        let cohort = simulate_cohort(&cfg, 42).unwrap();
        let data = CaseData::from_cohort(&cohort);
        let grid = EventGrid::from_cases(cohort.cases()).unwrap();
        let k = grid.len();
        let xi_hat = data.xi_hat(&grid, XiRule::LastEvent).unwrap();
        for variant in ["omega", "jump"] {
            let mut gamma = vec![1.0, -1.0];
            let mut lambda: Vec<f64> = {
                let mut v = Vec::new();
                let mut prev = 0.0;
                for t in grid.times() {
                    v.push(t - prev);
                    prev = *t;
                }
                v
            };
            let mut tw = vec![0.0; data.n * k];
            let mut om = vec![0.0; k];
            for _ in 0..150 {
                let lp = data.linear_predictors(&gamma);
                for i in 0..data.n {
                    if !data.prevalent[i] {
                        continue;
                    }
                    let row = &mut tw[i * k..(i + 1) * k];
                    if variant == "omega" {
                        estep_row(grid.times(), &lambda, exp_clamped(lp[i]), xi_hat, &mut om, row);
                    } else {
                        estep_row_jump(grid.times(), &lambda, exp_clamped(lp[i]), xi_hat, row);
                    }
                }
                let (g2, l2, _) = m_step_data(&data, &grid, &tw, &gamma).unwrap();
                gamma = g2;
                lambda = l2;
            }
            let lam30: f64 = grid
                .times()
                .iter()
                .zip(&lambda)
                .take_while(|(t, _)| **t <= 30.0)
                .map(|(_, l)| l)
                .sum();
            println!(
                "variant {variant:>5}: gamma after 150 iters = ({:+.4}, {:+.4}), Lam(30) = {:.2}",
                gamma[0], gamma[1], lam30
            );
        }
    }
}
