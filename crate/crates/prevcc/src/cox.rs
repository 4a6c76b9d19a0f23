//! Truncation-adjusted Cox partial likelihood and the Breslow baseline.
//!
//! Prevalent cases enter the risk set only after their backward time: the
//! at-risk process is Z_i(t) = I(a_i < t <= y_i), which is not monotone in t.
//! Ties use the Breslow convention throughout, consistent with the
//! closed-form baseline-hazard updates elsewhere in the crate.

use nalgebra::{DMatrix, DVector};

use crate::data::{Cohort, Group, Subject};
use crate::numeric::{exp_clamped, KahanSum};
use crate::{Error, Result};

/// Rule for the backward-time support bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum XiRule {
    /// The largest observed event time among all cases (the default).
    #[default]
    LastEvent,
    /// The largest observed time among prevalent cases.
    PrevalentMax,
}

/// Options for the partial-likelihood and EM survival fits.
#[derive(Debug, Clone)]
pub struct CoxOptions {
    /// Convergence tolerance on the score max-norm.
    pub tol: f64,
    pub max_iter: usize,
    /// Declare monotone-likelihood divergence when |gamma| exceeds this with
    /// a non-vanishing score.
    pub gamma_bound: f64,
    pub xi_rule: XiRule,
}

impl Default for CoxOptions {
    fn default() -> Self {
        CoxOptions {
            tol: 1e-8,
            max_iter: 100,
            gamma_bound: 30.0,
            xi_rule: XiRule::LastEvent,
        }
    }
}

/// Which algorithm produced a [`CoxFit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoxMethod {
    PartialLikelihood,
    Em,
}

/// Distinct observed event times with tie multiplicities.
#[derive(Debug, Clone, PartialEq)]
pub struct EventGrid {
    t: Vec<f64>,
    d: Vec<usize>,
}

impl EventGrid {
    /// Build the grid from the cases of a cohort.
    pub fn from_cases<'a, I: Iterator<Item = &'a Subject>>(cases: I) -> Result<EventGrid> {
        let mut times: Vec<f64> = cases
            .filter(|s| s.delta == Some(true))
            .map(|s| s.y.unwrap())
            .collect();
        if times.is_empty() {
            return Err(Error::NoEvents);
        }
        times.sort_by(|a, b| a.total_cmp(b));
        if times[0] <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "event time {} must be positive",
                times[0]
            )));
        }
        let mut t = Vec::new();
        let mut d = Vec::new();
        for v in times {
            if t.last() == Some(&v) {
                *d.last_mut().unwrap() += 1;
            } else {
                t.push(v);
                d.push(1);
            }
        }
        Ok(EventGrid { t, d })
    }

    pub fn times(&self) -> &[f64] {
        &self.t
    }

    pub fn multiplicities(&self) -> &[usize] {
        &self.d
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Index of the grid point equal to `time`, if any.
    pub fn index_of(&self, time: f64) -> Option<usize> {
        self.t.binary_search_by(|v| v.total_cmp(&time)).ok()
    }
}

/// A fitted Cox model: log-hazard ratios plus a step baseline hazard.
#[derive(Debug, Clone)]
pub struct CoxFit {
    pub gamma: Vec<f64>,
    pub grid: EventGrid,
    /// Baseline hazard jumps at the grid times.
    pub lambda: Vec<f64>,
    /// Backward-time support bound.
    pub xi_hat: f64,
    pub method: CoxMethod,
    pub converged: bool,
    pub iterations: usize,
    pub final_gradient_norm: f64,
}

impl CoxFit {
    /// Cumulative baseline hazard at each grid time (inclusive).
    pub fn cumulative_lambda(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.lambda
            .iter()
            .map(|l| {
                acc += l;
                acc
            })
            .collect()
    }

    /// Step-function cumulative baseline hazard at an arbitrary time.
    pub fn cumulative_baseline(&self, time: f64) -> f64 {
        self.grid
            .times()
            .iter()
            .zip(&self.lambda)
            .take_while(|(t, _)| **t <= time)
            .map(|(_, l)| l)
            .sum()
    }
}

/// Internal packed view of the cases of a cohort (cohort order preserved).
#[derive(Debug, Clone)]
pub(crate) struct CaseData {
    pub n: usize,
    pub p: usize,
    /// Row-major n x p covariates.
    pub x: Vec<f64>,
    /// Backward time; 0 for incident cases.
    pub entry: Vec<f64>,
    pub exit: Vec<f64>,
    pub event: Vec<bool>,
    pub prevalent: Vec<bool>,
}

impl CaseData {
    pub fn from_cohort(cohort: &Cohort) -> CaseData {
        let p = cohort.dim();
        let mut data = CaseData {
            n: 0,
            p,
            x: Vec::new(),
            entry: Vec::new(),
            exit: Vec::new(),
            event: Vec::new(),
            prevalent: Vec::new(),
        };
        for s in cohort.cases() {
            data.x.extend_from_slice(&s.x);
            data.entry.push(s.entry_time());
            data.exit.push(s.y.unwrap());
            data.event.push(s.delta.unwrap());
            data.prevalent.push(s.group == Group::Prevalent);
            data.n += 1;
        }
        data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn linear_predictors(&self, gamma: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).iter().zip(gamma).map(|(x, g)| x * g).sum())
            .collect()
    }

    pub fn xi_hat(&self, grid: &EventGrid, rule: XiRule) -> Result<f64> {
        match rule {
            XiRule::LastEvent => Ok(*grid.times().last().unwrap()),
            XiRule::PrevalentMax => {
                let m = self
                    .exit
                    .iter()
                    .zip(&self.prevalent)
                    .filter(|(_, prev)| **prev)
                    .map(|(y, _)| *y)
                    .fold(f64::NEG_INFINITY, f64::max);
                if m.is_finite() && m > 0.0 {
                    Ok(m)
                } else {
                    Err(Error::InvalidInput(
                        "xi rule prevalent-max requires at least one prevalent case".into(),
                    ))
                }
            }
        }
    }
}

/// Weighted Breslow partial-likelihood engine on an event grid.
///
/// Handles both the plain truncation-adjusted partial likelihood (risk from
/// the subject's entry time, unit event mass) and the EM M-step profile
/// objective, where each case additionally spreads event/risk mass over the
/// grid through E-step weights and is at risk from time zero.
pub(crate) struct BreslowEngine<'a> {
    data: &'a CaseData,
    grid: &'a EventGrid,
    /// Risk sets honor the entry times when true; EM uses full-support risk.
    truncated_risk: bool,
    /// Event mass at each grid point.
    event_mass: Vec<f64>,
    /// Total event-weighted covariate sum over all grid points.
    event_x_total: Vec<f64>,
    /// Per-case suffix event-weight sums TW[i][j] = sum_{l >= j} tw[i][l]
    /// (row-major n x k), present for the EM M-step.
    tw_tail: Option<Vec<f64>>,
    /// Exit-sorted and entry-sorted case indices (descending).
    order_exit: Vec<usize>,
    order_entry: Vec<usize>,
}

impl<'a> BreslowEngine<'a> {
    /// Plain partial likelihood: events where delta = 1, risk from entry.
    pub fn partial_likelihood(data: &'a CaseData, grid: &'a EventGrid) -> BreslowEngine<'a> {
        let k = grid.len();
        let mut event_mass = vec![0.0; k];
        let mut event_x_total = vec![0.0; data.p];
        for i in 0..data.n {
            if data.event[i] {
                let j = grid
                    .index_of(data.exit[i])
                    .expect("event time is on the grid by construction");
                event_mass[j] += 1.0;
                for (acc, v) in event_x_total.iter_mut().zip(data.row(i)) {
                    *acc += v;
                }
            }
        }
        Self::build(data, grid, true, event_mass, event_x_total, None)
    }

    /// EM M-step profile objective: observed events plus E-step pseudo-events
    /// `tw` (row-major n x k), risk from time zero.
    pub fn em_m_step(data: &'a CaseData, grid: &'a EventGrid, tw: &[f64]) -> BreslowEngine<'a> {
        let k = grid.len();
        let p = data.p;
        let mut event_mass = vec![0.0; k];
        let mut event_x_total = vec![0.0; p];
        let mut tw_tail = vec![0.0; data.n * k];
        for i in 0..data.n {
            if data.event[i] {
                let j = grid.index_of(data.exit[i]).expect("event on grid");
                event_mass[j] += 1.0;
                for (acc, v) in event_x_total.iter_mut().zip(data.row(i)) {
                    *acc += v;
                }
            }
            let row = &tw[i * k..(i + 1) * k];
            let mut tail = 0.0;
            for j in (0..k).rev() {
                let w = row[j];
                if w != 0.0 {
                    event_mass[j] += w;
                    for (acc, v) in event_x_total.iter_mut().zip(data.row(i)) {
                        *acc += w * v;
                    }
                    tail += w;
                }
                tw_tail[i * k + j] = tail;
            }
        }
        Self::build(data, grid, false, event_mass, event_x_total, Some(tw_tail))
    }

    fn build(
        data: &'a CaseData,
        grid: &'a EventGrid,
        truncated_risk: bool,
        event_mass: Vec<f64>,
        event_x_total: Vec<f64>,
        tw_tail: Option<Vec<f64>>,
    ) -> BreslowEngine<'a> {
        let mut order_exit: Vec<usize> = (0..data.n).collect();
        order_exit.sort_by(|&i, &j| data.exit[j].total_cmp(&data.exit[i]));
        let mut order_entry: Vec<usize> = (0..data.n).collect();
        order_entry.sort_by(|&i, &j| data.entry[j].total_cmp(&data.entry[i]));
        BreslowEngine {
            data,
            grid,
            truncated_risk,
            event_mass,
            event_x_total,
            tw_tail,
            order_exit,
            order_entry,
        }
    }

    /// Risk-set sums S^(0), and optionally S^(1), S^(2), at every grid time,
    /// walking the grid from the latest time down.
    fn risk_sums(&self, e: &[f64], with_derivs: bool) -> Result<RiskSums> {
        let d = self.data;
        let (n, p, k) = (d.n, d.p, self.grid.len());
        let times = self.grid.times();
        let mut s0 = vec![0.0; k];
        let mut s1 = if with_derivs { vec![0.0; k * p] } else { Vec::new() };
        let mut s2 = if with_derivs { vec![0.0; k * p * p] } else { Vec::new() };

        let mut acc0 = 0.0;
        let mut acc1 = vec![0.0; p];
        let mut acc2 = vec![0.0; p * p];
        let mut ix_exit = 0usize;
        let mut ix_entry = 0usize;
        let add = |i: usize, sign: f64, acc0: &mut f64, acc1: &mut [f64], acc2: &mut [f64]| {
            let w = sign * e[i];
            *acc0 += w;
            if with_derivs {
                let row = d.row(i);
                for a in 0..p {
                    acc1[a] += w * row[a];
                    for b in 0..p {
                        acc2[a * p + b] += w * row[a] * row[b];
                    }
                }
            }
        };

        for j in (0..k).rev() {
            let t = times[j];
            while ix_exit < n && d.exit[self.order_exit[ix_exit]] >= t {
                add(self.order_exit[ix_exit], 1.0, &mut acc0, &mut acc1, &mut acc2);
                ix_exit += 1;
            }
            if self.truncated_risk {
                while ix_entry < n && d.entry[self.order_entry[ix_entry]] >= t {
                    add(self.order_entry[ix_entry], -1.0, &mut acc0, &mut acc1, &mut acc2);
                    ix_entry += 1;
                }
            }
            s0[j] = acc0;
            if with_derivs {
                s1[j * p..(j + 1) * p].copy_from_slice(&acc1);
                s2[j * p * p..(j + 1) * p * p].copy_from_slice(&acc2);
            }
        }

        // E-step pseudo-events put mass tw[i][l] at t_l with risk over
        // (0, t_l]; at grid point j that contributes the suffix sums tw_tail.
        if let Some(tail) = &self.tw_tail {
            for i in 0..n {
                let row = d.row(i);
                let tails = &tail[i * k..(i + 1) * k];
                for j in 0..k {
                    let w = tails[j] * e[i];
                    if w == 0.0 {
                        continue;
                    }
                    s0[j] += w;
                    if with_derivs {
                        for a in 0..p {
                            s1[j * p + a] += w * row[a];
                            for b in 0..p {
                                s2[(j * p + a) * p + b] += w * row[a] * row[b];
                            }
                        }
                    }
                }
            }
        }

        for j in 0..k {
            if self.event_mass[j] > 0.0 && s0[j] <= 0.0 {
                return Err(Error::EmptyRiskSet { time: times[j] });
            }
        }
        Ok(RiskSums { s0, s1, s2 })
    }

    /// Log partial likelihood at `gamma`.
    pub fn loglik(&self, gamma: &[f64]) -> Result<f64> {
        let e = self
            .data
            .linear_predictors(gamma)
            .iter()
            .map(|&lp| exp_clamped(lp))
            .collect::<Vec<_>>();
        let sums = self.risk_sums(&e, false)?;
        let mut ll = KahanSum::new();
        for (g, xs) in gamma.iter().zip(&self.event_x_total) {
            ll.add(g * xs);
        }
        for j in 0..self.grid.len() {
            if self.event_mass[j] > 0.0 {
                ll.add(-self.event_mass[j] * sums.s0[j].ln());
            }
        }
        let v = ll.value();
        if !v.is_finite() {
            return Err(Error::InvalidInput(
                "non-finite partial log-likelihood".into(),
            ));
        }
        Ok(v)
    }

    /// Log-likelihood, score, and negative Hessian at `gamma`.
    pub fn loglik_score_info(&self, gamma: &[f64]) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let p = self.data.p;
        let e = self
            .data
            .linear_predictors(gamma)
            .iter()
            .map(|&lp| exp_clamped(lp))
            .collect::<Vec<_>>();
        let sums = self.risk_sums(&e, true)?;
        let mut ll = KahanSum::new();
        for (g, xs) in gamma.iter().zip(&self.event_x_total) {
            ll.add(g * xs);
        }
        let mut grad = DVector::from_column_slice(&self.event_x_total);
        let mut info = DMatrix::zeros(p, p);
        for j in 0..self.grid.len() {
            let dj = self.event_mass[j];
            if dj == 0.0 {
                continue;
            }
            let s0 = sums.s0[j];
            ll.add(-dj * s0.ln());
            let s1 = &sums.s1[j * p..(j + 1) * p];
            for a in 0..p {
                let ea = s1[a] / s0;
                grad[a] -= dj * ea;
                for b in 0..p {
                    let eb = s1[b] / s0;
                    info[(a, b)] += dj * (sums.s2[(j * p + a) * p + b] / s0 - ea * eb);
                }
            }
        }
        let v = ll.value();
        if !v.is_finite() {
            return Err(Error::InvalidInput(
                "non-finite partial log-likelihood".into(),
            ));
        }
        Ok((v, grad, info))
    }

    /// S^(0) at every grid time (Breslow denominators).
    pub fn breslow_denominators(&self, gamma: &[f64]) -> Result<Vec<f64>> {
        let e = self
            .data
            .linear_predictors(gamma)
            .iter()
            .map(|&lp| exp_clamped(lp))
            .collect::<Vec<_>>();
        Ok(self.risk_sums(&e, false)?.s0)
    }

    /// Baseline-hazard jumps: event mass over the Breslow denominator.
    pub fn baseline_jumps(&self, gamma: &[f64]) -> Result<Vec<f64>> {
        let s0 = self.breslow_denominators(gamma)?;
        self.event_mass
            .iter()
            .zip(&s0)
            .zip(self.grid.times())
            .map(|((d, s), t)| {
                if *s <= 0.0 && *d > 0.0 {
                    Err(Error::EmptyRiskSet { time: *t })
                } else if *s <= 0.0 {
                    Ok(0.0)
                } else {
                    Ok(d / s)
                }
            })
            .collect()
    }

    /// Maximize by Newton iteration with step-halving.
    pub fn newton(&self, start: &[f64], opts: &CoxOptions) -> Result<NewtonOutcome> {
        let mut gamma = DVector::from_column_slice(start);
        let (mut ll, mut grad, mut info) = self.loglik_score_info(gamma.as_slice())?;
        for iter in 0..opts.max_iter {
            let gnorm = grad.amax();
            if gnorm <= opts.tol {
                return Ok(NewtonOutcome {
                    gamma: gamma.as_slice().to_vec(),
                    gradient_norm: gnorm,
                    iterations: iter,
                    converged: true,
                });
            }
            if gamma.amax() > opts.gamma_bound {
                return Err(Error::LikelihoodMonotone {
                    bound: opts.gamma_bound,
                });
            }
            let step = solve_spd(&info, &grad).ok_or(Error::SingularHessian {
                context: "partial-likelihood information matrix",
            })?;
            let mut accepted = false;
            let mut scale = 1.0;
            for _ in 0..=20 {
                let candidate = &gamma + scale * &step;
                match self.loglik(candidate.as_slice()) {
                    Ok(ll_new) if ll_new >= ll - 1e-12 * (1.0 + ll.abs()) => {
                        gamma = candidate;
                        accepted = true;
                        break;
                    }
                    _ => scale *= 0.5,
                }
            }
            if !accepted {
                return Err(Error::NotConverged {
                    what: "cox newton step-halving",
                    iterations: iter,
                });
            }
            let next = self.loglik_score_info(gamma.as_slice())?;
            ll = next.0;
            grad = next.1;
            info = next.2;
        }
        let gnorm = grad.amax();
        if gnorm <= opts.tol {
            Ok(NewtonOutcome {
                gamma: gamma.as_slice().to_vec(),
                gradient_norm: gnorm,
                iterations: opts.max_iter,
                converged: true,
            })
        } else {
            Err(Error::NotConverged {
                what: "cox newton",
                iterations: opts.max_iter,
            })
        }
    }
}

pub(crate) struct RiskSums {
    pub s0: Vec<f64>,
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
}

pub(crate) struct NewtonOutcome {
    pub gamma: Vec<f64>,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solve `a x = b` for a symmetric positive-definite `a`, falling back to LU.
pub(crate) fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Some(chol.solve(b));
    }
    a.clone().lu().solve(b)
}

/// Truncation-adjusted Cox partial log-likelihood at `gamma`, over the cases
/// of `cohort`, with Breslow tie handling.
pub fn partial_loglik(cohort: &Cohort, gamma: &[f64]) -> Result<f64> {
    if gamma.len() != cohort.dim() {
        return Err(Error::InvalidInput(format!(
            "gamma has length {}, expected {}",
            gamma.len(),
            cohort.dim()
        )));
    }
    cohort.ensure_fit_ready()?;
    let data = CaseData::from_cohort(cohort);
    let grid = EventGrid::from_cases(cohort.cases())?;
    let engine = BreslowEngine::partial_likelihood(&data, &grid);
    engine.loglik(gamma)
}

/// Score vector of the partial log-likelihood at `gamma`.
pub fn partial_score(cohort: &Cohort, gamma: &[f64]) -> Result<Vec<f64>> {
    cohort.ensure_fit_ready()?;
    let data = CaseData::from_cohort(cohort);
    let grid = EventGrid::from_cases(cohort.cases())?;
    let engine = BreslowEngine::partial_likelihood(&data, &grid);
    let (_, grad, _) = engine.loglik_score_info(gamma)?;
    Ok(grad.as_slice().to_vec())
}

/// Fit the truncation-adjusted Cox model by Newton iteration and estimate
/// the Breslow cumulative baseline hazard.
pub fn fit_cox_lt(cohort: &Cohort, opts: &CoxOptions) -> Result<CoxFit> {
    cohort.ensure_fit_ready()?;
    let data = CaseData::from_cohort(cohort);
    let grid = EventGrid::from_cases(cohort.cases())?;
    let engine = BreslowEngine::partial_likelihood(&data, &grid);
    let start = vec![0.0; data.p];
    let outcome = engine.newton(&start, opts)?;
    let lambda = engine.baseline_jumps(&outcome.gamma)?;
    let xi_hat = data.xi_hat(&grid, opts.xi_rule)?;
    Ok(CoxFit {
        gamma: outcome.gamma,
        grid,
        lambda,
        xi_hat,
        method: CoxMethod::PartialLikelihood,
        converged: outcome.converged,
        iterations: outcome.iterations,
        final_gradient_norm: outcome.gradient_norm,
    })
}
