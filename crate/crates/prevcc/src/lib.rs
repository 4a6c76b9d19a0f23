//! Odds-ratio estimation for case-control studies that include prevalent cases.
//!
//! Case-control studies usually enroll only newly diagnosed (incident) cases.
//! When survivors of earlier diagnoses (prevalent cases) are added, their
//! covariate distribution is tilted by survival: only subjects with disease
//! duration shorter than their survival time enter the sample. This crate
//! estimates disease-exposure log-odds ratios while correcting that bias by
//! incorporating prospective follow-up observed on the cases.
//!
//! Estimators:
//! - [`tilt::fit_two_step`] — two-step GMM: fit a Cox survival model on the
//!   cases first (either a truncation-adjusted partial likelihood,
//!   [`cox::fit_cox_lt`], or a fully efficient EM, [`em::fit_cox_em`]), then
//!   plug the estimated survival into a three-group pseudo-log-likelihood for
//!   the logistic parameters.
//! - [`tilt::fit_joint`] — joint parametric likelihood (Weibull baseline)
//!   for logistic and survival parameters together.
//! - [`tilt::fit_ipcc`] — cross-sectional-only estimator using backward
//!   times under a parametric survival model.
//!
//! Variance: analytic sandwich covariance via influence functions
//! ([`variance::sandwich_cov`]) and stratified bootstrap
//! ([`variance::bootstrap_cov`]). The [`sim`] module generates synthetic
//! cohorts and runs replication studies.

pub mod cox;
pub mod data;
pub mod em;
mod error;
pub(crate) mod numeric;
pub mod sim;
pub mod tilt;
pub mod variance;

pub use error::{Error, Result};
