//! Safeguarded fixed-point ascent shared by the iterative estimators.
//!
//! Each step proposes a new iterate. If the proposal lowers the
//! log-likelihood it is diluted towards the current iterate with weights
//! `δ ∈ {½, ¾, ⅞, ...}` until the likelihood no longer decreases. When no
//! dilution helps the iterate is kept, which also ends the run.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objects::PROB_FLOOR;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MleOptions {
    pub max_iters: usize,
    pub tol_loglike: f64,
    pub tol_fixedpoint: f64,
    pub prob_floor: f64,
    /// Constant dilution applied to every step: `(1 − δ)·proposal + δ·current`.
    pub damping: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self { max_iters: 10_000, tol_loglike: 1e-10, tol_fixedpoint: 1e-9, prob_floor: PROB_FLOOR, damping: 0.0 }
    }
}

impl MleOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(self.tol_loglike > 0.0 && self.tol_fixedpoint > 0.0 && self.prob_floor > 0.0) {
            return Err(Error::InvalidArgument("tolerances and probability floor must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidArgument(format!("damping must lie in [0, 1), got {}", self.damping)));
        }
        Ok(())
    }
}

/// Number of dilution levels tried before a step is abandoned.
const MAX_DILUTIONS: i32 = 40;

/// Log-likelihood decreases smaller than this (relative to `1 + |L|`) are
/// rounding noise and do not trigger dilution.
const ROUNDOFF_SLACK: f64 = 1e-14;

pub(crate) fn no_worse(l_new: f64, l_old: f64) -> bool {
    l_new >= l_old - ROUNDOFF_SLACK * (1.0 + l_old.abs())
}

pub(crate) struct Accepted<T> {
    pub value: T,
    pub loglike: f64,
}

/// Accepts `proposal` (optionally pre-diluted by `damping`) or the least
/// diluted mixture that does not lower the log-likelihood.
pub(crate) fn safeguarded_step<T>(
    current: &T,
    l_current: f64,
    proposal: T,
    damping: f64,
    loglike: impl Fn(&T) -> f64,
    mix: impl Fn(&T, &T, f64) -> T,
) -> Accepted<T>
where
    T: Clone,
{
    let first = if damping > 0.0 { mix(&proposal, current, damping) } else { proposal.clone() };
    let l_first = loglike(&first);
    if no_worse(l_first, l_current) {
        return Accepted { value: first, loglike: l_first };
    }
    for k in 1..=MAX_DILUTIONS {
        let delta = 1.0 - 0.5_f64.powi(k);
        if delta <= damping {
            continue;
        }
        let cand = mix(&proposal, current, delta);
        let l = loglike(&cand);
        if no_worse(l, l_current) {
            return Accepted { value: cand, loglike: l };
        }
    }
    Accepted { value: current.clone(), loglike: l_current }
}

pub(crate) struct Outcome<T> {
    pub value: T,
    pub loglike: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

/// Runs safeguarded steps until both the max-entry change proposed by the
/// undiluted map is below `tol_fixedpoint` and the log-likelihood change is
/// below `tol_loglike`, or `max_iters` is reached. Measuring the undiluted
/// proposal keeps heavily diluted steps from passing for convergence.
#[allow(clippy::too_many_arguments)]
pub(crate) fn ascend<T: Clone>(
    init: T,
    opts: &MleOptions,
    loglike: impl Fn(&T) -> f64,
    propose: impl Fn(&T) -> Result<T>,
    mix: impl Fn(&T, &T, f64) -> T,
    distance: impl Fn(&T, &T) -> f64,
    mut observe: impl FnMut(usize, &T),
) -> Result<Outcome<T>> {
    opts.validate()?;
    let mut x = init;
    let mut l = loglike(&x);
    let mut trace = vec![l];
    observe(0, &x);
    for it in 1..=opts.max_iters {
        let prop = propose(&x)?;
        let moved = distance(&prop, &x);
        let step = safeguarded_step(&x, l, prop, opts.damping, &loglike, &mix);
        let dl = step.loglike - l;
        x = step.value;
        l = step.loglike;
        trace.push(l);
        observe(it, &x);
        if moved < opts.tol_fixedpoint && dl.abs() < opts.tol_loglike {
            return Ok(Outcome { value: x, loglike: l, iterations: it, converged: true, trace });
        }
    }
    Ok(Outcome { value: x, loglike: l, iterations: opts.max_iters, converged: false, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn options_validation() {
        assert!(MleOptions::default().validate().is_ok());
        let bad = MleOptions { max_iters: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = MleOptions { damping: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = MleOptions { tol_loglike: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn overshooting_steps_are_diluted() {
        // Maximize -(x-1)^2 with a proposal that overshoots to 3 - x.
        let ll = |x: &f64| -(x - 1.0).powi(2);
        let mix = |p: &f64, c: &f64, d: f64| (1.0 - d) * p + d * c;
        let acc = safeguarded_step(&-0.5, ll(&-0.5), 3.5, 0.0, ll, mix);
        assert!(acc.loglike >= ll(&-0.5));
        assert!((acc.value - (0.5 * 3.5 + 0.5 * -0.5)).abs() < 1e-15);
    }

    #[test]
    fn stalled_steps_keep_the_iterate() {
        let ll = |x: &f64| -(x - 1.0).powi(2);
        let mix = |p: &f64, c: &f64, d: f64| (1.0 - d) * p + d * c;
        let acc = safeguarded_step(&1.0, 0.0, 2.0, 0.0, ll, mix);
        assert!(no_worse(acc.loglike, 0.0));
        assert!((acc.value - 1.0).abs() < 1e-6);
        let acc = safeguarded_step(&1.0, 0.0, 2.0, 0.0, |x: &f64| if *x == 1.0 { 0.0 } else { -1.0 }, mix);
        assert_eq!(acc.value, 1.0);
    }

    #[test]
    fn ascend_reports_monotone_trace() {
        let opts = MleOptions::default();
        let out = ascend(
            0.0_f64,
            &opts,
            |x| -(x - 1.0).powi(2),
            |x| Ok(x + 1.9 * (1.0 - x)),
            |p, c, d| (1.0 - d) * p + d * c,
            |a, b| (a - b).abs(),
            |_, _| {},
        )
        .unwrap();
        assert!(out.converged);
        assert!((out.value - 1.0).abs() < 1e-6);
        assert!(out.trace.windows(2).all(|w| no_worse(w[1], w[0])));
    }
}
