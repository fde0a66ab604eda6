//! Approximate estimators: a Gaussian surrogate of the state likelihood, and
//! process reconstruction with only the total-trace constraint `Tr S = dim H`
//! in place of `Tr_K S = I_H`. The latter is compared against the exact
//! estimator by the ensemble variance `⟨Tr[(S_est − S_true)²]⟩`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_trials, Execution};
use crate::fixedpoint::{ascend, MleOptions};
use crate::linalg::{self, hermitize, max_abs_diff, re, trace_product, trace_re, CMat, Operator, C64};
use crate::objects::{tp_residual, ChoiOperator, DensityMatrix};
use crate::process::{estimate_process, Design, ProcessDataset, ProcessMleReport};
use crate::sim::{build_choi, generate_process_dataset, pauli_eigenstates, Axis, ChannelSpec, RngSeed, INPUT_SPACE};
use crate::state::{mix, MleReport, StateDataset};
use crate::stats::{bootstrap_mean_ci, mean};

/// Floor on `p(1 − p)` in the Gaussian variances.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Number of starting points of the Gaussian ascent.
pub const GAUSSIAN_STARTS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianObjective {
    pub dataset: StateDataset,
    /// Sample size entering `σ_l² = p_l(1 − p_l)/N`.
    pub n: u64,
}

impl GaussianObjective {
    pub fn new(dataset: StateDataset, n: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("sample size must be at least 1".into()));
        }
        Ok(Self { dataset, n })
    }

    /// Uses the record total as `N`.
    pub fn from_dataset(dataset: StateDataset) -> Self {
        let n = dataset.record().total();
        Self { dataset, n }
    }

    fn parts(&self) -> (Vec<f64>, Vec<CMat>) {
        let f = self.dataset.record().frequencies();
        let e = self.dataset.povm().elements().iter().map(|e| e.matrix().clone()).collect();
        (f, e)
    }
}

fn variance_of(p: f64) -> (f64, f64) {
    let v = p * (1.0 - p);
    if v > VARIANCE_FLOOR {
        (v, 1.0 - 2.0 * p)
    } else {
        (VARIANCE_FLOOR, 0.0)
    }
}

fn gaussian_value(freqs: &[f64], effects: &[CMat], n: f64, rho: &CMat) -> f64 {
    freqs
        .iter()
        .zip(effects)
        .map(|(f, e)| {
            let p = trace_product(rho, e).re;
            let (v, _) = variance_of(p);
            -(f - p).powi(2) * n / (2.0 * v)
        })
        .sum()
}

/// `∂J/∂ρ` as an operator: `Σ_l (∂J/∂p_l) Π_l`.
fn gaussian_gradient(freqs: &[f64], effects: &[CMat], n: f64, rho: &CMat) -> CMat {
    let d = rho.nrows();
    let mut g = CMat::zeros(d, d);
    for (f, e) in freqs.iter().zip(effects) {
        let p = trace_product(rho, e).re;
        let (v, dv) = variance_of(p);
        let r = f - p;
        g += e * re(n * (r / v + r * r * dv / (2.0 * v * v)));
    }
    g
}

/// `−Σ_l (f_l − p_l)² / (2σ_l²)` with `σ_l² = max(p_l(1 − p_l), 1e-12)/N`.
pub fn gaussian_loglike(obj: &GaussianObjective, rho: &DensityMatrix) -> Result<f64> {
    if rho.dim() != obj.dataset.dim() {
        return Err(Error::DimensionMismatch("state and dataset dimensions differ".into()));
    }
    let (f, e) = obj.parts();
    Ok(gaussian_value(&f, &e, obj.n as f64, rho.matrix()))
}

fn rho_of(a: &CMat) -> CMat {
    let r = hermitize(&(a.adjoint() * a));
    let t = trace_re(&r);
    r / re(t)
}

fn frob2(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

struct Ascent {
    rho: CMat,
    value: f64,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

/// Gradient ascent on `A` with `ρ = A†A/Tr[A†A]`, Barzilai–Borwein step
/// lengths and Armijo backtracking.
fn ascend_factorized(freqs: &[f64], effects: &[CMat], n: f64, a0: CMat, opts: &MleOptions) -> Ascent {
    let d = a0.nrows();
    let value = |a: &CMat| gaussian_value(freqs, effects, n, &rho_of(a));
    let grad = |a: &CMat| {
        let t = frob2(a);
        let rho = rho_of(a);
        let g = gaussian_gradient(freqs, effects, n, &rho);
        let c = trace_product(&g, &rho).re;
        (a * (g - linalg::identity(d) * re(c))) * re(2.0 / t)
    };
    let mut a = &a0 / re(frob2(&a0).sqrt());
    let mut j = value(&a);
    let mut g = grad(&a);
    let mut step = 1.0 / (1.0 + g.iter().map(|z| z.norm()).fold(0.0, f64::max));
    let mut trace = vec![j];
    for it in 1..=opts.max_iters {
        let g2 = frob2(&g);
        let mut eta = step;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &a + &g * re(eta);
            let jc = value(&cand);
            if jc >= j + 1e-4 * eta * g2 {
                accepted = Some((cand, jc));
                break;
            }
            eta *= 0.5;
        }
        let Some((cand, jc)) = accepted else {
            // No ascent direction left at working precision.
            let rho = rho_of(&a);
            return Ascent { rho, value: j, iterations: it, converged: true, trace };
        };
        let cand = &cand / re(frob2(&cand).sqrt());
        let gc = grad(&cand);
        let moved = max_abs_diff(&rho_of(&cand), &rho_of(&a));
        let dj = jc - j;
        let s = &cand - &a;
        let y = &gc - &g;
        let sy: f64 = s.iter().zip(y.iter()).map(|(u, v)| (u.conj() * v).re).sum();
        step = if sy.abs() > 0.0 { (frob2(&s) / sy.abs()).clamp(1e-12, 1e12) } else { eta * 2.0 };
        a = cand;
        j = jc;
        g = gc;
        trace.push(j);
        if moved < opts.tol_fixedpoint && dj.abs() < opts.tol_loglike {
            return Ascent { rho: rho_of(&a), value: j, iterations: it, converged: true, trace };
        }
    }
    Ascent { rho: rho_of(&a), value: j, iterations: opts.max_iters, converged: false, trace }
}

/// Maximizes [`gaussian_loglike`] over density matrices. The first start is
/// the maximally mixed state, the others are fixed pseudo-random points; the
/// best result is returned and `loglike` holds the Gaussian objective.
pub fn estimate_state_gaussian(obj: &GaussianObjective, opts: &MleOptions) -> Result<MleReport> {
    opts.validate()?;
    let (f, e) = obj.parts();
    let d = obj.dataset.dim();
    let mut rng = RngSeed::new(0, 0).rng();
    let mut best: Option<Ascent> = None;
    for k in 0..GAUSSIAN_STARTS {
        let a0 = if k == 0 {
            linalg::identity(d)
        } else {
            CMat::from_fn(d, d, |_, _| {
                let x: f64 = rng.sample(StandardNormal);
                let y: f64 = rng.sample(StandardNormal);
                C64::new(x, y)
            })
        };
        let run = ascend_factorized(&f, &e, obj.n as f64, a0, opts);
        if best.as_ref().is_none_or(|b| run.value > b.value) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one start");
    let estimate = DensityMatrix::new(Operator::new(obj.dataset.povm().spaces().to_vec(), best.rho)?)?;
    Ok(MleReport {
        estimate,
        loglike: best.value,
        iterations: best.iterations,
        converged: best.converged,
        loglike_trace: best.trace,
    })
}

/// Iterates `S ↦ K S K · dim H / Tr[K S K]`, which keeps only `Tr S = dim H`.
/// The reported `tp_residual` is generally nonzero.
pub fn estimate_process_trace_only(ds: &ProcessDataset, opts: &MleOptions) -> Result<ProcessMleReport> {
    estimate_process_trace_only_observed(ds, opts, |_, _| {})
}

pub fn estimate_process_trace_only_observed(
    ds: &ProcessDataset,
    opts: &MleOptions,
    mut observe: impl FnMut(usize, &CMat),
) -> Result<ProcessMleReport> {
    let (dh, dk) = (ds.dim_in(), ds.dim_out());
    let design = Design::new(ds, opts.prob_floor);
    let out = ascend(
        linalg::identity(dh * dk) / re(dk as f64),
        opts,
        |s| design.loglike(s),
        |s| {
            let k = design.kernel(s);
            let ksk = hermitize(&(&k * s * &k));
            let t = trace_re(&ksk);
            Ok(ksk * re(dh as f64 / t))
        },
        mix,
        max_abs_diff,
        |it, s| observe(it, s),
    )?;
    let spaces = vec![ds.input_space().clone(), ds.output_space().clone()];
    let residual = tp_residual(&out.value, dh, dk);
    Ok(ProcessMleReport {
        estimate: ChoiOperator::new_unchecked(Operator::new(spaces, out.value)?),
        loglike: out.loglike,
        iterations: out.iterations,
        converged: out.converged,
        tp_residual: residual,
        loglike_trace: out.trace,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComparisonConfig {
    pub channel: ChannelSpec,
    /// Known probe states; the six Pauli eigenstates by default.
    pub probes: Vec<DensityMatrix>,
    pub out_axes: Vec<Axis>,
    /// Copies per output axis and probe.
    pub n: u64,
    pub trials: usize,
    pub seed: u64,
    /// Index separating the random streams of different sweep points.
    pub point: u32,
    /// Use the exact estimator in place of the approximate one (control run).
    pub exact_control: bool,
    /// Replace sampled frequencies by the exact probabilities.
    pub exact_frequencies: bool,
    pub mle: MleOptions,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            channel: ChannelSpec::Rotation { theta: std::f64::consts::PI / 8.0 },
            probes: pauli_eigenstates(INPUT_SPACE),
            out_axes: vec![Axis::X, Axis::Y, Axis::Z],
            n: 1000,
            trials: 500,
            seed: 0,
            point: 0,
            exact_control: false,
            exact_frequencies: false,
            mle: MleOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub n: u64,
    pub trials: usize,
    /// `σ_E² = ⟨Tr[(S_E − S_true)²]⟩`
    pub var_exact: f64,
    /// `σ_A² = ⟨Tr[(S_A − S_true)²]⟩`
    pub var_approx: f64,
    /// `σ_A² / σ_E²`
    pub ratio: f64,
    /// 95% paired bootstrap interval for `σ_A² − σ_E²`.
    pub diff_ci: [f64; 2],
    pub nonconverged_exact: usize,
    pub nonconverged_approx: usize,
    pub mean_tp_residual_approx: f64,
    pub sq_errors_exact: Vec<f64>,
    pub sq_errors_approx: Vec<f64>,
}

/// `Tr[(a − b)²]` for Hermitian `a`, `b`.
pub fn squared_error(a: &CMat, b: &CMat) -> f64 {
    frob2(&(a - b))
}

pub const BOOTSTRAP_REPS: usize = 2000;

pub fn compare_variances(cfg: &ComparisonConfig, exec: Execution) -> Result<ComparisonReport> {
    if cfg.trials < 2 {
        return Err(Error::InvalidArgument("at least two trials are needed".into()));
    }
    cfg.mle.validate()?;
    let truth = build_choi(&cfg.channel)?;
    let trial = |t: usize| -> Result<(f64, f64, bool, bool, f64)> {
        let seed = RngSeed::trial(cfg.seed, cfg.point, t as u32);
        let ds =
            generate_process_dataset(&cfg.channel, &cfg.probes, cfg.n, &cfg.out_axes, seed, cfg.exact_frequencies)?;
        let e = estimate_process(&ds, &cfg.mle, None)?;
        let a = if cfg.exact_control { e.clone() } else { estimate_process_trace_only(&ds, &cfg.mle)? };
        Ok((
            squared_error(e.estimate.matrix(), truth.matrix()),
            squared_error(a.estimate.matrix(), truth.matrix()),
            e.converged,
            a.converged,
            a.tp_residual,
        ))
    };
    let rows = map_trials(exec, cfg.trials, trial).into_iter().collect::<Result<Vec<_>>>()?;
    let sq_errors_exact: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let sq_errors_approx: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let diffs: Vec<f64> = rows.iter().map(|r| r.1 - r.0).collect();
    let (lo, hi) =
        bootstrap_mean_ci(&diffs, BOOTSTRAP_REPS, 0.95, RngSeed::new(cfg.seed, u64::MAX - u64::from(cfg.point)));
    let var_exact = mean(&sq_errors_exact);
    let var_approx = mean(&sq_errors_approx);
    Ok(ComparisonReport {
        n: cfg.n,
        trials: cfg.trials,
        var_exact,
        var_approx,
        ratio: var_approx / var_exact,
        diff_ci: [lo, hi],
        nonconverged_exact: rows.iter().filter(|r| !r.2).count(),
        nonconverged_approx: rows.iter().filter(|r| !r.3).count(),
        mean_tp_residual_approx: mean(&rows.iter().map(|r| r.4).collect::<Vec<_>>()),
        sq_errors_exact,
        sq_errors_approx,
    })
}
