//! Simultaneous reconstruction of unknown probe states and the process acting
//! on them, from measurements on both the input and the output ensembles.
//!
//! Each sweep first updates every probe by `ρ_m ↦ R_m ρ_m R_m / μ_m²` with
//! the current process held fixed, then updates the process by the
//! trace-preserving step of [`crate::process`] using the new probes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixedpoint::{safeguarded_step, MleOptions};
use crate::linalg::{self, max_abs_diff, re, CMat, Operator, SpaceLabel};
use crate::objects::{tp_residual, ChoiOperator, CountRecord, DensityMatrix, Povm};
use crate::process::{tp_update, Design, ProbeSpec, ProcessDataset};
use crate::state::{estimate_state, mix, rhor, StateDataset, Terms};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointProbe {
    pub input_povm: Povm,
    pub input_record: CountRecord,
    pub output_povm: Povm,
    pub output_record: CountRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "JointDatasetRepr")]
pub struct JointDataset {
    probes: Vec<JointProbe>,
}

#[derive(Deserialize)]
struct JointDatasetRepr {
    probes: Vec<JointProbe>,
}

impl TryFrom<JointDatasetRepr> for JointDataset {
    type Error = Error;
    fn try_from(r: JointDatasetRepr) -> Result<Self> {
        JointDataset::new(r.probes)
    }
}

impl JointDataset {
    pub fn new(probes: Vec<JointProbe>) -> Result<Self> {
        let Some(first) = probes.first() else {
            return Err(Error::Dataset("no probes".into()));
        };
        let (dh, dk) = (first.input_povm.dim(), first.output_povm.dim());
        for (m, p) in probes.iter().enumerate() {
            if p.input_povm.spaces().len() != 1 || p.output_povm.spaces().len() != 1 {
                return Err(Error::Dataset(format!("probe {m}: POVMs must act on a single space")));
            }
            if p.input_povm.dim() != dh || p.output_povm.dim() != dk {
                return Err(Error::Dataset(format!("probe {m}: dimensions differ from probe 0")));
            }
            if p.input_povm.len() != p.input_record.len() || p.output_povm.len() != p.output_record.len() {
                return Err(Error::Dataset(format!("probe {m}: POVM and record sizes differ")));
            }
        }
        Ok(Self { probes })
    }

    pub fn probes(&self) -> &[JointProbe] {
        &self.probes
    }

    pub fn len(&self) -> usize {
        self.probes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }

    pub fn input_space(&self) -> &SpaceLabel {
        &self.probes[0].input_povm.spaces()[0]
    }

    pub fn output_space(&self) -> &SpaceLabel {
        &self.probes[0].output_povm.spaces()[0]
    }

    pub fn dim_in(&self) -> usize {
        self.input_space().dim
    }

    pub fn dim_out(&self) -> usize {
        self.output_space().dim
    }

    /// True when some input POVM does not span the operator space, so the
    /// probe states are not determined by the input data alone.
    pub fn input_underdetermined(&self) -> bool {
        self.probes.iter().any(|p| !p.input_povm.is_informationally_complete())
    }

    fn check(&self, rhos: &[DensityMatrix], s: &ChoiOperator) -> Result<()> {
        if rhos.len() != self.len() {
            return Err(Error::DimensionMismatch(format!("{} probe states for {} probes", rhos.len(), self.len())));
        }
        if rhos.iter().any(|r| r.dim() != self.dim_in()) || s.dim_in() != self.dim_in() || s.dim_out() != self.dim_out()
        {
            return Err(Error::DimensionMismatch("probe or channel dimensions differ from the dataset".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointReport {
    pub probe_estimates: Vec<DensityMatrix>,
    pub process_estimate: ChoiOperator,
    /// Input plus output log-likelihood.
    pub loglike: f64,
    pub input_loglike: f64,
    pub output_loglike: f64,
    pub iterations: usize,
    pub converged: bool,
    pub tp_residual: f64,
    /// Set when the input POVMs cannot determine the probes on their own.
    pub underdetermined: bool,
    pub loglike_trace: Vec<f64>,
}

/// Simultaneous and sequential reports for the same data, with
/// `delta = L_sim − L_seq` and `ratio = L_sim / L_seq`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointComparison {
    pub simultaneous: JointReport,
    pub sequential: JointReport,
    pub delta: f64,
    pub ratio: f64,
}

/// `Y = Tr_K[S^{T_H} (I_H ⊗ G)]`, the operator on `H` with
/// `Tr[S (ρᵀ ⊗ G)] = Tr[ρ Y]`.
pub(crate) fn pullback(s: &CMat, g: &CMat, dh: usize, dk: usize) -> CMat {
    let mut y = CMat::zeros(dh, dh);
    for h in 0..dh {
        for h2 in 0..dh {
            let mut acc = linalg::C64::new(0.0, 0.0);
            for k in 0..dk {
                for k2 in 0..dk {
                    acc += s[(h * dk + k, h2 * dk + k2)] * g[(k2, k)];
                }
            }
            y[(h2, h)] = acc;
        }
    }
    y
}

/// The data in bare-matrix form, zero frequencies dropped on the output side.
struct Prepared {
    dh: usize,
    dk: usize,
    floor: f64,
    input: Vec<Terms>,
    out_freqs: Vec<Vec<f64>>,
    out_effects: Vec<Vec<CMat>>,
}

impl Prepared {
    fn new(ds: &JointDataset, floor: f64) -> Self {
        let mut out_freqs = Vec::new();
        let mut out_effects = Vec::new();
        let mut input = Vec::new();
        for p in &ds.probes {
            input.push(Terms::new(&p.input_povm, &p.input_record.frequencies(), floor));
            let (f, e): (Vec<f64>, Vec<CMat>) = p
                .output_povm
                .elements()
                .iter()
                .zip(p.output_record.frequencies())
                .filter(|(_, f)| *f > 0.0)
                .map(|(e, f)| (f, e.matrix().clone()))
                .unzip();
            out_freqs.push(f);
            out_effects.push(e);
        }
        Self { dh: ds.dim_in(), dk: ds.dim_out(), floor, input, out_freqs, out_effects }
    }

    /// Terms of the probe-`m` subproblem at fixed `S`: the input effects plus
    /// the pulled-back output effects.
    fn probe_terms(&self, m: usize, s: &CMat) -> Terms {
        let mut freqs = self.input[m].freqs.clone();
        let mut effects = self.input[m].effects.clone();
        for (f, e) in self.out_freqs[m].iter().zip(&self.out_effects[m]) {
            freqs.push(*f);
            effects.push(pullback(s, e, self.dh, self.dk));
        }
        Terms { freqs, effects, floor: self.floor }
    }

    fn design(&self, rhos: &[CMat]) -> Design {
        Design::separable(rhos, &self.out_freqs, &self.out_effects, self.dk, self.floor)
    }

    fn input_loglike(&self, rhos: &[CMat]) -> f64 {
        self.input.iter().zip(rhos).map(|(t, r)| t.loglike(r)).sum()
    }

    fn output_loglike(&self, rhos: &[CMat], s: &CMat) -> f64 {
        self.design(rhos).loglike(s)
    }

    /// One Gauss–Seidel sweep. Returns the largest entry change proposed by
    /// the undiluted updates.
    fn sweep(&self, rhos: &mut [CMat], s: &mut CMat, damping: f64) -> Result<f64> {
        let mut moved: f64 = 0.0;
        for (m, rho) in rhos.iter_mut().enumerate() {
            let terms = self.probe_terms(m, s);
            let l0 = terms.loglike(rho);
            let prop = rhor(&terms.kernel(rho), rho);
            moved = moved.max(max_abs_diff(&prop, rho));
            let acc = safeguarded_step(rho, l0, prop, damping, |r| terms.loglike(r), mix);
            *rho = acc.value;
        }
        let design = self.design(rhos);
        let l0 = design.loglike(s);
        let prop = tp_update(&design.kernel(s), s, self.dh, self.dk)?;
        moved = moved.max(max_abs_diff(&prop, s));
        let acc = safeguarded_step(s, l0, prop, damping, |x| design.loglike(x), mix);
        *s = acc.value;
        Ok(moved)
    }
}

fn wrap_states(ds: &JointDataset, rhos: &[CMat]) -> Vec<DensityMatrix> {
    let sp = vec![ds.input_space().clone()];
    rhos.iter().map(|r| DensityMatrix::new_unchecked(Operator::new(sp.clone(), r.clone()).expect("square"))).collect()
}

fn wrap_choi(ds: &JointDataset, s: &CMat) -> ChoiOperator {
    let sp = vec![ds.input_space().clone(), ds.output_space().clone()];
    ChoiOperator::new_unchecked(Operator::new(sp, s.clone()).expect("square"))
}

/// `Σ_{m,k} f_mk ln p_mk + Σ_{m,l} F_ml ln P_ml`
pub fn joint_log_likelihood(ds: &JointDataset, rhos: &[DensityMatrix], s: &ChoiOperator) -> Result<f64> {
    ds.check(rhos, s)?;
    let prep = Prepared::new(ds, MleOptions::default().prob_floor);
    let raw: Vec<CMat> = rhos.iter().map(|r| r.matrix().clone()).collect();
    Ok(prep.input_loglike(&raw) + prep.output_loglike(&raw, s.matrix()))
}

/// `R_m = Σ_k (f_mk/p_mk) π_mk + Tr_K[S^{T_H} (I_H ⊗ Σ_l (F_ml/P_ml) Π_ml)]`
pub fn rm_kernel(ds: &JointDataset, m: usize, rhos: &[DensityMatrix], s: &ChoiOperator) -> Result<Operator> {
    ds.check(rhos, s)?;
    if m >= ds.len() {
        return Err(Error::InvalidArgument(format!("probe index {m} out of range")));
    }
    let prep = Prepared::new(ds, MleOptions::default().prob_floor);
    let r = prep.probe_terms(m, s.matrix()).kernel(rhos[m].matrix());
    Operator::new(vec![ds.input_space().clone()], r)
}

/// One sweep: every probe, then the process.
pub fn joint_step(
    ds: &JointDataset,
    rhos: &[DensityMatrix],
    s: &ChoiOperator,
) -> Result<(Vec<DensityMatrix>, ChoiOperator)> {
    ds.check(rhos, s)?;
    let prep = Prepared::new(ds, MleOptions::default().prob_floor);
    let mut raw: Vec<CMat> = rhos.iter().map(|r| r.matrix().clone()).collect();
    let mut sm = s.matrix().clone();
    prep.sweep(&mut raw, &mut sm, 0.0)?;
    Ok((wrap_states(ds, &raw), wrap_choi(ds, &sm)))
}

pub fn estimate_joint(ds: &JointDataset, opts: &MleOptions) -> Result<JointReport> {
    run_joint(ds, opts, None)
}

/// [`estimate_joint`] calling `observe(sweep, probes, process)` on every
/// iterate, starting with the initial one.
pub fn estimate_joint_observed(
    ds: &JointDataset,
    opts: &MleOptions,
    mut observe: impl FnMut(usize, &[DensityMatrix], &ChoiOperator),
) -> Result<JointReport> {
    run_joint(ds, opts, Some(&mut observe))
}

type Observer<'a> = &'a mut dyn FnMut(usize, &[DensityMatrix], &ChoiOperator);

fn run_joint(ds: &JointDataset, opts: &MleOptions, mut observe: Option<Observer>) -> Result<JointReport> {
    opts.validate()?;
    let prep = Prepared::new(ds, opts.prob_floor);
    let (dh, dk) = (prep.dh, prep.dk);
    let mut rhos = vec![linalg::identity(dh) / re(dh as f64); ds.len()];
    let mut s = linalg::identity(dh * dk) / re(dk as f64);
    let total = |rhos: &[CMat], s: &CMat| prep.input_loglike(rhos) + prep.output_loglike(rhos, s);
    let mut l = total(&rhos, &s);
    let mut trace = vec![l];
    if let Some(obs) = observe.as_mut() {
        obs(0, &wrap_states(ds, &rhos), &wrap_choi(ds, &s));
    }
    let mut converged = false;
    let mut iterations = opts.max_iters;
    for it in 1..=opts.max_iters {
        let moved = prep.sweep(&mut rhos, &mut s, opts.damping)?;
        let next = total(&rhos, &s);
        let dl = next - l;
        l = next;
        trace.push(l);
        if let Some(obs) = observe.as_mut() {
            obs(it, &wrap_states(ds, &rhos), &wrap_choi(ds, &s));
        }
        if moved < opts.tol_fixedpoint && dl.abs() < opts.tol_loglike {
            converged = true;
            iterations = it;
            break;
        }
    }
    finish(ds, &prep, rhos, s, iterations, converged, trace)
}

fn finish(
    ds: &JointDataset,
    prep: &Prepared,
    rhos: Vec<CMat>,
    s: CMat,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
) -> Result<JointReport> {
    let input_loglike = prep.input_loglike(&rhos);
    let output_loglike = prep.output_loglike(&rhos, &s);
    let sp = vec![ds.input_space().clone()];
    let probe_estimates =
        rhos.into_iter().map(|r| DensityMatrix::new(Operator::new(sp.clone(), r)?)).collect::<Result<Vec<_>>>()?;
    let process_estimate =
        ChoiOperator::new(Operator::new(vec![ds.input_space().clone(), ds.output_space().clone()], s)?)?;
    Ok(JointReport {
        tp_residual: tp_residual(process_estimate.matrix(), prep.dh, prep.dk),
        probe_estimates,
        process_estimate,
        loglike: input_loglike + output_loglike,
        input_loglike,
        output_loglike,
        iterations,
        converged,
        underdetermined: ds.input_underdetermined(),
        loglike_trace: trace,
    })
}

/// State reconstruction of every probe from its input record, followed by
/// process reconstruction with those probes treated as known.
pub fn sequential_baseline(ds: &JointDataset, opts: &MleOptions) -> Result<JointReport> {
    opts.validate()?;
    let mut probes = Vec::with_capacity(ds.len());
    let mut iterations = 0;
    let mut converged = true;
    for p in &ds.probes {
        let rep = estimate_state(&StateDataset::new(p.input_povm.clone(), p.input_record.clone())?, opts, None)?;
        iterations += rep.iterations;
        converged &= rep.converged;
        probes.push(rep.estimate);
    }
    let pds = ProcessDataset::new(
        probes.iter().cloned().map(ProbeSpec::Separable).collect(),
        ds.probes.iter().map(|p| p.output_povm.clone()).collect(),
        ds.probes.iter().map(|p| p.output_record.clone()).collect(),
    )?;
    let rep = crate::process::estimate_process(&pds, opts, None)?;
    iterations += rep.iterations;
    converged &= rep.converged;
    let prep = Prepared::new(ds, opts.prob_floor);
    let raw: Vec<CMat> = probes.iter().map(|r| r.matrix().clone()).collect();
    // The Choi operator carries the dataset's space labels.
    finish(ds, &prep, raw, rep.estimate.matrix().clone(), iterations, converged, rep.loglike_trace)
}

pub fn compare_joint_sequential(ds: &JointDataset, opts: &MleOptions) -> Result<JointComparison> {
    let simultaneous = estimate_joint(ds, opts)?;
    let sequential = sequential_baseline(ds, opts)?;
    Ok(JointComparison {
        delta: simultaneous.loglike - sequential.loglike,
        ratio: simultaneous.loglike / sequential.loglike,
        simultaneous,
        sequential,
    })
}
