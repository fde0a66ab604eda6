//! Maximum-likelihood reconstruction of trace-preserving CP maps from known
//! probes, via the iteration `S ↦ Λ⁻¹ K S K Λ⁻¹` with
//! `Λ = λ ⊗ I_K` and `λ = (Tr_K[K S K])^{1/2}`.
//!
//! Probes are either separable states on `H` measured on `K`, or states on
//! `H_A ⊗ H_B` whose `A` part passes through the channel while the POVM acts
//! on `K ⊗ H_B`. Either way each outcome reduces to a design operator `E` on
//! `H ⊗ K` with `p = Tr[S E]`, which is all the iteration needs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixedpoint::{ascend, MleOptions};
use crate::linalg::{
    self, hermitize, kron, max_abs_diff, permute_factors, ptrace, ptranspose, re, sqrt_and_inv_sqrt, trace_product,
    CMat, Operator, SpaceLabel,
};
use crate::objects::{channel_output, tp_residual, ChoiOperator, CountRecord, DensityMatrix, Povm};
use crate::state::mix;

/// Eigenvalues of `λ` below this are floored before inversion.
pub const LAMBDA_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "state", rename_all = "snake_case")]
pub enum ProbeSpec {
    /// State on the channel input `H`; the POVM acts on `K`.
    Separable(DensityMatrix),
    /// State on `H_A ⊗ H_B` (spaces in that order); the channel acts on `A`
    /// and the POVM acts on `K ⊗ H_B` (spaces in that order).
    Entangled(DensityMatrix),
}

impl ProbeSpec {
    pub fn input_space(&self) -> &SpaceLabel {
        match self {
            ProbeSpec::Separable(rho) | ProbeSpec::Entangled(rho) => &rho.spaces()[0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProcessDatasetRepr")]
pub struct ProcessDataset {
    probes: Vec<ProbeSpec>,
    povms: Vec<Povm>,
    records: Vec<CountRecord>,
    #[serde(skip)]
    input: Option<SpaceLabel>,
    #[serde(skip)]
    output: Option<SpaceLabel>,
}

#[derive(Deserialize)]
struct ProcessDatasetRepr {
    probes: Vec<ProbeSpec>,
    povms: Vec<Povm>,
    records: Vec<CountRecord>,
}

impl TryFrom<ProcessDatasetRepr> for ProcessDataset {
    type Error = Error;
    fn try_from(r: ProcessDatasetRepr) -> Result<Self> {
        ProcessDataset::new(r.probes, r.povms, r.records)
    }
}

impl ProcessDataset {
    pub fn new(probes: Vec<ProbeSpec>, povms: Vec<Povm>, records: Vec<CountRecord>) -> Result<Self> {
        if probes.is_empty() {
            return Err(Error::Dataset("no probes".into()));
        }
        if probes.len() != povms.len() || probes.len() != records.len() {
            return Err(Error::Dataset(format!(
                "{} probes, {} POVMs, {} records",
                probes.len(),
                povms.len(),
                records.len()
            )));
        }
        let mut input: Option<SpaceLabel> = None;
        let mut output: Option<SpaceLabel> = None;
        for (m, ((probe, povm), rec)) in probes.iter().zip(&povms).zip(&records).enumerate() {
            if povm.len() != rec.len() {
                return Err(Error::Dataset(format!(
                    "probe {m}: POVM has {} elements, record has {} outcomes",
                    povm.len(),
                    rec.len()
                )));
            }
            let out_space = match probe {
                ProbeSpec::Separable(rho) => {
                    if rho.spaces().len() != 1 {
                        return Err(Error::Dataset(format!("probe {m}: separable probe must live on one space")));
                    }
                    if povm.spaces().len() != 1 {
                        return Err(Error::Dataset(format!("probe {m}: separable probe needs a POVM on K")));
                    }
                    povm.spaces()[0].clone()
                }
                ProbeSpec::Entangled(rho) => {
                    if rho.spaces().len() != 2 || povm.spaces().len() != 2 {
                        return Err(Error::Dataset(format!(
                            "probe {m}: entangled probe needs a state on H_A⊗H_B and a POVM on K⊗H_B"
                        )));
                    }
                    if rho.spaces()[1].dim != povm.spaces()[1].dim {
                        return Err(Error::Dataset(format!("probe {m}: ancilla dimensions disagree")));
                    }
                    povm.spaces()[0].clone()
                }
            };
            let in_space = probe.input_space().clone();
            match (&input, &output) {
                (Some(i), Some(o)) => {
                    if i.dim != in_space.dim || o.dim != out_space.dim {
                        return Err(Error::Dataset(format!("probe {m}: channel dimensions differ from probe 0")));
                    }
                }
                _ => {
                    input = Some(in_space);
                    output = Some(out_space);
                }
            }
        }
        Ok(Self { probes, povms, records, input, output })
    }

    pub fn probes(&self) -> &[ProbeSpec] {
        &self.probes
    }

    pub fn povms(&self) -> &[Povm] {
        &self.povms
    }

    pub fn records(&self) -> &[CountRecord] {
        &self.records
    }

    pub fn input_space(&self) -> &SpaceLabel {
        self.input.as_ref().expect("validated")
    }

    pub fn output_space(&self) -> &SpaceLabel {
        self.output.as_ref().expect("validated")
    }

    pub fn dim_in(&self) -> usize {
        self.input_space().dim
    }

    pub fn dim_out(&self) -> usize {
        self.output_space().dim
    }

    /// Design operators `E_ml` on `H ⊗ K`, one list per probe.
    pub fn design_operators(&self) -> Vec<Vec<CMat>> {
        let dk = self.dim_out();
        self.probes
            .iter()
            .zip(&self.povms)
            .map(|(probe, povm)| match probe {
                ProbeSpec::Separable(rho) => {
                    let rt = rho.matrix().transpose();
                    povm.elements().iter().map(|e| kron(&rt, e.matrix())).collect()
                }
                ProbeSpec::Entangled(rho) => {
                    let da = rho.spaces()[0].dim;
                    let db = rho.spaces()[1].dim;
                    let rt_a = ptranspose(rho.matrix(), &[da, db], 0);
                    // (ρ^{T_A} ⊗ I_K) reordered from A,B,K to A,K,B
                    let left = permute_factors(&kron(&rt_a, &linalg::identity(dk)), &[da, db, dk], &[0, 2, 1]);
                    povm.elements()
                        .iter()
                        .map(|e| {
                            let right = kron(&linalg::identity(da), e.matrix());
                            hermitize(&ptrace(&(&left * right), &[da, dk, db], 2))
                        })
                        .collect()
                }
            })
            .collect()
    }

    fn check_choi(&self, s: &ChoiOperator) -> Result<()> {
        if s.dim_in() != self.dim_in() || s.dim_out() != self.dim_out() {
            return Err(Error::DimensionMismatch(format!(
                "channel is {}→{}, dataset is {}→{}",
                s.dim_in(),
                s.dim_out(),
                self.dim_in(),
                self.dim_out()
            )));
        }
        Ok(())
    }

    fn choi_spaces(&self) -> Vec<SpaceLabel> {
        vec![self.input_space().clone(), self.output_space().clone()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessMleReport {
    pub estimate: ChoiOperator,
    pub loglike: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `‖Tr_K[S] − I_H‖_max` of the estimate.
    pub tp_residual: f64,
    pub loglike_trace: Vec<f64>,
}

/// Per-probe data with zero-frequency outcomes removed. Separable probes
/// keep `ρ` and the output effects apart, so probabilities come from the
/// channel output and `K` needs one tensor product per probe.
pub(crate) enum Block {
    Separable { rho: CMat, freqs: Vec<f64>, effects: Vec<CMat> },
    General { freqs: Vec<f64>, ops: Vec<CMat> },
}

pub(crate) struct Design {
    pub blocks: Vec<Block>,
    pub dh: usize,
    pub dk: usize,
    pub floor: f64,
}

fn nonzero<T: Clone>(freqs: &[f64], items: impl IntoIterator<Item = T>) -> (Vec<f64>, Vec<T>) {
    freqs.iter().zip(items).filter(|(f, _)| **f > 0.0).map(|(f, e)| (*f, e)).unzip()
}

impl Design {
    pub fn new(ds: &ProcessDataset, floor: f64) -> Self {
        let mut blocks = Vec::new();
        let designs = ds.design_operators();
        for ((probe, povm), (rec, ops)) in ds.probes.iter().zip(&ds.povms).zip(ds.records.iter().zip(designs)) {
            let f = rec.frequencies();
            blocks.push(match probe {
                ProbeSpec::Separable(rho) => {
                    let (freqs, effects) = nonzero(&f, povm.elements().iter().map(|e| e.matrix().clone()));
                    Block::Separable { rho: rho.matrix().clone(), freqs, effects }
                }
                ProbeSpec::Entangled(_) => {
                    let (freqs, ops) = nonzero(&f, ops);
                    Block::General { freqs, ops }
                }
            });
        }
        Self { blocks, dh: ds.dim_in(), dk: ds.dim_out(), floor }
    }

    /// Separable blocks for known states `rhos` with per-probe output data.
    pub fn separable(rhos: &[CMat], freqs: &[Vec<f64>], effects: &[Vec<CMat>], dk: usize, floor: f64) -> Self {
        let blocks = rhos
            .iter()
            .zip(freqs.iter().zip(effects))
            .map(|(rho, (f, e))| Block::Separable { rho: rho.clone(), freqs: f.clone(), effects: e.clone() })
            .collect();
        Self { blocks, dh: rhos[0].nrows(), dk, floor }
    }

    pub fn loglike(&self, s: &CMat) -> f64 {
        let mut total = 0.0;
        for b in &self.blocks {
            match b {
                Block::Separable { rho, freqs, effects } => {
                    let out = channel_output(s, rho, self.dh, self.dk);
                    for (f, e) in freqs.iter().zip(effects) {
                        total += f * trace_product(&out, e).re.max(self.floor).ln();
                    }
                }
                Block::General { freqs, ops } => {
                    for (f, e) in freqs.iter().zip(ops) {
                        total += f * trace_product(s, e).re.max(self.floor).ln();
                    }
                }
            }
        }
        total
    }

    pub fn kernel(&self, s: &CMat) -> CMat {
        let n = s.nrows();
        let mut k = CMat::zeros(n, n);
        for b in &self.blocks {
            match b {
                Block::Separable { rho, freqs, effects } => {
                    let out = channel_output(s, rho, self.dh, self.dk);
                    let mut g = CMat::zeros(self.dk, self.dk);
                    for (f, e) in freqs.iter().zip(effects) {
                        let p = trace_product(&out, e).re.max(self.floor);
                        g += e * re(f / p);
                    }
                    k += kron(&rho.transpose(), &g);
                }
                Block::General { freqs, ops } => {
                    for (f, e) in freqs.iter().zip(ops) {
                        let p = trace_product(s, e).re.max(self.floor);
                        k += e * re(f / p);
                    }
                }
            }
        }
        k
    }
}

/// `(a ⊗ I_K) x (a ⊗ I_K)` for Hermitian `a` on `H`.
fn sandwich_h(a: &CMat, x: &CMat, dk: usize) -> CMat {
    let big = kron(a, &linalg::identity(dk));
    hermitize(&(&big * x * &big))
}

/// One trace-preserving update `S ↦ Λ⁻¹ K S K Λ⁻¹`, followed by an exact
/// re-normalization `S ↦ (τ^{-1/2} ⊗ I) S (τ^{-1/2} ⊗ I)` with `τ = Tr_K[S]`.
pub(crate) fn tp_update(k: &CMat, s: &CMat, dh: usize, dk: usize) -> Result<CMat> {
    let ksk = hermitize(&(k * s * k));
    let (_, lambda_inv) = sqrt_and_inv_sqrt(&ptrace(&ksk, &[dh, dk], 1), LAMBDA_FLOOR)?;
    let next = sandwich_h(&lambda_inv, &ksk, dk);
    renormalize_tp(&next, dh, dk)
}

pub(crate) fn renormalize_tp(s: &CMat, dh: usize, dk: usize) -> Result<CMat> {
    let tau = ptrace(s, &[dh, dk], 1);
    let (_, tau_inv_sqrt) = sqrt_and_inv_sqrt(&tau, LAMBDA_FLOOR)?;
    Ok(sandwich_h(&tau_inv_sqrt, s, dk))
}

/// `Σ_{m,l} f_ml ln p_ml`, the constrained log-likelihood without the
/// multiplier term (which vanishes on trace-preserving maps up to a constant).
pub fn process_log_likelihood(ds: &ProcessDataset, s: &ChoiOperator) -> Result<f64> {
    ds.check_choi(s)?;
    Ok(Design::new(ds, MleOptions::default().prob_floor).loglike(s.matrix()))
}

/// `K = Σ_{m,l} (f_ml / p_ml) E_ml`
pub fn k_kernel(ds: &ProcessDataset, s: &ChoiOperator) -> Result<Operator> {
    ds.check_choi(s)?;
    let k = Design::new(ds, MleOptions::default().prob_floor).kernel(s.matrix());
    Operator::new(ds.choi_spaces(), k)
}

/// `λ = (Tr_K[K S K])^{1/2}` on `H`.
pub fn lambda_multiplier(k: &Operator, s: &ChoiOperator) -> Result<Operator> {
    if k.dim() != s.matrix().nrows() {
        return Err(Error::DimensionMismatch("kernel and Choi operator differ in size".into()));
    }
    let ksk = hermitize(&(k.matrix() * s.matrix() * k.matrix()));
    let lam = linalg::psd_sqrt(&ptrace(&ksk, &[s.dim_in(), s.dim_out()], 1))?;
    Operator::new(vec![s.input_space().clone()], lam)
}

pub fn process_step(ds: &ProcessDataset, s: &ChoiOperator) -> Result<ChoiOperator> {
    ds.check_choi(s)?;
    let k = Design::new(ds, MleOptions::default().prob_floor).kernel(s.matrix());
    let next = tp_update(&k, s.matrix(), ds.dim_in(), ds.dim_out())?;
    Ok(ChoiOperator::new_unchecked(Operator::new(s.op().spaces().to_vec(), next)?))
}

/// `‖Λ⁻¹KSKΛ⁻¹ − S‖_max`
pub fn process_stationarity_residual(ds: &ProcessDataset, s: &ChoiOperator) -> Result<f64> {
    let next = process_step(ds, s)?;
    Ok(max_abs_diff(next.matrix(), s.matrix()))
}

pub fn estimate_process(
    ds: &ProcessDataset,
    opts: &MleOptions,
    init: Option<&ChoiOperator>,
) -> Result<ProcessMleReport> {
    estimate_process_observed(ds, opts, init, |_, _| {})
}

pub fn estimate_process_observed(
    ds: &ProcessDataset,
    opts: &MleOptions,
    init: Option<&ChoiOperator>,
    mut observe: impl FnMut(usize, &ChoiOperator),
) -> Result<ProcessMleReport> {
    let (dh, dk) = (ds.dim_in(), ds.dim_out());
    let spaces = ds.choi_spaces();
    let start = match init {
        Some(s) => {
            ds.check_choi(s)?;
            s.matrix().clone()
        }
        None => linalg::identity(dh * dk) / re(dk as f64),
    };
    let design = Design::new(ds, opts.prob_floor);
    let wrap = |m: &CMat| ChoiOperator::new_unchecked(Operator::new(spaces.clone(), m.clone()).expect("square"));
    let out = ascend(
        start,
        opts,
        |s| design.loglike(s),
        |s| tp_update(&design.kernel(s), s, dh, dk),
        mix,
        max_abs_diff,
        |it, s| observe(it, &wrap(s)),
    )?;
    let estimate = ChoiOperator::new(Operator::new(spaces, out.value)?)?;
    Ok(ProcessMleReport {
        tp_residual: tp_residual(estimate.matrix(), dh, dk),
        estimate,
        loglike: out.loglike,
        iterations: out.iterations,
        converged: out.converged,
        loglike_trace: out.trace,
    })
}
