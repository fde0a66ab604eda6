//! Maximum-likelihood state reconstruction by the symmetric `RρR` iteration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixedpoint::{ascend, MleOptions};
use crate::linalg::{hermitize, max_abs_diff, re, trace_product, trace_re, CMat, Operator};
use crate::objects::{CountRecord, DensityMatrix, Povm};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateDatasetRepr")]
pub struct StateDataset {
    povm: Povm,
    record: CountRecord,
}

#[derive(Deserialize)]
struct StateDatasetRepr {
    povm: Povm,
    record: CountRecord,
}

impl TryFrom<StateDatasetRepr> for StateDataset {
    type Error = Error;
    fn try_from(r: StateDatasetRepr) -> Result<Self> {
        StateDataset::new(r.povm, r.record)
    }
}

impl StateDataset {
    pub fn new(povm: Povm, record: CountRecord) -> Result<Self> {
        if povm.len() != record.len() {
            return Err(Error::Dataset(format!(
                "POVM has {} elements but the record has {} outcomes",
                povm.len(),
                record.len()
            )));
        }
        Ok(Self { povm, record })
    }

    pub fn povm(&self) -> &Povm {
        &self.povm
    }

    pub fn record(&self) -> &CountRecord {
        &self.record
    }

    pub fn dim(&self) -> usize {
        self.povm.dim()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleReport {
    pub estimate: DensityMatrix,
    pub loglike: f64,
    pub iterations: usize,
    pub converged: bool,
    pub loglike_trace: Vec<f64>,
}

/// Frequencies and effects unpacked for the inner loop. Outcomes with zero
/// frequency are dropped: they contribute neither to `L` nor to `R`.
pub(crate) struct Terms {
    pub freqs: Vec<f64>,
    pub effects: Vec<CMat>,
    pub floor: f64,
}

impl Terms {
    pub fn new(povm: &Povm, freqs: &[f64], floor: f64) -> Self {
        let (freqs, effects) =
            povm.elements().iter().zip(freqs).filter(|(_, &f)| f > 0.0).map(|(e, &f)| (f, e.matrix().clone())).unzip();
        Self { freqs, effects, floor }
    }

    pub fn loglike(&self, rho: &CMat) -> f64 {
        self.freqs.iter().zip(&self.effects).map(|(f, e)| f * trace_product(rho, e).re.max(self.floor).ln()).sum()
    }

    pub fn kernel(&self, rho: &CMat) -> CMat {
        let n = rho.nrows();
        let mut r = CMat::zeros(n, n);
        for (f, e) in self.freqs.iter().zip(&self.effects) {
            let p = trace_product(rho, e).re.max(self.floor);
            r += e * re(f / p);
        }
        r
    }
}

/// `ρ ↦ RρR / Tr[RρR]`
pub(crate) fn rhor(r: &CMat, rho: &CMat) -> CMat {
    let next = hermitize(&(r * rho * r));
    let t = trace_re(&next);
    next / re(t)
}

pub(crate) fn mix(a: &CMat, b: &CMat, delta: f64) -> CMat {
    a * re(1.0 - delta) + b * re(delta)
}

fn terms(ds: &StateDataset, floor: f64) -> Terms {
    Terms::new(&ds.povm, &ds.record.frequencies(), floor)
}

fn check_dims(ds: &StateDataset, rho: &DensityMatrix) -> Result<()> {
    if rho.dim() != ds.dim() {
        return Err(Error::DimensionMismatch(format!("state has dimension {}, dataset has {}", rho.dim(), ds.dim())));
    }
    Ok(())
}

/// `Σ_l f_l ln p_l` with probabilities floored at the default floor.
pub fn log_likelihood(ds: &StateDataset, rho: &DensityMatrix) -> Result<f64> {
    check_dims(ds, rho)?;
    Ok(terms(ds, MleOptions::default().prob_floor).loglike(rho.matrix()))
}

/// `R = Σ_l (f_l / p_l) Π_l`
pub fn r_kernel(ds: &StateDataset, rho: &DensityMatrix) -> Result<Operator> {
    check_dims(ds, rho)?;
    let r = terms(ds, MleOptions::default().prob_floor).kernel(rho.matrix());
    Operator::new(ds.povm.spaces().to_vec(), r)
}

/// One undamped iteration `ρ ↦ RρR / Tr[RρR]`.
pub fn mle_step(ds: &StateDataset, rho: &DensityMatrix) -> Result<DensityMatrix> {
    check_dims(ds, rho)?;
    let r = terms(ds, MleOptions::default().prob_floor).kernel(rho.matrix());
    let next = rhor(&r, rho.matrix());
    Ok(DensityMatrix::new_unchecked(Operator::new(rho.spaces().to_vec(), next)?))
}

/// `‖RρR/μ² − ρ‖_max`, zero exactly at a fixed point.
pub fn stationarity_residual(ds: &StateDataset, rho: &DensityMatrix) -> Result<f64> {
    let next = mle_step(ds, rho)?;
    Ok(max_abs_diff(next.matrix(), rho.matrix()))
}

pub fn estimate_state(ds: &StateDataset, opts: &MleOptions, init: Option<&DensityMatrix>) -> Result<MleReport> {
    estimate_state_observed(ds, opts, init, |_, _| {})
}

/// [`estimate_state`] calling `observe(iteration, iterate)` on every iterate,
/// starting with the initial one.
pub fn estimate_state_observed(
    ds: &StateDataset,
    opts: &MleOptions,
    init: Option<&DensityMatrix>,
    mut observe: impl FnMut(usize, &DensityMatrix),
) -> Result<MleReport> {
    let spaces = ds.povm.spaces().to_vec();
    let start = match init {
        Some(rho) => {
            check_dims(ds, rho)?;
            rho.matrix().clone()
        }
        None => DensityMatrix::maximally_mixed(spaces.clone()).matrix().clone(),
    };
    let t = terms(ds, opts.prob_floor);
    let wrap = |m: &CMat| DensityMatrix::new_unchecked(Operator::new(spaces.clone(), m.clone()).expect("square"));
    let out = ascend(
        start,
        opts,
        |rho| t.loglike(rho),
        |rho| Ok(rhor(&t.kernel(rho), rho)),
        mix,
        max_abs_diff,
        |it, rho| observe(it, &wrap(rho)),
    )?;
    let estimate = DensityMatrix::new(Operator::new(spaces.clone(), out.value)?)?;
    Ok(MleReport {
        estimate,
        loglike: out.loglike,
        iterations: out.iterations,
        converged: out.converged,
        loglike_trace: out.trace,
    })
}
