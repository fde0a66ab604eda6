//! Test channels, probe ensembles, Pauli measurements and multinomial
//! sampling of count records.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::joint::{JointDataset, JointProbe};
use crate::linalg::{self, c, re, trace_re, CMat, Operator, SpaceLabel, C64};
use crate::objects::{born_probability, process_probability, ChoiOperator, CountRecord, DensityMatrix, Povm};
use crate::process::{ProbeSpec, ProcessDataset};

pub const INPUT_SPACE: &str = "H";
pub const OUTPUT_SPACE: &str = "K";

/// Qubit channels used by the experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelSpec {
    /// `|0⟩ ↦ cos θ|0⟩ + sin θ|1⟩`, `|1⟩ ↦ −sin θ|0⟩ + cos θ|1⟩`
    Rotation {
        theta: f64,
    },
    Depolarizing,
    Identity,
    /// `weight·a + (1 − weight)·b`
    Mixture {
        weight: f64,
        a: Box<ChannelSpec>,
        b: Box<ChannelSpec>,
    },
}

impl ChannelSpec {
    /// Half depolarizing, half a rotation by `π/8`.
    pub fn test_channel() -> Self {
        Self::mixture(0.5, ChannelSpec::Depolarizing, ChannelSpec::Rotation { theta: std::f64::consts::PI / 8.0 })
    }

    pub fn mixture(weight: f64, a: ChannelSpec, b: ChannelSpec) -> Self {
        ChannelSpec::Mixture { weight, a: Box::new(a), b: Box::new(b) }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ChannelSpec::Rotation { theta } if !theta.is_finite() => {
                Err(Error::InvalidArgument(format!("rotation angle must be finite, got {theta}")))
            }
            ChannelSpec::Mixture { weight, a, b } => {
                if !(0.0..=1.0).contains(weight) {
                    return Err(Error::InvalidArgument(format!("mixture weight must lie in [0, 1], got {weight}")));
                }
                a.validate()?;
                b.validate()
            }
            _ => Ok(()),
        }
    }

    fn choi_matrix(&self) -> CMat {
        match self {
            ChannelSpec::Rotation { theta } => {
                let (s, co) = theta.sin_cos();
                unitary_choi(&CMat::from_row_slice(2, 2, &[re(co), re(-s), re(s), re(co)]))
            }
            ChannelSpec::Depolarizing => linalg::identity(4) / re(2.0),
            ChannelSpec::Identity => unitary_choi(&linalg::identity(2)),
            ChannelSpec::Mixture { weight, a, b } => a.choi_matrix() * re(*weight) + b.choi_matrix() * re(1.0 - weight),
        }
    }
}

/// `Σ_ij |i⟩⟨j| ⊗ U|i⟩⟨j|U†`
fn unitary_choi(u: &CMat) -> CMat {
    let d = u.nrows();
    let mut m = CMat::zeros(d * d, d * d);
    for i in 0..d {
        for j in 0..d {
            let block = u.column(i) * u.column(j).adjoint();
            m.view_mut((i * d, j * d), (d, d)).copy_from(&block);
        }
    }
    m
}

pub fn build_choi(spec: &ChannelSpec) -> Result<ChoiOperator> {
    spec.validate()?;
    ChoiOperator::from_matrix(
        SpaceLabel::new(INPUT_SPACE, 2)?,
        SpaceLabel::new(OUTPUT_SPACE, 2)?,
        linalg::hermitize(&spec.choi_matrix()),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn bloch(self) -> [f64; 3] {
        match self {
            Axis::X => [1.0, 0.0, 0.0],
            Axis::Y => [0.0, 1.0, 0.0],
            Axis::Z => [0.0, 0.0, 1.0],
        }
    }

    /// Parses strings like `"xyz"` or `"x,y"`.
    pub fn parse_set(s: &str) -> Result<Vec<Axis>> {
        let mut out = Vec::new();
        for ch in s.chars().filter(|c| !matches!(c, ',' | ' ')) {
            let a: Axis = ch.to_string().parse()?;
            if out.contains(&a) {
                return Err(Error::InvalidArgument(format!("axis {a} listed twice in {s:?}")));
            }
            out.push(a);
        }
        if out.is_empty() {
            return Err(Error::InvalidArgument("no measurement axes given".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            _ => Err(Error::InvalidArgument(format!("unknown axis {s:?}"))),
        }
    }
}

/// `(I + r·σ)/2`
pub fn bloch_matrix(r: [f64; 3]) -> CMat {
    let [x, y, z] = r;
    CMat::from_row_slice(2, 2, &[re(0.5 + z / 2.0), c(x / 2.0, -y / 2.0), c(x / 2.0, y / 2.0), re(0.5 - z / 2.0)])
}

/// Both eigenprojectors of every listed Pauli operator, `+` first, each
/// scaled by `1/|axes|`.
pub fn pauli_povm(space: &str, axes: &[Axis]) -> Result<Povm> {
    if axes.is_empty() {
        return Err(Error::InvalidArgument("no measurement axes given".into()));
    }
    let w = re(1.0 / axes.len() as f64);
    let mut elements = Vec::with_capacity(2 * axes.len());
    for a in axes {
        let [x, y, z] = a.bloch();
        elements.push(Operator::on(space, bloch_matrix([x, y, z]) * w)?);
        elements.push(Operator::on(space, bloch_matrix([-x, -y, -z]) * w)?);
    }
    Povm::new(elements)
}

/// The six eigenstates of the Pauli operators, ordered `+x, −x, +y, −y, +z, −z`.
pub fn pauli_eigenstates(space: &str) -> Vec<DensityMatrix> {
    let mut out = Vec::new();
    for a in [Axis::X, Axis::Y, Axis::Z] {
        let [x, y, z] = a.bloch();
        for s in [1.0, -1.0] {
            out.push(DensityMatrix::from_matrix(space, bloch_matrix([s * x, s * y, s * z])).expect("valid state"));
        }
    }
    out
}

/// A reproducible random stream: `master` seeds the generator and `stream`
/// selects an independent sequence within it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSeed {
    pub master: u64,
    pub stream: u64,
}

impl RngSeed {
    pub fn new(master: u64, stream: u64) -> Self {
        Self { master, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.stream);
        rng
    }

    /// Stream for trial `trial` of sweep point `point`.
    pub fn trial(master: u64, point: u32, trial: u32) -> Self {
        Self { master, stream: (u64::from(point) << 32) | u64::from(trial) }
    }
}

/// Hilbert–Schmidt random state `GG†/Tr[GG†]` with standard complex normal `G`.
pub fn random_mixed_state_with<R: Rng + ?Sized>(rng: &mut R, space: &str, dim: usize) -> Result<DensityMatrix> {
    if dim < 2 {
        return Err(Error::InvalidArgument(format!("random states need dimension ≥ 2, got {dim}")));
    }
    let g = CMat::from_fn(dim, dim, |_, _| {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        C64::new(a, b)
    });
    let gg = linalg::hermitize(&(&g * g.adjoint()));
    let t = trace_re(&gg);
    DensityMatrix::new(Operator::on(space, gg / re(t))?)
}

pub fn random_mixed_state(seed: RngSeed, dim: usize) -> Result<DensityMatrix> {
    random_mixed_state_with(&mut seed.rng(), INPUT_SPACE, dim)
}

/// Multinomial draw of `n` trials over `probs` by sequential binomials.
pub fn multinomial<R: Rng + ?Sized>(rng: &mut R, probs: &[f64], n: u64) -> Vec<u64> {
    let mut counts = vec![0; probs.len()];
    let mut left = n;
    let mut rest: f64 = probs.iter().map(|p| p.max(0.0)).sum();
    for (i, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        let p = p.max(0.0);
        if i + 1 == probs.len() {
            counts[i] = left;
            break;
        }
        let q = if rest > 0.0 { (p / rest).clamp(0.0, 1.0) } else { 0.0 };
        let k = Binomial::new(left, q).expect("probability in [0, 1]").sample(rng);
        counts[i] = k;
        left -= k;
        rest -= p;
    }
    counts
}

/// Counts for a POVM whose outcomes come in `groups` equal blocks, one block
/// per measurement setting, each setting measured on `n` fresh copies. The
/// merged record has total `groups·n`.
pub fn sample_split<R: Rng + ?Sized>(rng: &mut R, probs: &[f64], groups: usize, n: u64) -> Vec<u64> {
    assert!(groups > 0 && probs.len().is_multiple_of(groups), "outcomes must split into equal blocks");
    let size = probs.len() / groups;
    probs.chunks(size).flat_map(|block| multinomial(rng, block, n)).collect()
}

/// Multinomial sample of `n` outcomes of `povm` on `rho`.
pub fn sample_counts(rho: &DensityMatrix, povm: &Povm, n: u64, seed: RngSeed) -> Result<CountRecord> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample size must be at least 1".into()));
    }
    let probs = povm.elements().iter().map(|e| born_probability(rho, e)).collect::<Result<Vec<_>>>()?;
    CountRecord::new("povm", multinomial(&mut seed.rng(), &probs, n))
}

fn setting_name(axes: &[Axis]) -> String {
    axes.iter().map(|a| a.to_string()).collect()
}

/// A merged Pauli record: sampled with `n` copies per axis, or exact.
fn pauli_record<R: Rng + ?Sized>(
    rng: &mut R,
    probs: &[f64],
    axes: &[Axis],
    n: u64,
    exact: bool,
) -> Result<CountRecord> {
    let total = n * axes.len() as u64;
    if exact {
        let sum: f64 = probs.iter().sum();
        let p: Vec<f64> = probs.iter().map(|p| p / sum).collect();
        CountRecord::from_probabilities(setting_name(axes), &p, total)
    } else {
        CountRecord::new(setting_name(axes), sample_split(rng, probs, axes.len(), n))
    }
}

/// Ground truth behind a simulated joint dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointTruth {
    pub probes: Vec<DensityMatrix>,
    pub channel: ChoiOperator,
}

/// `m` Hilbert–Schmidt random probes sent through `spec`; every probe is
/// measured on `n` copies per input axis before and `n` copies per output
/// axis after the channel. Total sample count `(|in|+|out|)·m·n`.
pub fn generate_joint_dataset(
    spec: &ChannelSpec,
    m: usize,
    n: u64,
    in_axes: &[Axis],
    out_axes: &[Axis],
    seed: RngSeed,
    exact: bool,
) -> Result<(JointDataset, JointTruth)> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("M and N must be at least 1".into()));
    }
    let channel = build_choi(spec)?;
    let in_povm = pauli_povm(INPUT_SPACE, in_axes)?;
    let out_povm = pauli_povm(OUTPUT_SPACE, out_axes)?;
    let mut rng = seed.rng();
    let probes = (0..m).map(|_| random_mixed_state_with(&mut rng, INPUT_SPACE, 2)).collect::<Result<Vec<_>>>()?;
    let mut records = Vec::with_capacity(m);
    for rho in &probes {
        let pin = in_povm.elements().iter().map(|e| born_probability(rho, e)).collect::<Result<Vec<_>>>()?;
        let pout =
            out_povm.elements().iter().map(|e| process_probability(&channel, rho, e)).collect::<Result<Vec<_>>>()?;
        records.push(JointProbe {
            input_povm: in_povm.clone(),
            input_record: pauli_record(&mut rng, &pin, in_axes, n, exact)?,
            output_povm: out_povm.clone(),
            output_record: pauli_record(&mut rng, &pout, out_axes, n, exact)?,
        });
    }
    Ok((JointDataset::new(records)?, JointTruth { probes, channel }))
}

/// Known probes sent through `spec` and measured on `n` copies per output axis.
pub fn generate_process_dataset(
    spec: &ChannelSpec,
    probes: &[DensityMatrix],
    n: u64,
    out_axes: &[Axis],
    seed: RngSeed,
    exact: bool,
) -> Result<ProcessDataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    let channel = build_choi(spec)?;
    let povm = pauli_povm(OUTPUT_SPACE, out_axes)?;
    let mut rng = seed.rng();
    let mut records = Vec::with_capacity(probes.len());
    for rho in probes {
        let p = povm.elements().iter().map(|e| process_probability(&channel, rho, e)).collect::<Result<Vec<_>>>()?;
        records.push(pauli_record(&mut rng, &p, out_axes, n, exact)?);
    }
    ProcessDataset::new(probes.iter().cloned().map(ProbeSpec::Separable).collect(), vec![povm; probes.len()], records)
}
