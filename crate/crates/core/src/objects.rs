//! Validated physical objects: density matrices, POVMs, Choi operators and
//! count records.
//!
//! Constructors check every invariant. The `unchecked` constructors exist for
//! estimator internals, whose iterates are positive and normalized by
//! construction and get validated once at convergence.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{
    self, hermiticity_defect, max_abs, max_abs_diff, min_eigenvalue, ptrace, re, CMat, Operator, SpaceLabel, C64,
    HERM_TOL, PSD_TOL,
};

/// Normalization tolerance for traces, POVM completeness and trace preservation.
pub const NORM_TOL: f64 = 1e-9;
/// Probabilities are floored here before entering logarithms or `f/p` ratios.
pub const PROB_FLOOR: f64 = 1e-12;

fn check_hermitian(m: &CMat) -> Result<()> {
    let defect = hermiticity_defect(m);
    if defect > HERM_TOL * max_abs(m).max(f64::MIN_POSITIVE) {
        return Err(Error::NotHermitian(defect));
    }
    Ok(())
}

fn check_positive(m: &CMat) -> Result<()> {
    let w = min_eigenvalue(m);
    if w < -PSD_TOL {
        return Err(Error::NotPositive(w));
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    op: Operator,
}

impl DensityMatrix {
    pub fn new(op: Operator) -> Result<Self> {
        check_hermitian(op.matrix())?;
        check_positive(op.matrix())?;
        let tr = op.trace();
        if (tr - re(1.0)).norm() > NORM_TOL {
            return Err(Error::Trace { got: tr.re, expected: 1.0 });
        }
        Ok(Self { op })
    }

    pub fn new_unchecked(op: Operator) -> Self {
        Self { op }
    }

    pub fn from_matrix(space: &str, mat: CMat) -> Result<Self> {
        Self::new(Operator::on(space, mat)?)
    }

    pub fn maximally_mixed(spaces: Vec<SpaceLabel>) -> Self {
        let id = Operator::identity(spaces);
        let d = id.dim() as f64;
        Self { op: id.scale(re(1.0 / d)) }
    }

    /// `|ψ⟩⟨ψ|` for a (not necessarily normalized) vector `psi`.
    pub fn pure(space: &str, psi: &[C64]) -> Result<Self> {
        let norm2: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if norm2 <= 0.0 {
            return Err(Error::InvalidArgument("zero state vector".into()));
        }
        let n = psi.len();
        let mat = CMat::from_fn(n, n, |i, j| psi[i] * psi[j].conj() / norm2);
        Self::from_matrix(space, mat)
    }

    pub fn op(&self) -> &Operator {
        &self.op
    }

    pub fn matrix(&self) -> &CMat {
        self.op.matrix()
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn spaces(&self) -> &[SpaceLabel] {
        self.op.spaces()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(self.matrix())
    }

    /// Trace distance `½ ‖ρ − σ‖₁`.
    pub fn trace_distance(&self, other: &DensityMatrix) -> Result<f64> {
        let diff = self.op.sub(&other.op)?;
        let (w, _) = diff.herm_eig()?;
        Ok(0.5 * w.iter().map(|x| x.abs()).sum::<f64>())
    }
}

impl Serialize for DensityMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.op.serialize(s)
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        DensityMatrix::new(Operator::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct Povm {
    elements: Vec<Operator>,
}

impl Povm {
    pub fn new(elements: Vec<Operator>) -> Result<Self> {
        let first =
            elements.first().ok_or_else(|| Error::InvalidArgument("a POVM needs at least one element".into()))?;
        let mut sum = CMat::zeros(first.dim(), first.dim());
        for e in &elements {
            if !e.same_spaces(first) {
                return Err(Error::DimensionMismatch("POVM elements live on different spaces".into()));
            }
            check_hermitian(e.matrix())?;
            check_positive(e.matrix())?;
            sum += e.matrix();
        }
        let dev = max_abs_diff(&sum, &linalg::identity(first.dim()));
        if dev > NORM_TOL {
            return Err(Error::Completeness(dev));
        }
        Ok(Self { elements })
    }

    /// The single-outcome measurement `{I}`, which carries no information.
    pub fn trivial(spaces: Vec<SpaceLabel>) -> Self {
        Self { elements: vec![Operator::identity(spaces)] }
    }

    pub fn elements(&self) -> &[Operator] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn spaces(&self) -> &[SpaceLabel] {
        self.elements[0].spaces()
    }

    pub fn dim(&self) -> usize {
        self.elements[0].dim()
    }

    /// Dimension of the real span of the elements as Hermitian operators.
    /// Equals `dim²` exactly when the POVM is tomographically complete.
    pub fn span_rank(&self) -> usize {
        let n = self.dim();
        let rows = self.elements.len();
        let cols = 2 * n * n;
        let mut a = nalgebra::DMatrix::<f64>::zeros(rows.max(1), cols);
        for (r, e) in self.elements.iter().enumerate() {
            for (k, z) in e.matrix().iter().enumerate() {
                a[(r, 2 * k)] = z.re;
                a[(r, 2 * k + 1)] = z.im;
            }
        }
        let sv = a.svd(false, false).singular_values;
        let top = sv.iter().cloned().fold(0.0, f64::max);
        sv.iter().filter(|&&s| s > 1e-10 * top.max(1.0)).count()
    }

    pub fn is_informationally_complete(&self) -> bool {
        self.span_rank() == self.dim() * self.dim()
    }
}

impl Serialize for Povm {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.elements.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Povm {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Povm::new(Vec::<Operator>::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------

/// Choi operator `S` on `H ⊗ K` of a completely positive trace-preserving
/// map, `ρ_out = Tr_H[S (ρ_inᵀ ⊗ I_K)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChoiOperator {
    op: Operator,
}

impl ChoiOperator {
    pub fn new(op: Operator) -> Result<Self> {
        if op.spaces().len() != 2 {
            return Err(Error::DimensionMismatch(format!(
                "a Choi operator lives on exactly two spaces (H, K), got {}",
                op.spaces().len()
            )));
        }
        check_hermitian(op.matrix())?;
        check_positive(op.matrix())?;
        let choi = Self { op };
        let res = choi.tp_residual();
        if res > NORM_TOL {
            return Err(Error::NotTracePreserving(res));
        }
        Ok(choi)
    }

    pub fn new_unchecked(op: Operator) -> Self {
        Self { op }
    }

    pub fn from_matrix(input: SpaceLabel, output: SpaceLabel, mat: CMat) -> Result<Self> {
        Self::new(Operator::new(vec![input, output], mat)?)
    }

    /// `I_{H⊗K} / dim K`, the completely depolarizing map.
    pub fn depolarizing(input: SpaceLabel, output: SpaceLabel) -> Self {
        let dk = output.dim as f64;
        Self { op: Operator::identity(vec![input, output]).scale(re(1.0 / dk)) }
    }

    pub fn op(&self) -> &Operator {
        &self.op
    }

    pub fn matrix(&self) -> &CMat {
        self.op.matrix()
    }

    pub fn input_space(&self) -> &SpaceLabel {
        &self.op.spaces()[0]
    }

    pub fn output_space(&self) -> &SpaceLabel {
        &self.op.spaces()[1]
    }

    pub fn dim_in(&self) -> usize {
        self.input_space().dim
    }

    pub fn dim_out(&self) -> usize {
        self.output_space().dim
    }

    /// `‖Tr_K[S] − I_H‖_max`
    pub fn tp_residual(&self) -> f64 {
        tp_residual(self.matrix(), self.dim_in(), self.dim_out())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(self.matrix())
    }

    /// The independent real parameters of a trace-preserving Choi matrix:
    /// entries of the upper triangle in row-major order, real part only on
    /// the diagonal, skipping the entries fixed by `Tr_K[S] = I` (those whose
    /// row and column both sit at the last `K` index with `h ≤ h'`).
    /// A qubit channel yields 12 numbers.
    pub fn free_parameters(&self) -> Vec<f64> {
        free_parameters(self.matrix(), self.dim_in(), self.dim_out())
    }
}

pub(crate) fn tp_residual(s: &CMat, dh: usize, dk: usize) -> f64 {
    max_abs_diff(&ptrace(s, &[dh, dk], 1), &linalg::identity(dh))
}

pub(crate) fn free_parameters(s: &CMat, dh: usize, dk: usize) -> Vec<f64> {
    let n = dh * dk;
    let mut out = Vec::with_capacity(n * n - dh * dh);
    for i in 0..n {
        for j in i..n {
            let (ki, kj) = (i % dk, j % dk);
            if ki == dk - 1 && kj == dk - 1 {
                continue;
            }
            out.push(s[(i, j)].re);
            if i != j {
                out.push(s[(i, j)].im);
            }
        }
    }
    out
}

/// Names of the entries returned by [`ChoiOperator::free_parameters`], e.g.
/// `re_S_01_10` for `Re S[(h=0,k=1),(h'=1,k'=0)]`.
pub fn free_parameter_labels(dh: usize, dk: usize) -> Vec<String> {
    let n = dh * dk;
    let idx = |i: usize| format!("{}{}", i / dk, i % dk);
    let mut out = Vec::new();
    for i in 0..n {
        for j in i..n {
            if i % dk == dk - 1 && j % dk == dk - 1 {
                continue;
            }
            out.push(format!("re_S_{}_{}", idx(i), idx(j)));
            if i != j {
                out.push(format!("im_S_{}_{}", idx(i), idx(j)));
            }
        }
    }
    out
}

impl Serialize for ChoiOperator {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.op.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ChoiOperator {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        ChoiOperator::new(Operator::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------

/// Outcome counts for one measurement setting.
///
/// `exact`, when present, holds noiseless outcome probabilities that replace
/// `counts / total` as the observed frequencies. Counts are still populated
/// (largest-remainder rounding of `total · p`) so that `Σ counts = total`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RecordRepr", into = "RecordRepr")]
pub struct CountRecord {
    setting: String,
    counts: Vec<u64>,
    total: u64,
    exact: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct RecordRepr {
    setting: String,
    counts: Vec<u64>,
    total: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    exact: Option<Vec<f64>>,
}

impl TryFrom<RecordRepr> for CountRecord {
    type Error = Error;
    fn try_from(r: RecordRepr) -> Result<Self> {
        match r.exact {
            Some(p) => {
                let rec = CountRecord::from_probabilities(r.setting, &p, r.total)?;
                if rec.counts != r.counts {
                    return Err(Error::Record("counts disagree with exact probabilities".into()));
                }
                Ok(rec)
            }
            None => {
                let rec = CountRecord::new(r.setting, r.counts)?;
                if rec.total != r.total {
                    return Err(Error::Record(format!("counts sum to {}, total says {}", rec.total, r.total)));
                }
                Ok(rec)
            }
        }
    }
}

impl From<CountRecord> for RecordRepr {
    fn from(r: CountRecord) -> Self {
        RecordRepr { setting: r.setting, counts: r.counts, total: r.total, exact: r.exact }
    }
}

impl CountRecord {
    pub fn new(setting: impl Into<String>, counts: Vec<u64>) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if counts.is_empty() || total == 0 {
            return Err(Error::Record("a record needs at least one count".into()));
        }
        Ok(Self { setting: setting.into(), counts, total, exact: None })
    }

    /// Noiseless record: frequencies equal `probs` exactly.
    pub fn from_probabilities(setting: impl Into<String>, probs: &[f64], total: u64) -> Result<Self> {
        if probs.is_empty() || total == 0 {
            return Err(Error::Record("empty probability vector or zero total".into()));
        }
        if probs.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::Record("probabilities must be finite and nonnegative".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORM_TOL {
            return Err(Error::Record(format!("probabilities sum to {sum}")));
        }
        Ok(Self {
            setting: setting.into(),
            counts: largest_remainder(probs, total),
            total,
            exact: Some(probs.to_vec()),
        })
    }

    pub fn setting(&self) -> &str {
        &self.setting
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn is_exact(&self) -> bool {
        self.exact.is_some()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        match &self.exact {
            Some(p) => p.clone(),
            None => {
                let n = self.total as f64;
                self.counts.iter().map(|&k| k as f64 / n).collect()
            }
        }
    }
}

fn largest_remainder(probs: &[f64], total: u64) -> Vec<u64> {
    let scaled: Vec<f64> = probs.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<u64> = scaled.iter().map(|x| x.floor() as u64).collect();
    let assigned: u64 = counts.iter().sum();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = scaled[a] - scaled[a].floor();
        let rb = scaled[b] - scaled[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned) as usize) {
        counts[i] += 1;
    }
    counts
}

// ---------------------------------------------------------------------------

/// `M_S[ρ] = Tr_H[S (ρᵀ ⊗ I_K)]` on bare matrices.
pub(crate) fn channel_output(s: &CMat, rho: &CMat, dh: usize, dk: usize) -> CMat {
    let mut out = CMat::zeros(dk, dk);
    for k in 0..dk {
        for k2 in 0..dk {
            let mut acc = C64::new(0.0, 0.0);
            for h in 0..dh {
                for h2 in 0..dh {
                    acc += s[(h * dk + k, h2 * dk + k2)] * rho[(h, h2)];
                }
            }
            out[(k, k2)] = acc;
        }
    }
    out
}

fn check_channel_input(s: &ChoiOperator, rho: &DensityMatrix) -> Result<()> {
    if rho.dim() != s.dim_in() {
        return Err(Error::DimensionMismatch(format!(
            "state has dimension {}, channel input has {}",
            rho.dim(),
            s.dim_in()
        )));
    }
    Ok(())
}

pub fn apply_channel(s: &ChoiOperator, rho: &DensityMatrix) -> Result<DensityMatrix> {
    check_channel_input(s, rho)?;
    let out = channel_output(s.matrix(), rho.matrix(), s.dim_in(), s.dim_out());
    Ok(DensityMatrix::new_unchecked(Operator::new(vec![s.output_space().clone()], out)?))
}

/// `Tr[ρ Π]`, clamped to `[0, 1]`.
pub fn born_probability(rho: &DensityMatrix, e: &Operator) -> Result<f64> {
    if rho.dim() != e.dim() {
        return Err(Error::DimensionMismatch(format!("state has dimension {}, effect has {}", rho.dim(), e.dim())));
    }
    Ok(linalg::trace_product(rho.matrix(), e.matrix()).re.clamp(0.0, 1.0))
}

/// `Tr[S (ρᵀ ⊗ Π)]`, clamped to `[0, 1]`.
pub fn process_probability(s: &ChoiOperator, rho: &DensityMatrix, e: &Operator) -> Result<f64> {
    check_channel_input(s, rho)?;
    if e.dim() != s.dim_out() {
        return Err(Error::DimensionMismatch(format!(
            "effect has dimension {}, channel output has {}",
            e.dim(),
            s.dim_out()
        )));
    }
    let design = linalg::kron(&rho.matrix().transpose(), e.matrix());
    Ok(linalg::trace_product(s.matrix(), &design).re.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;
    use proptest::prelude::*;

    fn h() -> SpaceLabel {
        SpaceLabel::new("H", 2).unwrap()
    }
    fn k() -> SpaceLabel {
        SpaceLabel::new("K", 2).unwrap()
    }

    fn identity_choi() -> ChoiOperator {
        let mut m = CMat::zeros(4, 4);
        for i in 0..2 {
            for j in 0..2 {
                m[(3 * i, 3 * j)] = re(1.0);
            }
        }
        ChoiOperator::from_matrix(h(), k(), m).unwrap()
    }

    fn rotation_choi(theta: f64) -> ChoiOperator {
        let u = CMat::from_row_slice(2, 2, &[re(theta.cos()), re(-theta.sin()), re(theta.sin()), re(theta.cos())]);
        let mut m = CMat::zeros(4, 4);
        for i in 0..2 {
            for j in 0..2 {
                let mut eij = CMat::zeros(2, 2);
                eij[(i, j)] = re(1.0);
                let blk = &u * eij * u.adjoint();
                m.view_mut((2 * i, 2 * j), (2, 2)).copy_from(&blk);
            }
        }
        ChoiOperator::from_matrix(h(), k(), m).unwrap()
    }

    fn bloch(x: f64, y: f64, z: f64) -> DensityMatrix {
        DensityMatrix::from_matrix(
            "H",
            CMat::from_row_slice(
                2,
                2,
                &[re(0.5 + z / 2.0), c(x / 2.0, -y / 2.0), c(x / 2.0, y / 2.0), re(0.5 - z / 2.0)],
            ),
        )
        .unwrap()
    }

    fn proj(space: &str, psi: &[C64]) -> Operator {
        DensityMatrix::pure(space, psi).unwrap().op().clone()
    }

    #[test]
    fn density_matrix_validation() {
        assert!(DensityMatrix::from_matrix("H", linalg::identity(2) * re(0.5)).is_ok());
        let bad_trace = DensityMatrix::from_matrix("H", linalg::identity(2));
        assert!(matches!(bad_trace, Err(Error::Trace { .. })));
        let neg = CMat::from_row_slice(2, 2, &[re(1.2), re(0.0), re(0.0), re(-0.2)]);
        assert!(matches!(DensityMatrix::from_matrix("H", neg), Err(Error::NotPositive(_))));
        let skew = CMat::from_row_slice(2, 2, &[re(0.5), re(0.3), re(0.0), re(0.5)]);
        assert!(matches!(DensityMatrix::from_matrix("H", skew), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn povm_validation() {
        let z0 = proj("H", &[re(1.0), re(0.0)]);
        let z1 = proj("H", &[re(0.0), re(1.0)]);
        assert!(Povm::new(vec![z0.clone(), z1.clone()]).is_ok());
        assert!(matches!(Povm::new(vec![z0.clone()]), Err(Error::Completeness(_))));
        assert!(Povm::new(vec![]).is_err());
        let p = Povm::new(vec![z0, z1]).unwrap();
        assert_eq!(p.span_rank(), 2);
        assert!(!p.is_informationally_complete());
    }

    #[test]
    fn choi_validation() {
        assert!(identity_choi().tp_residual() < 1e-15);
        let not_tp = Operator::identity(vec![h(), k()]);
        assert!(matches!(ChoiOperator::new(not_tp), Err(Error::NotTracePreserving(_))));
        let one_space = Operator::identity(vec![h()]);
        assert!(ChoiOperator::new(one_space).is_err());
    }

    #[test]
    fn free_parameters_of_qubit_channel() {
        let s = rotation_choi(0.3);
        let p = s.free_parameters();
        assert_eq!(p.len(), 12);
        // First entry is S_00,00, the diagonal real part.
        assert_eq!(p[0], s.matrix()[(0, 0)].re);
        let labels = free_parameter_labels(2, 2);
        assert_eq!(labels.len(), 12);
        assert_eq!(labels[0], "re_S_00_00");
        assert_eq!(labels[1], "re_S_00_01");
        assert_eq!(labels[2], "im_S_00_01");
    }

    #[test]
    fn identity_channel_is_identity_map() {
        let rho = bloch(0.3, -0.4, 0.2);
        let out = apply_channel(&identity_choi(), &rho).unwrap();
        assert!(max_abs_diff(out.matrix(), rho.matrix()) < 1e-15);
    }

    #[test]
    fn depolarizing_channel_outputs_maximally_mixed() {
        let d = ChoiOperator::depolarizing(h(), k());
        let out = apply_channel(&d, &bloch(0.1, 0.7, -0.5)).unwrap();
        assert!(max_abs_diff(out.matrix(), &(linalg::identity(2) * re(0.5))) < 1e-15);
    }

    #[test]
    fn rotation_channel_rotates_ground_state() {
        let t = std::f64::consts::PI / 8.0;
        let out = apply_channel(&rotation_choi(t), &bloch(0.0, 0.0, 1.0)).unwrap();
        let want = proj("K", &[re(t.cos()), re(t.sin())]);
        assert!(max_abs_diff(out.matrix(), want.matrix()) < 1e-15);
    }

    #[test]
    fn born_probability_examples() {
        let mixed = DensityMatrix::from_matrix("H", linalg::identity(2) * re(0.5)).unwrap();
        assert!((born_probability(&mixed, &Operator::identity(vec![h()])).unwrap() - 1.0).abs() < 1e-15);
        let zero = bloch(0.0, 0.0, 1.0);
        assert_eq!(born_probability(&zero, &proj("H", &[re(0.0), re(1.0)])).unwrap(), 0.0);
        let plus = proj("H", &[re(1.0), re(1.0)]);
        assert!((born_probability(&bloch(1.0, 0.0, 0.0), &plus).unwrap() - 1.0).abs() < 1e-15);
        let three = Operator::identity(vec![SpaceLabel::new("X", 3).unwrap()]);
        assert!(born_probability(&mixed, &three).is_err());
    }

    #[test]
    fn process_probability_examples() {
        let rho = bloch(0.2, 0.1, -0.6);
        let e = proj("K", &[re(1.0), c(0.0, 1.0)]);
        let direct = born_probability(&rho, &e).unwrap();
        assert!((process_probability(&identity_choi(), &rho, &e).unwrap() - direct).abs() < 1e-15);
        let d = ChoiOperator::depolarizing(h(), k());
        assert!((process_probability(&d, &rho, &e).unwrap() - 0.5).abs() < 1e-15);

        // d = ½ mixture of depolarizing and π/8 rotation on |0⟩, measuring σ_z = +1.
        let t = std::f64::consts::PI / 8.0;
        let mix = ChoiOperator::from_matrix(h(), k(), (d.matrix() + rotation_choi(t).matrix()) * re(0.5)).unwrap();
        let z0 = proj("K", &[re(1.0), re(0.0)]);
        let p = process_probability(&mix, &bloch(0.0, 0.0, 1.0), &z0).unwrap();
        assert!((p - (0.25 + 0.5 * t.cos().powi(2))).abs() < 1e-15);
    }

    #[test]
    fn record_invariants() {
        let r = CountRecord::new("z", vec![3, 7]).unwrap();
        assert_eq!(r.total(), 10);
        assert_eq!(r.frequencies(), vec![0.3, 0.7]);
        assert!(CountRecord::new("z", vec![0, 0]).is_err());
        let e = CountRecord::from_probabilities("z", &[0.25, 0.75], 3).unwrap();
        assert_eq!(e.counts().iter().sum::<u64>(), 3);
        assert_eq!(e.frequencies(), vec![0.25, 0.75]);
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(json, r#"{"setting":"z","counts":[3,7],"total":10}"#);
        let bad = r#"{"setting":"z","counts":[3,7],"total":11}"#;
        assert!(serde_json::from_str::<CountRecord>(bad).is_err());
    }

    proptest! {
        #[test]
        fn perturbed_states_are_rejected(eps in 1e-6f64..0.1) {
            let m = CMat::from_row_slice(2, 2, &[re(1.0 + eps), re(0.0), re(0.0), re(-eps)]);
            prop_assert!(DensityMatrix::from_matrix("H", m).is_err());
            let m = CMat::from_row_slice(2, 2, &[re(0.5 + eps), re(0.0), re(0.0), re(0.5)]);
            prop_assert!(DensityMatrix::from_matrix("H", m).is_err());
        }

        #[test]
        fn apply_channel_is_linear(a in 0.0f64..1.0, x in -0.5f64..0.5, y in -0.5f64..0.5, t in 0.0f64..3.0) {
            let s = rotation_choi(t);
            let r1 = bloch(x, y, 0.3);
            let r2 = bloch(-y, 0.2, x);
            let mix = DensityMatrix::from_matrix("H", r1.matrix() * re(a) + r2.matrix() * re(1.0 - a)).unwrap();
            let lhs = apply_channel(&s, &mix).unwrap();
            let rhs = apply_channel(&s, &r1).unwrap().matrix() * re(a)
                + apply_channel(&s, &r2).unwrap().matrix() * re(1.0 - a);
            prop_assert!(max_abs_diff(lhs.matrix(), &rhs) < 1e-12);
        }

        #[test]
        fn process_probabilities_are_normalized(t in 0.0f64..3.0, w in 0.0f64..1.0, x in -0.5f64..0.5) {
            let d = ChoiOperator::depolarizing(h(), k());
            let s = ChoiOperator::from_matrix(h(), k(), d.matrix() * re(w) + rotation_choi(t).matrix() * re(1.0 - w)).unwrap();
            let rho = bloch(x, 0.1, -0.2);
            let povm = [proj("K", &[re(1.0), c(0.0, 1.0)]), proj("K", &[re(1.0), c(0.0, -1.0)])];
            let total: f64 = povm.iter().map(|e| process_probability(&s, &rho, e).unwrap()).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            let direct = born_probability(&apply_channel(&s, &rho).unwrap(), &povm[0]).unwrap();
            prop_assert!((process_probability(&s, &rho, &povm[0]).unwrap() - direct).abs() < 1e-12);
        }
    }
}
