//! Dense complex linear algebra over labeled tensor-product spaces.
//!
//! Every [`Operator`] carries an ordered list of [`SpaceLabel`]s. Row and
//! column indices are mixed-radix numbers over those spaces with the
//! first-listed space as the most significant digit, so `a.tensor(&b)` is the
//! ordinary Kronecker product `a ⊗ b`.
//!
//! The free functions (`kron`, `ptrace`, `ptranspose`, ...) work on bare
//! matrices plus a dimension list and are what the estimators use in their
//! inner loops; the [`Operator`] methods wrap them with label bookkeeping.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

/// Allowed anti-Hermitian part, relative to the largest entry.
pub const HERM_TOL: f64 = 1e-8;
/// Most negative eigenvalue (relative to the spectral radius, at least 1)
/// tolerated as float dust by [`psd_sqrt`].
pub const PSD_TOL: f64 = 1e-8;
/// Reconstruction accuracy expected from [`eigh`].
pub const RECON_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpaceLabel {
    pub name: String,
    pub dim: usize,
}

impl SpaceLabel {
    pub fn new(name: impl Into<String>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("space dimension must be at least 1".into()));
        }
        Ok(Self { name: name.into(), dim })
    }
}

// ---------------------------------------------------------------------------
// Bare-matrix kernels
// ---------------------------------------------------------------------------

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// `Tr[a b]` without forming the product.
pub fn trace_product(a: &CMat, b: &CMat) -> C64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

pub fn trace_re(a: &CMat) -> f64 {
    a.trace().re
}

pub fn max_abs(a: &CMat) -> f64 {
    a.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).fold(0.0_f64, |m, (x, y)| m.max((x - y).norm()))
}

/// `(a + a†) / 2`
pub fn hermitize(a: &CMat) -> CMat {
    (a + a.adjoint()) * re(0.5)
}

/// Largest entry of the anti-Hermitian part `a - a†`.
pub fn hermiticity_defect(a: &CMat) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

fn split_dims(dims: &[usize], k: usize) -> (usize, usize, usize) {
    let left: usize = dims[..k].iter().product();
    let right: usize = dims[k + 1..].iter().product();
    (left, dims[k], right)
}

/// Partial trace over factor `k` of an operator on `⊗ dims`.
pub fn ptrace(a: &CMat, dims: &[usize], k: usize) -> CMat {
    let (left, mid, right) = split_dims(dims, k);
    let n_out = left * right;
    let mut out = CMat::zeros(n_out, n_out);
    for l in 0..left {
        for r in 0..right {
            let row = l * right + r;
            for l2 in 0..left {
                for r2 in 0..right {
                    let col = l2 * right + r2;
                    let mut acc = C64::new(0.0, 0.0);
                    for m in 0..mid {
                        acc += a[((l * mid + m) * right + r, (l2 * mid + m) * right + r2)];
                    }
                    out[(row, col)] = acc;
                }
            }
        }
    }
    out
}

/// Partial transpose on factor `k` of an operator on `⊗ dims`.
pub fn ptranspose(a: &CMat, dims: &[usize], k: usize) -> CMat {
    let (left, mid, right) = split_dims(dims, k);
    let n = a.nrows();
    let mut out = CMat::zeros(n, n);
    for l in 0..left {
        for m in 0..mid {
            for r in 0..right {
                let row = (l * mid + m) * right + r;
                for l2 in 0..left {
                    for m2 in 0..mid {
                        for r2 in 0..right {
                            let col = (l2 * mid + m2) * right + r2;
                            out[(row, col)] = a[((l * mid + m2) * right + r, (l2 * mid + m) * right + r2)];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Reorders tensor factors: output factor `j` is input factor `order[j]`.
pub fn permute_factors(a: &CMat, dims: &[usize], order: &[usize]) -> CMat {
    let n = a.nrows();
    let nf = dims.len();
    let out_dims: Vec<usize> = order.iter().map(|&o| dims[o]).collect();
    // Stride of each input factor in the input flat index.
    let mut in_stride = vec![1usize; nf];
    for f in (0..nf.saturating_sub(1)).rev() {
        in_stride[f] = in_stride[f + 1] * dims[f + 1];
    }
    let mut map = vec![0usize; n];
    let mut digits = vec![0usize; nf];
    for (flat, slot) in map.iter_mut().enumerate() {
        let mut rem = flat;
        for j in (0..nf).rev() {
            digits[j] = rem % out_dims[j];
            rem /= out_dims[j];
        }
        *slot = digits.iter().zip(order).map(|(&d, &o)| d * in_stride[o]).sum();
    }
    CMat::from_fn(n, n, |i, j| a[(map[i], map[j])])
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues ascending.
pub fn eigh(a: &CMat) -> Result<(Vec<f64>, CMat)> {
    let scale = max_abs(a);
    let defect = hermiticity_defect(a);
    if defect > HERM_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotHermitian(defect));
    }
    Ok(eigh_unchecked(&hermitize(a)))
}

/// [`eigh`] without the Hermiticity check; `a` must already be Hermitian.
pub fn eigh_unchecked(a: &CMat) -> (Vec<f64>, CMat) {
    let n = a.nrows();
    if n == 1 {
        return (vec![a[(0, 0)].re], identity(1));
    }
    let eig = a.clone().symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMat::from_fn(n, n, |r, col| eig.eigenvectors[(r, idx[col])]);
    (values, vectors)
}

/// `V diag(f(w)) V†`
pub fn spectral_map(values: &[f64], vectors: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let n = vectors.nrows();
    let mut scaled = vectors.clone();
    for (j, &w) in values.iter().enumerate() {
        let s = f(w);
        for i in 0..n {
            scaled[(i, j)] *= s;
        }
    }
    scaled * vectors.adjoint()
}

pub fn min_eigenvalue(a: &CMat) -> f64 {
    eigh_unchecked(&hermitize(a)).0[0]
}

/// Square root of a positive semidefinite matrix. Eigenvalues in
/// `[-PSD_TOL * max(1, ‖a‖), 0)` are clipped to zero; anything more negative
/// is an error.
pub fn psd_sqrt(a: &CMat) -> Result<CMat> {
    let (w, v) = eigh(a)?;
    let radius = w.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
    if w[0] < -PSD_TOL * radius {
        return Err(Error::NotPositive(w[0]));
    }
    Ok(spectral_map(&w, &v, |x| x.max(0.0).sqrt()))
}

/// Inverse with every eigenvalue below `floor` raised to `floor` first.
pub fn reg_inverse(a: &CMat, floor: f64) -> Result<CMat> {
    if floor.is_nan() || floor <= 0.0 {
        return Err(Error::InvalidArgument(format!("inverse floor must be positive, got {floor}")));
    }
    let (w, v) = eigh(a)?;
    Ok(spectral_map(&w, &v, |x| 1.0 / x.max(floor)))
}

/// `(psd_sqrt(a), reg_inverse(psd_sqrt(a)))` from one eigendecomposition.
pub(crate) fn sqrt_and_inv_sqrt(a: &CMat, floor: f64) -> Result<(CMat, CMat)> {
    let (w, v) = eigh(a)?;
    let radius = w.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
    if w[0] < -PSD_TOL * radius {
        return Err(Error::NotPositive(w[0]));
    }
    let sq = spectral_map(&w, &v, |x| x.max(0.0).sqrt());
    let inv = spectral_map(&w, &v, |x| 1.0 / x.max(0.0).sqrt().max(floor));
    Ok((sq, inv))
}

// ---------------------------------------------------------------------------
// Labeled operators
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    spaces: Vec<SpaceLabel>,
    mat: CMat,
}

impl Operator {
    pub fn new(spaces: Vec<SpaceLabel>, mat: CMat) -> Result<Self> {
        if spaces.is_empty() {
            return Err(Error::InvalidArgument("an operator needs at least one space".into()));
        }
        if let Some(s) = spaces.iter().find(|s| s.dim == 0) {
            return Err(Error::InvalidArgument(format!("space `{}` has dimension 0", s.name)));
        }
        let n: usize = spaces.iter().map(|s| s.dim).product();
        if mat.nrows() != n || mat.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "spaces require {n}x{n} entries, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        Ok(Self { spaces, mat })
    }

    /// Single-space operator.
    pub fn on(name: impl Into<String>, mat: CMat) -> Result<Self> {
        let n = mat.nrows();
        Self::new(vec![SpaceLabel::new(name, n)?], mat)
    }

    pub fn identity(spaces: Vec<SpaceLabel>) -> Self {
        let n = spaces.iter().map(|s| s.dim).product();
        Self { spaces, mat: identity(n) }
    }

    pub fn spaces(&self) -> &[SpaceLabel] {
        &self.spaces
    }

    pub fn dims(&self) -> Vec<usize> {
        self.spaces.iter().map(|s| s.dim).collect()
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.mat
    }

    pub fn into_matrix(self) -> CMat {
        self.mat
    }

    pub fn trace(&self) -> C64 {
        self.mat.trace()
    }

    pub fn adjoint(&self) -> Self {
        Self { spaces: self.spaces.clone(), mat: self.mat.adjoint() }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { spaces: self.spaces.clone(), mat: &self.mat * s }
    }

    pub fn hermitize(&self) -> Self {
        Self { spaces: self.spaces.clone(), mat: hermitize(&self.mat) }
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        hermiticity_defect(&self.mat) <= tol * max_abs(&self.mat).max(f64::MIN_POSITIVE)
    }

    pub fn same_spaces(&self, other: &Operator) -> bool {
        self.spaces == other.spaces
    }

    fn check_same(&self, other: &Operator, what: &str) -> Result<()> {
        if self.same_spaces(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!("{what}: {:?} vs {:?}", names(&self.spaces), names(&other.spaces))))
        }
    }

    pub fn add(&self, other: &Operator) -> Result<Self> {
        self.check_same(other, "add")?;
        Ok(Self { spaces: self.spaces.clone(), mat: &self.mat + &other.mat })
    }

    pub fn sub(&self, other: &Operator) -> Result<Self> {
        self.check_same(other, "sub")?;
        Ok(Self { spaces: self.spaces.clone(), mat: &self.mat - &other.mat })
    }

    pub fn mul(&self, other: &Operator) -> Result<Self> {
        self.check_same(other, "mul")?;
        Ok(Self { spaces: self.spaces.clone(), mat: &self.mat * &other.mat })
    }

    pub fn max_abs_diff(&self, other: &Operator) -> Result<f64> {
        self.check_same(other, "compare")?;
        Ok(max_abs_diff(&self.mat, &other.mat))
    }

    /// Position of the space called `name`.
    pub fn position(&self, name: &str) -> Result<usize> {
        let mut hits = self.spaces.iter().enumerate().filter(|(_, s)| s.name == name);
        match (hits.next(), hits.next()) {
            (Some((k, _)), None) => Ok(k),
            (Some(_), Some(_)) => Err(Error::AmbiguousSpace(name.to_string())),
            (None, _) => Err(Error::UnknownSpace(name.to_string())),
        }
    }

    pub fn tensor(&self, other: &Operator) -> Self {
        let mut spaces = self.spaces.clone();
        spaces.extend(other.spaces.iter().cloned());
        Self { spaces, mat: kron(&self.mat, &other.mat) }
    }

    pub fn partial_trace(&self, over: &str) -> Result<Self> {
        let k = self.position(over)?;
        self.partial_trace_at(k)
    }

    pub fn partial_trace_at(&self, k: usize) -> Result<Self> {
        if k >= self.spaces.len() {
            return Err(Error::InvalidArgument(format!("no factor at position {k}")));
        }
        if self.spaces.len() == 1 {
            return Err(Error::InvalidArgument("tracing out the only space leaves a scalar; use trace()".into()));
        }
        let mat = ptrace(&self.mat, &self.dims(), k);
        let mut spaces = self.spaces.clone();
        spaces.remove(k);
        Ok(Self { spaces, mat })
    }

    pub fn partial_transpose(&self, on: &str) -> Result<Self> {
        let k = self.position(on)?;
        self.partial_transpose_at(k)
    }

    pub fn partial_transpose_at(&self, k: usize) -> Result<Self> {
        if k >= self.spaces.len() {
            return Err(Error::InvalidArgument(format!("no factor at position {k}")));
        }
        Ok(Self { spaces: self.spaces.clone(), mat: ptranspose(&self.mat, &self.dims(), k) })
    }

    pub fn transpose(&self) -> Self {
        Self { spaces: self.spaces.clone(), mat: self.mat.transpose() }
    }

    /// Reorders the tensor factors to follow `order` (a list of space names).
    pub fn permute(&self, order: &[&str]) -> Result<Self> {
        if order.len() != self.spaces.len() {
            return Err(Error::DimensionMismatch(format!(
                "permutation lists {} spaces, operator has {}",
                order.len(),
                self.spaces.len()
            )));
        }
        let mut idx = Vec::with_capacity(order.len());
        for name in order {
            let k = self.position(name)?;
            if idx.contains(&k) {
                return Err(Error::AmbiguousSpace(name.to_string()));
            }
            idx.push(k);
        }
        let mat = permute_factors(&self.mat, &self.dims(), &idx);
        let spaces = idx.iter().map(|&k| self.spaces[k].clone()).collect();
        Ok(Self { spaces, mat })
    }

    pub fn herm_eig(&self) -> Result<(Vec<f64>, CMat)> {
        eigh(&self.mat)
    }

    pub fn psd_sqrt(&self) -> Result<Self> {
        Ok(Self { spaces: self.spaces.clone(), mat: psd_sqrt(&self.mat)? })
    }

    pub fn reg_inverse(&self, floor: f64) -> Result<Self> {
        Ok(Self { spaces: self.spaces.clone(), mat: reg_inverse(&self.mat, floor)? })
    }
}

fn names(spaces: &[SpaceLabel]) -> Vec<&str> {
    spaces.iter().map(|s| s.name.as_str()).collect()
}

#[derive(Serialize, Deserialize)]
struct OperatorRepr {
    spaces: Vec<SpaceLabel>,
    entries: Vec<Vec<[f64; 2]>>,
}

impl Serialize for Operator {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let n = self.mat.nrows();
        let entries = (0..n).map(|i| (0..n).map(|j| [self.mat[(i, j)].re, self.mat[(i, j)].im]).collect()).collect();
        OperatorRepr { spaces: self.spaces.clone(), entries }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Operator {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = OperatorRepr::deserialize(deserializer)?;
        let n = repr.entries.len();
        if repr.entries.iter().any(|row| row.len() != n) {
            return Err(serde::de::Error::custom("operator entries must form a square matrix"));
        }
        let mat = CMat::from_fn(n, n, |i, j| {
            let [a, b] = repr.entries[i][j];
            c(a, b)
        });
        Operator::new(repr.spaces, mat).map_err(serde::de::Error::custom)
    }
}
