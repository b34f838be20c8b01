//! Dense Hermitian operators on a tensor-factored Hilbert space.
//!
//! Party 1 is always the leftmost (slowest-varying) tensor factor, so a
//! computational basis index `i` of the joint space decomposes into party
//! digits `(i_1, .., i_P)` in mixed radix with `i_P` varying fastest.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LoccError, Result};

pub type C64 = Complex64;

/// An operator acting on one party's space.
pub type LocalOp = DMatrix<C64>;

pub const DEFAULT_MAX_DIM: usize = 64;
pub const HERMITICITY_TOL: f64 = 1e-10;
pub const PSD_TOL: f64 = 1e-10;

const SQRT2: f64 = std::f64::consts::SQRT_2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SpaceRepr", into = "SpaceRepr")]
pub struct PartitionedSpace {
    dims: Vec<usize>,
    total: usize,
}

#[derive(Serialize, Deserialize)]
struct SpaceRepr {
    dims: Vec<usize>,
}

impl TryFrom<SpaceRepr> for PartitionedSpace {
    type Error = LoccError;

    fn try_from(repr: SpaceRepr) -> Result<Self> {
        PartitionedSpace::new(repr.dims)
    }
}

impl From<PartitionedSpace> for SpaceRepr {
    fn from(space: PartitionedSpace) -> Self {
        SpaceRepr { dims: space.dims }
    }
}

impl PartitionedSpace {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        Self::with_max_dim(dims, DEFAULT_MAX_DIM)
    }

    pub fn with_max_dim(dims: Vec<usize>, max_dim: usize) -> Result<Self> {
        if dims.len() < 2 {
            return Err(LoccError::InvalidSpace(format!(
                "need at least two parties, got {}",
                dims.len()
            )));
        }
        if let Some(d) = dims.iter().find(|&&d| d < 2) {
            return Err(LoccError::InvalidSpace(format!(
                "every party dimension must be at least 2, got {d}"
            )));
        }
        let total = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&t| t <= max_dim)
            .ok_or_else(|| {
                LoccError::InvalidSpace(format!(
                    "total dimension of {dims:?} exceeds the maximum {max_dim}"
                ))
            })?;
        Ok(Self { dims, total })
    }

    /// Two qubits, the setting of every built-in example.
    pub fn two_qubits() -> Self {
        Self::new(vec![2, 2]).expect("2x2 is a valid partition")
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn parties(&self) -> usize {
        self.dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.total
    }

    /// Writes the party digits of a joint basis index into `out`.
    pub fn digits_into(&self, mut index: usize, out: &mut [usize]) {
        for (slot, &d) in out.iter_mut().zip(&self.dims).rev() {
            *slot = index % d;
            index /= d;
        }
    }

    pub fn digits(&self, index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims.len()];
        self.digits_into(index, &mut out);
        out
    }

    /// Number of real coordinates of a Hermitian operator on this space.
    pub fn real_dim(&self) -> usize {
        self.total * self.total
    }
}

impl fmt::Display for PartitionedSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HermitianOperator {
    space: PartitionedSpace,
    mat: DMatrix<C64>,
}

impl HermitianOperator {
    pub fn new(space: PartitionedSpace, mat: DMatrix<C64>) -> Result<Self> {
        Self::with_tol(space, mat, HERMITICITY_TOL)
    }

    /// Validates shape and Hermiticity, then stores the exactly Hermitian part.
    pub fn with_tol(space: PartitionedSpace, mat: DMatrix<C64>, tol: f64) -> Result<Self> {
        let d = space.total_dim();
        if mat.nrows() != d || mat.ncols() != d {
            return Err(LoccError::DimensionMismatch {
                expected: d,
                actual: mat.nrows().max(mat.ncols()),
            });
        }
        let deviation = hermiticity_deviation(&mat);
        if deviation > tol {
            return Err(LoccError::NotHermitian { deviation });
        }
        Ok(Self {
            space,
            mat: hermitize(&mat),
        })
    }

    pub(crate) fn from_parts_unchecked(space: PartitionedSpace, mat: DMatrix<C64>) -> Self {
        debug_assert_eq!(mat.nrows(), space.total_dim());
        Self { space, mat }
    }

    pub fn identity(space: &PartitionedSpace) -> Self {
        let d = space.total_dim();
        Self::from_parts_unchecked(space.clone(), DMatrix::identity(d, d))
    }

    pub fn zero(space: &PartitionedSpace) -> Self {
        let d = space.total_dim();
        Self::from_parts_unchecked(space.clone(), DMatrix::zeros(d, d))
    }

    pub fn diagonal(space: &PartitionedSpace, diag: &[f64]) -> Result<Self> {
        let d = space.total_dim();
        if diag.len() != d {
            return Err(LoccError::DimensionMismatch {
                expected: d,
                actual: diag.len(),
            });
        }
        let v = DVector::from_iterator(d, diag.iter().map(|&x| C64::new(x, 0.0)));
        Ok(Self::from_parts_unchecked(space.clone(), DMatrix::from_diagonal(&v)))
    }

    /// Projector onto the normalised span of `v`.
    pub fn projector(space: &PartitionedSpace, v: &DVector<C64>) -> Result<Self> {
        let d = space.total_dim();
        if v.len() != d {
            return Err(LoccError::DimensionMismatch {
                expected: d,
                actual: v.len(),
            });
        }
        let norm = v.norm();
        if norm == 0.0 {
            return Err(LoccError::InvalidInput("zero state vector".into()));
        }
        let u = v.unscale(norm);
        Ok(Self::from_parts_unchecked(space.clone(), &u * u.adjoint()))
    }

    pub fn space(&self) -> &PartitionedSpace {
        &self.space
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.mat
    }

    pub fn dim(&self) -> usize {
        self.space.total_dim()
    }

    pub fn trace(&self) -> f64 {
        self.mat.diagonal().iter().map(|z| z.re).sum()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.mat)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.mat.norm()
    }

    /// Sum of absolute eigenvalues.
    pub fn trace_norm(&self) -> f64 {
        self.eigenvalues().iter().map(|l| l.abs()).sum()
    }

    pub fn is_psd(&self, tol: f64) -> bool {
        self.min_eigenvalue() >= -tol
    }

    /// `Re Tr(XY)`; the Hilbert-Schmidt inner product restricted to Hermitian operators.
    pub fn inner(&self, other: &Self) -> f64 {
        // both Hermitian: Tr(XY) = sum_ij X_ij conj(Y_ij)
        self.mat.dotc(&other.mat).re
    }

    /// Expectation `Tr(X rho)` for a Hermitian `rho`.
    pub fn expectation(&self, rho: &Self) -> f64 {
        self.inner(rho)
    }

    pub fn scaled(&self, t: f64) -> Self {
        Self::from_parts_unchecked(self.space.clone(), self.mat.scale(t))
    }

    pub fn same_space(&self, other: &Self) -> Result<()> {
        if self.space != other.space {
            return Err(LoccError::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(())
    }

    pub fn distance_frobenius(&self, other: &Self) -> f64 {
        (&self.mat - &other.mat).norm()
    }

    pub fn distance_trace(&self, other: &Self) -> f64 {
        (self - other).trace_norm()
    }

    /// Real coordinates: diagonal entries, then `sqrt(2)` times the real and
    /// imaginary parts of the strict upper triangle. The map is an isometry
    /// from the Frobenius norm to the Euclidean norm.
    pub fn realify(&self) -> DVector<f64> {
        realify_matrix(&self.mat)
    }

    pub fn from_realified(space: &PartitionedSpace, coords: &[f64]) -> Result<Self> {
        let d = space.total_dim();
        if coords.len() != d * d {
            return Err(LoccError::DimensionMismatch {
                expected: d * d,
                actual: coords.len(),
            });
        }
        Ok(Self::from_parts_unchecked(space.clone(), unrealify(d, coords)))
    }

    /// Linear combination `sum_k w_k X_k` over operators on `space`.
    pub fn combination(space: &PartitionedSpace, weights: &[f64], ops: &[Self]) -> Self {
        let d = space.total_dim();
        let mut mat = DMatrix::zeros(d, d);
        for (w, op) in weights.iter().zip(ops) {
            if *w != 0.0 {
                mat.zip_apply(&op.mat, |a, b| *a += b * *w);
            }
        }
        Self::from_parts_unchecked(space.clone(), mat)
    }
}

impl Add for &HermitianOperator {
    type Output = HermitianOperator;

    fn add(self, rhs: &HermitianOperator) -> HermitianOperator {
        debug_assert_eq!(self.space, rhs.space);
        HermitianOperator::from_parts_unchecked(self.space.clone(), &self.mat + &rhs.mat)
    }
}

impl Sub for &HermitianOperator {
    type Output = HermitianOperator;

    fn sub(self, rhs: &HermitianOperator) -> HermitianOperator {
        debug_assert_eq!(self.space, rhs.space);
        HermitianOperator::from_parts_unchecked(self.space.clone(), &self.mat - &rhs.mat)
    }
}

impl Mul<f64> for &HermitianOperator {
    type Output = HermitianOperator;

    fn mul(self, t: f64) -> HermitianOperator {
        self.scaled(t)
    }
}

/// Kronecker product of per-party operators, party 1 leftmost.
pub fn tensor(space: &PartitionedSpace, factors: &[LocalOp]) -> Result<HermitianOperator> {
    if factors.len() != space.parties() {
        return Err(LoccError::DimensionMismatch {
            expected: space.parties(),
            actual: factors.len(),
        });
    }
    for (f, &d) in factors.iter().zip(space.dims()) {
        if f.nrows() != d || f.ncols() != d {
            return Err(LoccError::DimensionMismatch {
                expected: d,
                actual: f.nrows().max(f.ncols()),
            });
        }
        let deviation = hermiticity_deviation(f);
        if deviation > HERMITICITY_TOL {
            return Err(LoccError::NotHermitian { deviation });
        }
    }
    Ok(tensor_unchecked(space, factors))
}

pub(crate) fn tensor_unchecked(space: &PartitionedSpace, factors: &[LocalOp]) -> HermitianOperator {
    let mut mat = factors[0].clone();
    for f in &factors[1..] {
        mat = mat.kronecker(f);
    }
    HermitianOperator::from_parts_unchecked(space.clone(), mat)
}

pub fn trace_norm(x: &HermitianOperator) -> f64 {
    x.trace_norm()
}

pub fn is_psd(x: &HermitianOperator, tol: f64) -> bool {
    x.is_psd(tol)
}

/// Bipartite realignment `R(X)_{(a,c),(b,d)} = X_{(a,b),(c,d)}`, shape `d1^2 x d2^2`.
pub fn realign(x: &DMatrix<C64>, d1: usize, d2: usize) -> DMatrix<C64> {
    let mut r = DMatrix::zeros(d1 * d1, d2 * d2);
    for a in 0..d1 {
        for b in 0..d2 {
            for c in 0..d1 {
                for d in 0..d2 {
                    r[(a * d1 + c, b * d2 + d)] = x[(a * d2 + b, c * d2 + d)];
                }
            }
        }
    }
    r
}

/// Inverse of [`realign`].
pub fn unrealign(r: &DMatrix<C64>, d1: usize, d2: usize) -> DMatrix<C64> {
    let mut x = DMatrix::zeros(d1 * d2, d1 * d2);
    for a in 0..d1 {
        for b in 0..d2 {
            for c in 0..d1 {
                for d in 0..d2 {
                    x[(a * d2 + b, c * d2 + d)] = r[(a * d1 + c, b * d2 + d)];
                }
            }
        }
    }
    x
}

pub fn hermiticity_deviation(m: &DMatrix<C64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn hermitize(m: &DMatrix<C64>) -> DMatrix<C64> {
    (m + m.adjoint()).unscale(2.0)
}

pub fn hermitian_eigenvalues(m: &DMatrix<C64>) -> Vec<f64> {
    let mut vals: Vec<f64> = m.clone().symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals
}

/// Eigen-decomposition `(values, vectors)` with ascending values.
pub fn hermitian_eigen(m: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Applies `f` to the spectrum of a Hermitian matrix.
pub fn spectral_map(m: &DMatrix<C64>, f: impl Fn(f64) -> f64) -> DMatrix<C64> {
    let (vals, vecs) = hermitian_eigen(m);
    let scaled = DMatrix::from_fn(vecs.nrows(), vecs.ncols(), |r, c| vecs[(r, c)] * f(vals[c]));
    hermitize(&(scaled * vecs.adjoint()))
}

/// Nearest PSD matrix in Frobenius norm: negative eigenvalues clipped to zero.
pub fn project_psd(m: &DMatrix<C64>) -> DMatrix<C64> {
    spectral_map(m, |l| l.max(0.0))
}

pub fn psd_sqrt(m: &DMatrix<C64>) -> DMatrix<C64> {
    spectral_map(m, |l| l.max(0.0).sqrt())
}

pub(crate) fn realify_matrix(m: &DMatrix<C64>) -> DVector<f64> {
    let d = m.nrows();
    let mut out = DVector::zeros(d * d);
    let mut k = 0;
    for i in 0..d {
        out[k] = m[(i, i)].re;
        k += 1;
    }
    for i in 0..d {
        for j in i + 1..d {
            out[k] = SQRT2 * m[(i, j)].re;
            out[k + 1] = SQRT2 * m[(i, j)].im;
            k += 2;
        }
    }
    out
}

pub(crate) fn unrealify(d: usize, coords: &[f64]) -> DMatrix<C64> {
    let mut m = DMatrix::zeros(d, d);
    let mut k = 0;
    for i in 0..d {
        m[(i, i)] = C64::new(coords[k], 0.0);
        k += 1;
    }
    for i in 0..d {
        for j in i + 1..d {
            let z = C64::new(coords[k], coords[k + 1]) / SQRT2;
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
            k += 2;
        }
    }
    m
}

/// Computational-basis projector `|k><k|` on a single party of dimension `d`.
pub fn basis_projector(d: usize, k: usize) -> LocalOp {
    let mut m = DMatrix::zeros(d, d);
    m[(k, k)] = C64::new(1.0, 0.0);
    m
}

pub fn local_projector(v: &[C64]) -> LocalOp {
    let u = DVector::from_column_slice(v);
    let u = u.unscale(u.norm());
    &u * u.adjoint()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn space_invariants() {
        assert!(PartitionedSpace::new(vec![2]).is_err());
        assert!(PartitionedSpace::new(vec![2, 1]).is_err());
        assert!(PartitionedSpace::new(vec![8, 8, 2]).is_err());
        let s = PartitionedSpace::new(vec![2, 3]).unwrap();
        assert_eq!(s.total_dim(), 6);
        assert_eq!(s.digits(5), vec![1, 2]);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"dims":[2,3]}"#);
        let back: PartitionedSpace = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<PartitionedSpace>(r#"{"dims":[1,2]}"#).is_err());
    }

    #[test]
    fn tensor_examples() {
        let s = PartitionedSpace::two_qubits();
        let i2 = LocalOp::identity(2, 2);
        assert_eq!(tensor(&s, &[i2.clone(), i2.clone()]).unwrap(), HermitianOperator::identity(&s));

        let p00 = tensor(&s, &[basis_projector(2, 0), basis_projector(2, 0)]).unwrap();
        assert_eq!(p00.matrix()[(0, 0)], c(1.0));
        assert_eq!(p00.trace(), 1.0);

        let t = tensor(&s, &[basis_projector(2, 0), basis_projector(2, 1)]).unwrap();
        assert_eq!(t, HermitianOperator::diagonal(&s, &[0.0, 1.0, 0.0, 0.0]).unwrap());

        assert!(matches!(
            tensor(&s, &[i2.clone(), LocalOp::identity(3, 3)]),
            Err(LoccError::DimensionMismatch { .. })
        ));
        assert!(tensor(&s, &[i2]).is_err());
    }

    #[test]
    fn trace_norm_examples() {
        let s = PartitionedSpace::two_qubits();
        assert!((HermitianOperator::identity(&s).trace_norm() - 4.0).abs() < 1e-12);
        let x = HermitianOperator::diagonal(&s, &[1.0, -1.0, 0.0, 0.0]).unwrap();
        assert!((x.trace_norm() - 2.0).abs() < 1e-12);
        let p = tensor(&s, &[basis_projector(2, 0), basis_projector(2, 0)]).unwrap();
        assert!((p.trace_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_hermitian_rejected() {
        let s = PartitionedSpace::two_qubits();
        let mut m = DMatrix::<C64>::zeros(4, 4);
        m[(0, 1)] = c(1.0);
        assert!(matches!(
            HermitianOperator::new(s, m),
            Err(LoccError::NotHermitian { .. })
        ));
    }

    #[test]
    fn psd_examples() {
        let s = PartitionedSpace::two_qubits();
        assert!(HermitianOperator::identity(&s).is_psd(1e-10));
        let x = HermitianOperator::diagonal(&s, &[1.0, -0.1, 0.0, 0.0]).unwrap();
        assert!(!x.is_psd(1e-10));
    }

    #[test]
    fn realify_is_isometric() {
        let s = PartitionedSpace::two_qubits();
        let mut m = DMatrix::<C64>::zeros(4, 4);
        m[(0, 0)] = c(0.5);
        m[(1, 2)] = C64::new(0.3, -0.7);
        m[(2, 1)] = C64::new(0.3, 0.7);
        let x = HermitianOperator::new(s.clone(), m).unwrap();
        let v = x.realify();
        assert!((v.norm() - x.frobenius_norm()).abs() < 1e-14);
        let back = HermitianOperator::from_realified(&s, v.as_slice()).unwrap();
        assert!(back.distance_frobenius(&x) < 1e-15);
    }

    #[test]
    fn realign_round_trip_rectangular() {
        let m = DMatrix::from_fn(6, 6, |i, j| C64::new(i as f64, j as f64 * 0.5));
        let r = realign(&m, 2, 3);
        assert_eq!(r.shape(), (4, 9));
        assert_eq!(unrealign(&r, 2, 3), m);
    }
}
