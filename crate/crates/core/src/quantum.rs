//! Dense complex operators and density matrices on small labeled Hilbert spaces.
//!
//! Every space in this crate is a tensor product of a handful of few-level
//! subsystems (the largest is 36-dimensional), so all storage is dense
//! `nalgebra` matrices. Basis states are ordered with the first subsystem as
//! the most significant index.

use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use thiserror::Error;

/// Tolerance on Hermiticity of a density matrix (max entry of `rho - rho^dag`).
pub const HERMITICITY_TOL: f64 = 1e-10;
/// Tolerance on `|Tr(rho) - 1|` after a normalized update.
pub const TRACE_TOL: f64 = 1e-9;
/// Smallest eigenvalue a valid density matrix may have.
pub const POSITIVITY_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantumError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("invalid Hilbert space: {0}")]
    InvalidSpace(String),
    #[error("matrix is not Hermitian (max |rho - rho^dag| = {0:e})")]
    NotHermitian(f64),
    #[error("trace is {0} instead of 1")]
    TraceNotUnit(f64),
    #[error("matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPositive(f64),
    #[error("state has zero norm")]
    ZeroNorm,
}

/// One tensor factor of a [`HilbertSpace`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subsystem {
    pub label: String,
    pub dim: usize,
}

/// Ordered tensor product of labeled subsystems.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HilbertSpace {
    subsystems: Vec<Subsystem>,
    total_dim: usize,
}

impl HilbertSpace {
    pub fn new<S, I>(subsystems: I) -> Result<Self, QuantumError>
    where
        S: Into<String>,
        I: IntoIterator<Item = (S, usize)>,
    {
        let subsystems: Vec<Subsystem> = subsystems
            .into_iter()
            .map(|(label, dim)| Subsystem { label: label.into(), dim })
            .collect();
        if subsystems.is_empty() {
            return Err(QuantumError::InvalidSpace("no subsystems".into()));
        }
        for (i, s) in subsystems.iter().enumerate() {
            if s.dim == 0 {
                return Err(QuantumError::InvalidSpace(format!("subsystem `{}` has dimension 0", s.label)));
            }
            if subsystems[..i].iter().any(|o| o.label == s.label) {
                return Err(QuantumError::InvalidSpace(format!("duplicate label `{}`", s.label)));
            }
        }
        let total_dim = subsystems.iter().map(|s| s.dim).product();
        Ok(Self { subsystems, total_dim })
    }

    /// A space with a single subsystem.
    pub fn single(label: impl Into<String>, dim: usize) -> Self {
        Self::new([(label.into(), dim.max(1))]).expect("single subsystem is always valid")
    }

    pub fn subsystems(&self) -> &[Subsystem] {
        &self.subsystems
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    /// Concatenation of two spaces. Colliding labels on the right are
    /// suffixed with `'` until unique.
    pub fn tensor(&self, other: &HilbertSpace) -> HilbertSpace {
        let mut subsystems = self.subsystems.clone();
        for s in &other.subsystems {
            let mut label = s.label.clone();
            while subsystems.iter().any(|o| o.label == label) {
                label.push('\'');
            }
            subsystems.push(Subsystem { label, dim: s.dim });
        }
        let total_dim = self.total_dim * other.total_dim;
        HilbertSpace { subsystems, total_dim }
    }

    /// Flat basis index of a multi-index (one level per subsystem).
    pub fn index_of(&self, levels: &[usize]) -> Result<usize, QuantumError> {
        if levels.len() != self.subsystems.len() {
            return Err(QuantumError::DimensionMismatch { left: levels.len(), right: self.subsystems.len() });
        }
        let mut index = 0;
        for (level, s) in levels.iter().zip(&self.subsystems) {
            if *level >= s.dim {
                return Err(QuantumError::InvalidSpace(format!(
                    "level {level} out of range for `{}` (dim {})",
                    s.label, s.dim
                )));
            }
            index = index * s.dim + level;
        }
        Ok(index)
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.subsystems.iter().position(|s| s.label == label)
    }
}

impl fmt::Display for HilbertSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.subsystems.iter().map(|s| format!("{}({})", s.label, s.dim)).collect();
        write!(f, "{}", parts.join(" ⊗ "))
    }
}

/// Dense complex matrix acting on a [`HilbertSpace`].
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    space: Arc<HilbertSpace>,
    mat: DMatrix<C64>,
}

impl Operator {
    pub fn new(space: Arc<HilbertSpace>, mat: DMatrix<C64>) -> Result<Self, QuantumError> {
        let d = space.total_dim();
        if mat.nrows() != d || mat.ncols() != d {
            return Err(QuantumError::DimensionMismatch { left: mat.nrows().max(mat.ncols()), right: d });
        }
        Ok(Self { space, mat })
    }

    /// Operator on an anonymous single-subsystem space of matching dimension.
    pub fn from_matrix(mat: DMatrix<C64>) -> Result<Self, QuantumError> {
        if mat.nrows() != mat.ncols() {
            return Err(QuantumError::DimensionMismatch { left: mat.nrows(), right: mat.ncols() });
        }
        let space = Arc::new(HilbertSpace::single("h", mat.nrows()));
        Self::new(space, mat)
    }

    pub fn identity(space: Arc<HilbertSpace>) -> Self {
        let d = space.total_dim();
        Self { space, mat: DMatrix::identity(d, d) }
    }

    pub fn zeros(space: Arc<HilbertSpace>) -> Self {
        let d = space.total_dim();
        Self { space, mat: DMatrix::zeros(d, d) }
    }

    /// `|row><col|` in the flat basis.
    pub fn ket_bra(space: Arc<HilbertSpace>, row: usize, col: usize) -> Self {
        let d = space.total_dim();
        let mut mat = DMatrix::zeros(d, d);
        mat[(row, col)] = C64::new(1.0, 0.0);
        Self { space, mat }
    }

    /// Outer product `|a><b|` of two state vectors.
    pub fn outer(space: Arc<HilbertSpace>, a: &DVector<C64>, b: &DVector<C64>) -> Result<Self, QuantumError> {
        Self::new(space, a * b.adjoint())
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.mat
    }

    pub fn dagger(&self) -> Self {
        Self { space: self.space.clone(), mat: self.mat.adjoint() }
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self { space: self.space.clone(), mat: &self.mat * factor }
    }

    pub fn scale_real(&self, factor: f64) -> Self {
        self.scale(C64::new(factor, 0.0))
    }

    pub fn tensor(&self, other: &Operator) -> Operator {
        tensor(self, other)
    }

    /// `self * other - other * self`.
    pub fn commutator(&self, other: &Operator) -> Result<Operator, QuantumError> {
        self.check_same(other)?;
        Ok(Self { space: self.space.clone(), mat: &self.mat * &other.mat - &other.mat * &self.mat })
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.mat.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Operator) -> f64 {
        self.mat.iter().zip(other.mat.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn hermiticity_error(&self) -> f64 {
        hermiticity_error(&self.mat)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    /// Max entry of `U^dag U - I`.
    pub fn unitarity_error(&self) -> f64 {
        let d = self.dim();
        let prod = self.mat.adjoint() * &self.mat;
        let id = DMatrix::<C64>::identity(d, d);
        prod.iter().zip(id.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn trace(&self) -> C64 {
        self.mat.trace()
    }

    /// Number of entries with nonzero modulus.
    pub fn count_nonzero(&self) -> usize {
        self.mat.iter().filter(|z| z.norm() > 0.0).count()
    }

    pub(crate) fn check_same(&self, other: &Operator) -> Result<(), QuantumError> {
        if self.dim() != other.dim() {
            return Err(QuantumError::DimensionMismatch { left: self.dim(), right: other.dim() });
        }
        Ok(())
    }
}

impl Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim(), rhs.dim(), "operator dimension mismatch");
        Operator { space: self.space.clone(), mat: &self.mat + &rhs.mat }
    }
}

impl Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim(), rhs.dim(), "operator dimension mismatch");
        Operator { space: self.space.clone(), mat: &self.mat - &rhs.mat }
    }
}

impl Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim(), rhs.dim(), "operator dimension mismatch");
        Operator { space: self.space.clone(), mat: &self.mat * &rhs.mat }
    }
}

/// Kronecker product on the concatenated space.
pub fn tensor(a: &Operator, b: &Operator) -> Operator {
    let space = Arc::new(a.space.tensor(&b.space));
    Operator { space, mat: a.mat.kronecker(&b.mat) }
}

/// Hermitian, unit-trace, positive semidefinite state.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    space: Arc<HilbertSpace>,
    mat: DMatrix<C64>,
}

impl DensityMatrix {
    /// Checked constructor: Hermiticity, unit trace and positivity.
    pub fn new(space: Arc<HilbertSpace>, mat: DMatrix<C64>) -> Result<Self, QuantumError> {
        let rho = Self::from_parts_unchecked(space, mat)?;
        rho.validate()?;
        Ok(rho)
    }

    pub(crate) fn from_parts_unchecked(space: Arc<HilbertSpace>, mat: DMatrix<C64>) -> Result<Self, QuantumError> {
        let d = space.total_dim();
        if mat.nrows() != d || mat.ncols() != d {
            return Err(QuantumError::DimensionMismatch { left: mat.nrows().max(mat.ncols()), right: d });
        }
        Ok(Self { space, mat })
    }

    /// `|psi><psi|` for a (not necessarily normalized) state vector.
    pub fn pure(space: Arc<HilbertSpace>, psi: &DVector<C64>) -> Result<Self, QuantumError> {
        let norm = psi.norm();
        if norm == 0.0 {
            return Err(QuantumError::ZeroNorm);
        }
        let psi = psi / C64::new(norm, 0.0);
        Self::from_parts_unchecked(space, &psi * psi.adjoint())
    }

    pub fn basis_state(space: Arc<HilbertSpace>, index: usize) -> Result<Self, QuantumError> {
        let d = space.total_dim();
        if index >= d {
            return Err(QuantumError::DimensionMismatch { left: index, right: d });
        }
        let mut mat = DMatrix::zeros(d, d);
        mat[(index, index)] = C64::new(1.0, 0.0);
        Ok(Self { space, mat })
    }

    pub fn maximally_mixed(space: Arc<HilbertSpace>) -> Self {
        let d = space.total_dim();
        let mat = DMatrix::identity(d, d) * C64::new(1.0 / d as f64, 0.0);
        Self { space, mat }
    }

    /// Normalizes a positive operator by its trace.
    pub fn from_unnormalized(space: Arc<HilbertSpace>, mat: DMatrix<C64>) -> Result<Self, QuantumError> {
        let tr = mat.trace().re;
        if !(tr > 0.0) {
            return Err(QuantumError::ZeroNorm);
        }
        Self::from_parts_unchecked(space, mat / C64::new(tr, 0.0))
    }

    pub fn space(&self) -> &Arc<HilbertSpace> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.mat
    }

    pub fn trace(&self) -> f64 {
        self.mat.trace().re
    }

    pub fn purity(&self) -> f64 {
        // Tr(rho^2) = sum |rho_ij|^2 for Hermitian rho
        self.mat.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        hermiticity_error(&self.mat)
    }

    /// Expectation value `Tr(op rho)`.
    pub fn expectation(&self, op: &Operator) -> Result<C64, QuantumError> {
        expectation(self, op)
    }

    /// Population `<v|rho|v>` of a (normalized) state vector.
    pub fn population(&self, v: &DVector<C64>) -> f64 {
        (v.adjoint() * &self.mat * v)[(0, 0)].re
    }

    /// Applies `U rho U^dag`.
    pub fn transform(&self, u: &Operator) -> Result<Self, QuantumError> {
        if u.dim() != self.dim() {
            return Err(QuantumError::DimensionMismatch { left: u.dim(), right: self.dim() });
        }
        Ok(Self { space: self.space.clone(), mat: &u.mat * &self.mat * u.mat.adjoint() })
    }

    /// `(1/2) ||self - other||_1`.
    pub fn trace_distance(&self, other: &DensityMatrix) -> Result<f64, QuantumError> {
        if self.dim() != other.dim() {
            return Err(QuantumError::DimensionMismatch { left: self.dim(), right: other.dim() });
        }
        let eig = hermitian_eigenvalues(&(&self.mat - &other.mat));
        Ok(0.5 * eig.iter().map(|x| x.abs()).sum::<f64>())
    }

    /// Reduced state on the subsystems at positions `keep` (in the given order
    /// of the original space).
    pub fn partial_trace(&self, keep: &[usize]) -> Result<DensityMatrix, QuantumError> {
        let subs = self.space.subsystems();
        if keep.iter().any(|&k| k >= subs.len()) {
            return Err(QuantumError::InvalidSpace("partial trace index out of range".into()));
        }
        let mut keep_sorted = keep.to_vec();
        keep_sorted.sort_unstable();
        keep_sorted.dedup();
        let dims: Vec<usize> = subs.iter().map(|s| s.dim).collect();
        let kept_space = HilbertSpace::new(keep_sorted.iter().map(|&k| (subs[k].label.clone(), subs[k].dim)))?;
        let dk = kept_space.total_dim();
        let mut out = DMatrix::<C64>::zeros(dk, dk);
        let d = self.dim();
        let mut levels_i = vec![0; dims.len()];
        let mut levels_j = vec![0; dims.len()];
        for i in 0..d {
            unflatten(i, &dims, &mut levels_i);
            for j in 0..d {
                unflatten(j, &dims, &mut levels_j);
                let traced_equal =
                    (0..dims.len()).filter(|p| !keep_sorted.contains(p)).all(|p| levels_i[p] == levels_j[p]);
                if !traced_equal {
                    continue;
                }
                let (mut ki, mut kj) = (0, 0);
                for &p in &keep_sorted {
                    ki = ki * dims[p] + levels_i[p];
                    kj = kj * dims[p] + levels_j[p];
                }
                out[(ki, kj)] += self.mat[(i, j)];
            }
        }
        Self::from_parts_unchecked(Arc::new(kept_space), out)
    }

    /// Checks Hermiticity, unit trace and positivity at the crate tolerances.
    pub fn validate(&self) -> Result<(), QuantumError> {
        self.validate_cheap()?;
        let floor = eigen_floor(self);
        if floor < -POSITIVITY_TOL {
            return Err(QuantumError::NotPositive(floor));
        }
        Ok(())
    }

    /// Hermiticity and trace only (O(d^2)).
    pub fn validate_cheap(&self) -> Result<(), QuantumError> {
        let herm = self.hermiticity_error();
        if herm > HERMITICITY_TOL {
            return Err(QuantumError::NotHermitian(herm));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(QuantumError::TraceNotUnit(tr));
        }
        Ok(())
    }
}

/// `Tr(op rho)`.
pub fn expectation(rho: &DensityMatrix, op: &Operator) -> Result<C64, QuantumError> {
    if rho.dim() != op.dim() {
        return Err(QuantumError::DimensionMismatch { left: op.dim(), right: rho.dim() });
    }
    // Tr(A B) = sum_ij A_ij B_ji
    let d = rho.dim();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..d {
        for j in 0..d {
            acc += op.mat[(i, j)] * rho.mat[(j, i)];
        }
    }
    Ok(acc)
}

/// Smallest eigenvalue of the Hermitian part of `rho`.
pub fn eigen_floor(rho: &DensityMatrix) -> f64 {
    hermitian_eigenvalues(&rho.mat).iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Entries this far below the largest one are dropped before diagonalizing.
const EIGEN_FLUSH: f64 = 1e-30;

/// Eigenvalues of the Hermitian part of `m`.
///
/// The symmetric eigensolver can return infinities when the matrix holds
/// entries near the bottom of the exponent range, which long trajectories
/// produce in branches they have all but ruled out. Flushing entries below
/// `EIGEN_FLUSH` times the largest one moves every eigenvalue by at most
/// `d * EIGEN_FLUSH * max|m_ij|`.
pub(crate) fn hermitian_eigenvalues(m: &DMatrix<C64>) -> DVector<f64> {
    let mut h = hermitian_part(m);
    let cutoff = h.iter().fold(0.0f64, |acc, z| acc.max(z.norm())) * EIGEN_FLUSH;
    for z in h.iter_mut() {
        if z.norm() < cutoff {
            *z = C64::new(0.0, 0.0);
        }
    }
    h.symmetric_eigenvalues()
}

pub(crate) fn hermitian_part(m: &DMatrix<C64>) -> DMatrix<C64> {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

pub(crate) fn hermiticity_error(m: &DMatrix<C64>) -> f64 {
    let d = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for j in i..d {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn unflatten(mut index: usize, dims: &[usize], out: &mut [usize]) {
    for p in (0..dims.len()).rev() {
        out[p] = index % dims[p];
        index /= dims[p];
    }
}

/// Unit basis vector of dimension `d`.
pub fn basis_vector(d: usize, index: usize) -> DVector<C64> {
    let mut v = DVector::zeros(d);
    v[index] = C64::new(1.0, 0.0);
    v
}
