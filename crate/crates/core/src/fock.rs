//! Truncated Fock-space operator algebra.
//!
//! Two-mode operators always use the ordering optical ⊗ mechanical: the
//! composite index of `|n_a, n_b⟩` is `n_a * (n_b_max + 1) + n_b`.

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Sub};

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Entries with magnitude below this are not stored.
pub const DROP_TOL: f64 = 1e-14;

/// Reduced Planck constant in J s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant in J / K.
pub const K_B: f64 = 1.380_649e-23;

const HERMITIAN_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-9;
const TAIL_WARN: f64 = 1e-2;

/// Highest retained Fock level of one mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct FockCutoff(usize);

impl FockCutoff {
    pub fn new(n_max: usize) -> Result<Self> {
        if n_max < 1 {
            return Err(Error::InvalidParameter("Fock cutoff n_max must be >= 1".into()));
        }
        Ok(Self(n_max))
    }

    pub fn n_max(self) -> usize {
        self.0
    }

    /// Local Hilbert-space dimension, `n_max + 1`.
    pub fn dim(self) -> usize {
        self.0 + 1
    }
}

impl TryFrom<usize> for FockCutoff {
    type Error = Error;
    fn try_from(n: usize) -> Result<Self> {
        Self::new(n)
    }
}

impl From<FockCutoff> for usize {
    fn from(c: FockCutoff) -> usize {
        c.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Optical,
    Mechanical,
}

/// The truncated photon ⊗ phonon product space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoModeSpace {
    pub optical: FockCutoff,
    pub mechanical: FockCutoff,
}

impl TwoModeSpace {
    pub fn new(optical: FockCutoff, mechanical: FockCutoff) -> Self {
        Self { optical, mechanical }
    }

    pub fn symmetric(n_max: usize) -> Result<Self> {
        let c = FockCutoff::new(n_max)?;
        Ok(Self::new(c, c))
    }

    pub fn dim(&self) -> usize {
        self.optical.dim() * self.mechanical.dim()
    }

    pub fn index(&self, n_a: usize, n_b: usize) -> usize {
        n_a * self.mechanical.dim() + n_b
    }

    pub fn levels(&self, index: usize) -> (usize, usize) {
        (index / self.mechanical.dim(), index % self.mechanical.dim())
    }

    pub fn cutoff(&self, mode: Mode) -> FockCutoff {
        match mode {
            Mode::Optical => self.optical,
            Mode::Mechanical => self.mechanical,
        }
    }
}

/// Sparse complex square matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl OperatorMatrix {
    /// Builds a matrix from `(row, col, value)` triplets; duplicates are summed
    /// and sums below [`DROP_TOL`] are dropped.
    ///
    /// # Panics
    /// If any index is out of range.
    pub fn from_triplets<I>(dim: usize, triplets: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, C64)>,
    {
        assert!(dim > 0, "operator dimension must be positive");
        let mut rows: Vec<BTreeMap<usize, C64>> = vec![BTreeMap::new(); dim];
        for (r, c, v) in triplets {
            assert!(r < dim && c < dim, "index ({r}, {c}) out of range for dim {dim}");
            *rows[r].entry(c).or_insert(C64::new(0.0, 0.0)) += v;
        }
        Self::from_rows(dim, rows.into_iter().map(|r| r.into_iter()))
    }

    fn from_rows<R, I>(dim: usize, rows: R) -> Self
    where
        R: IntoIterator<Item = I>,
        I: IntoIterator<Item = (usize, C64)>,
    {
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in rows {
            for (c, v) in row {
                if v.norm() >= DROP_TOL {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        debug_assert_eq!(row_ptr.len(), dim + 1);
        Self { dim, row_ptr, cols, vals }
    }

    pub fn zeros(dim: usize) -> Self {
        Self::from_triplets(dim, std::iter::empty())
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_diagonal(&vec![1.0; dim])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self::from_triplets(diag.len(), diag.iter().enumerate().map(|(i, &d)| (i, i, C64::new(d, 0.0))))
    }

    pub fn from_dense(m: &Array2<C64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "operator must be square");
        Self::from_rows(
            m.nrows(),
            m.rows().into_iter().map(|row| row.iter().copied().enumerate().collect::<Vec<_>>()),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        match self.cols[span.clone()].binary_search(&c) {
            Ok(k) => self.vals[span.start + k],
            Err(_) => C64::new(0.0, 0.0),
        }
    }

    /// Stored entries of one row as `(col, value)`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()].iter().copied().zip(self.vals[span].iter().copied())
    }

    /// All stored entries as `(row, col, value)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(self.dim, self.iter().map(|(r, c, v)| (c, r, v.conj())))
    }

    pub fn scale(&self, s: C64) -> Self {
        Self::from_triplets(self.dim, self.iter().map(|(r, c, v)| (r, c, v * s)))
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn diagonal(&self) -> Vec<C64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |acc, z| acc.max(z.norm()))
    }

    /// `max |A - A†|` over all entries.
    pub fn hermiticity_error(&self) -> f64 {
        (self - &self.adjoint()).max_abs()
    }

    pub fn commutator(&self, other: &Self) -> Self {
        &(self * other) - &(other * self)
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &Self) -> Self {
        let d2 = other.dim;
        let mut triplets = Vec::with_capacity(self.nnz() * other.nnz());
        for (r1, c1, v1) in self.iter() {
            for (r2, c2, v2) in other.iter() {
                triplets.push((r1 * d2 + r2, c1 * d2 + c2, v1 * v2));
            }
        }
        Self::from_triplets(self.dim * d2, triplets)
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let mut m = Array2::zeros((self.dim, self.dim));
        for (r, c, v) in self.iter() {
            m[[r, c]] = v;
        }
        m
    }

    /// `self · m` for a dense right operand.
    pub fn mul_dense(&self, m: &Array2<C64>) -> Array2<C64> {
        assert_eq!(self.dim, m.nrows());
        let mut out = Array2::zeros((self.dim, m.ncols()));
        for (r, mut out_row) in out.rows_mut().into_iter().enumerate() {
            for (c, v) in self.row(r) {
                out_row.scaled_add(v, &m.row(c));
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &Array1<C64>) -> Array1<C64> {
        assert_eq!(self.dim, x.len());
        Array1::from_iter((0..self.dim).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum::<C64>()))
    }

    fn check_dim(&self, other: &Self) {
        assert_eq!(self.dim, other.dim, "operator dimension mismatch");
    }
}

impl Add for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn add(self, rhs: &OperatorMatrix) -> OperatorMatrix {
        self.check_dim(rhs);
        OperatorMatrix::from_triplets(self.dim, self.iter().chain(rhs.iter()))
    }
}

impl Sub for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn sub(self, rhs: &OperatorMatrix) -> OperatorMatrix {
        self.check_dim(rhs);
        OperatorMatrix::from_triplets(self.dim, self.iter().chain(rhs.iter().map(|(r, c, v)| (r, c, -v))))
    }
}

impl Mul for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn mul(self, rhs: &OperatorMatrix) -> OperatorMatrix {
        self.check_dim(rhs);
        let n = self.dim;
        let mut acc = vec![C64::new(0.0, 0.0); n];
        let mut touched = vec![false; n];
        let mut pattern = Vec::new();
        let mut rows = Vec::with_capacity(n);
        for r in 0..n {
            pattern.clear();
            for (k, a) in self.row(r) {
                for (c, b) in rhs.row(k) {
                    if !touched[c] {
                        touched[c] = true;
                        pattern.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            pattern.sort_unstable();
            let row: Vec<(usize, C64)> = pattern
                .iter()
                .map(|&c| {
                    let v = acc[c];
                    acc[c] = C64::new(0.0, 0.0);
                    touched[c] = false;
                    (c, v)
                })
                .collect();
            rows.push(row);
        }
        OperatorMatrix::from_rows(n, rows)
    }
}

/// Hermitian, unit-trace state on a truncated space.
///
/// Stored dense: states in the evolution fill in quickly, and the integrator
/// works on contiguous rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    rho: Array2<C64>,
}

impl DensityMatrix {
    /// Validates Hermiticity and unit trace. Positivity is checked separately
    /// via [`DensityMatrix::check_positive`].
    pub fn from_matrix(rho: Array2<C64>) -> Result<Self> {
        if rho.nrows() != rho.ncols() || rho.nrows() == 0 {
            return Err(Error::InvalidState("matrix must be square and non-empty".into()));
        }
        let state = Self { rho };
        let herm = state.hermiticity_error();
        if herm >= HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (max |rho - rho†| = {herm:e})")));
        }
        let tr = state.trace();
        if (tr - 1.0).abs() >= TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} is not 1")));
        }
        Ok(state)
    }

    pub(crate) fn from_matrix_unchecked(rho: Array2<C64>) -> Self {
        Self { rho }
    }

    pub fn from_operator(op: &OperatorMatrix) -> Result<Self> {
        Self::from_matrix(op.to_dense())
    }

    /// Diagonal state with the given populations.
    pub fn from_probabilities(probs: &[f64]) -> Result<Self> {
        Self::from_matrix(Array2::from_diag(&Array1::from_iter(probs.iter().map(|&p| C64::new(p, 0.0)))))
    }

    /// `|ψ⟩⟨ψ|` for a normalized state vector.
    pub fn pure(psi: &Array1<C64>) -> Result<Self> {
        let n = psi.len();
        Self::from_matrix(Array2::from_shape_fn((n, n), |(i, j)| psi[i] * psi[j].conj()))
    }

    /// Fock state `|n⟩⟨n|` in a space of dimension `dim`.
    pub fn basis(dim: usize, n: usize) -> Result<Self> {
        let mut p = vec![0.0; dim];
        *p.get_mut(n).ok_or(Error::InvalidParameter(format!("level {n} outside dimension {dim}")))? = 1.0;
        Self::from_probabilities(&p)
    }

    /// Product state `self ⊗ other`.
    pub fn tensor(&self, other: &Self) -> Self {
        let (d1, d2) = (self.dim(), other.dim());
        let rho = Array2::from_shape_fn((d1 * d2, d1 * d2), |(i, j)| {
            self.rho[[i / d2, j / d2]] * other.rho[[i % d2, j % d2]]
        });
        Self { rho }
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.rho
    }

    pub fn into_matrix(self) -> Array2<C64> {
        self.rho
    }

    pub fn to_operator(&self) -> OperatorMatrix {
        OperatorMatrix::from_dense(&self.rho)
    }

    pub fn trace(&self) -> f64 {
        self.rho.diag().iter().map(|z| z.re).sum()
    }

    /// `Tr ρ²`.
    pub fn purity(&self) -> f64 {
        self.rho.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.rho[[i, j]] - self.rho[[j, i]].conj()).norm());
            }
        }
        worst
    }

    /// Smallest eigenvalue; O(dim³).
    pub fn min_eigenvalue(&self) -> f64 {
        linalg::eigvalsh(&self.rho)[0]
    }

    pub fn check_positive(&self, tol: f64) -> Result<()> {
        let min = self.min_eigenvalue();
        if min < -tol {
            return Err(Error::InvalidState(format!("negative eigenvalue {min:e}")));
        }
        Ok(())
    }
}

/// Fock-level populations `p_n` of a single-mode state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumberDistribution {
    pub probs: Vec<f64>,
}

impl NumberDistribution {
    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// Annihilation operator with `⟨n-1|â|n⟩ = √n`.
pub fn annihilation_op(cutoff: FockCutoff) -> OperatorMatrix {
    OperatorMatrix::from_triplets(
        cutoff.dim(),
        (1..cutoff.dim()).map(|n| (n - 1, n, C64::new((n as f64).sqrt(), 0.0))),
    )
}

pub fn number_op(cutoff: FockCutoff) -> OperatorMatrix {
    OperatorMatrix::from_diagonal(&(0..cutoff.dim()).map(|n| n as f64).collect::<Vec<_>>())
}

pub fn tensor_product(a: &OperatorMatrix, b: &OperatorMatrix) -> OperatorMatrix {
    a.kron(b)
}

/// Thermal state renormalized over the cutoff, with the probability mass the
/// truncation discarded.
#[derive(Debug, Clone)]
pub struct ThermalState {
    pub state: DensityMatrix,
    pub tail_mass: f64,
}

/// Truncated geometric law `n̄ⁿ / (n̄+1)ⁿ⁺¹` before renormalization.
pub fn thermal_probabilities(nbar: f64, cutoff: FockCutoff) -> (Vec<f64>, f64) {
    let ratio = nbar / (nbar + 1.0);
    let probs: Vec<f64> = (0..cutoff.dim()).map(|n| ratio.powi(n as i32) / (nbar + 1.0)).collect();
    let tail = ratio.powi(cutoff.dim() as i32);
    (probs, tail)
}

pub fn thermal_state(nbar: f64, cutoff: FockCutoff) -> Result<ThermalState> {
    if !(nbar >= 0.0) || !nbar.is_finite() {
        return Err(Error::InvalidParameter(format!("thermal occupation {nbar} must be >= 0")));
    }
    let (probs, tail_mass) = thermal_probabilities(nbar, cutoff);
    if tail_mass > TAIL_WARN {
        log::warn!(
            "thermal state n̄ = {nbar} loses {tail_mass:.3e} of its mass above n_max = {}",
            cutoff.n_max()
        );
    }
    let norm: f64 = probs.iter().sum();
    let probs: Vec<f64> = probs.iter().map(|p| p / norm).collect();
    Ok(ThermalState { state: DensityMatrix::from_probabilities(&probs)?, tail_mass })
}

/// Reduced state of one mode of a two-mode density matrix.
pub fn partial_trace(rho: &DensityMatrix, space: &TwoModeSpace, keep: Mode) -> Result<DensityMatrix> {
    if rho.dim() != space.dim() {
        return Err(Error::DimensionMismatch { expected: space.dim(), found: rho.dim() });
    }
    let (da, db) = (space.optical.dim(), space.mechanical.dim());
    let m = rho.matrix();
    let reduced = match keep {
        Mode::Optical => Array2::from_shape_fn((da, da), |(i, j)| {
            (0..db).map(|k| m[[i * db + k, j * db + k]]).sum::<C64>()
        }),
        Mode::Mechanical => Array2::from_shape_fn((db, db), |(i, j)| {
            (0..da).map(|k| m[[k * db + i, k * db + j]]).sum::<C64>()
        }),
    };
    Ok(DensityMatrix::from_matrix_unchecked(reduced))
}

/// `Tr[ρ · obs]`.
pub fn expectation(rho: &DensityMatrix, obs: &OperatorMatrix) -> Result<C64> {
    if rho.dim() != obs.dim() {
        return Err(Error::DimensionMismatch { expected: rho.dim(), found: obs.dim() });
    }
    Ok(expectation_dense(rho.matrix(), obs))
}

pub(crate) fn expectation_dense(rho: &Array2<C64>, obs: &OperatorMatrix) -> C64 {
    obs.iter().map(|(r, c, v)| v * rho[[c, r]]).sum()
}

pub fn number_distribution(rho: &DensityMatrix) -> NumberDistribution {
    NumberDistribution { probs: rho.matrix().diag().iter().map(|z| z.re).collect() }
}

/// Bose-Einstein occupation `1 / (exp(ħω / k_B T) - 1)`; zero at `T = 0`.
pub fn thermal_occupation(temperature: f64, frequency: f64) -> Result<f64> {
    if temperature < 0.0 || frequency <= 0.0 {
        return Err(Error::InvalidParameter("need temperature >= 0 and frequency > 0".into()));
    }
    if temperature == 0.0 {
        return Ok(0.0);
    }
    let x = HBAR * frequency / (K_B * temperature);
    Ok(1.0 / x.exp_m1())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn annihilation_small_cutoffs() {
        let a1 = annihilation_op(FockCutoff::new(1).unwrap());
        assert_eq!(a1.to_dense(), ndarray::arr2(&[[c(0.0), c(1.0)], [c(0.0), c(0.0)]]));
        let a2 = annihilation_op(FockCutoff::new(2).unwrap());
        assert_eq!(a2.nnz(), 2);
        assert_eq!(a2.get(0, 1), c(1.0));
        assert_eq!(a2.get(1, 2), c(2f64.sqrt()));
    }

    #[test]
    fn number_operator_identity_and_commutator_defect() {
        let cut = FockCutoff::new(10).unwrap();
        let a = annihilation_op(cut);
        let n = &a.adjoint() * &a;
        for k in 0..=10 {
            assert!((n.get(k, k) - c(k as f64)).norm() < 1e-13);
        }
        let comm = &(&a * &a.adjoint()) - &n;
        for k in 0..10 {
            assert!((comm.get(k, k) - c(1.0)).norm() < 1e-13);
        }
        // only the top level is affected by truncation
        assert!((comm.get(10, 10) - c(-10.0)).norm() < 1e-13);
    }

    #[test]
    fn zero_cutoff_rejected() {
        assert!(FockCutoff::new(0).is_err());
    }

    #[test]
    fn kron_identities_and_sparsity() {
        let i2 = OperatorMatrix::identity(2);
        let i3 = OperatorMatrix::identity(3);
        assert_eq!(tensor_product(&i2, &i3), OperatorMatrix::identity(6));
        let a = annihilation_op(FockCutoff::new(1).unwrap());
        assert_eq!(tensor_product(&a, &i2).nnz(), 2);
    }

    #[test]
    fn thermal_ground_and_geometric() {
        let vac = thermal_state(0.0, FockCutoff::new(5).unwrap()).unwrap();
        assert_eq!(number_distribution(&vac.state).probs[0], 1.0);
        assert_eq!(vac.tail_mass, 0.0);

        let th = thermal_state(1.0, FockCutoff::new(10).unwrap()).unwrap();
        let p = number_distribution(&th.state).probs;
        for n in 1..p.len() {
            assert_abs_diff_eq!(p[n] / p[n - 1], 0.5, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(th.tail_mass, 0.5f64.powi(11), epsilon = 1e-16);
    }

    #[test]
    fn thermal_mean_matches_geometric_sum() {
        // Oracle: direct sum of n p_n over the untruncated geometric law,
        // renormalized over the cutoff.
        let oracle = |nbar: f64, n_max: usize| {
            let ps: Vec<f64> = (0..=n_max).map(|n| nbar.powi(n as i32) / (nbar + 1.0).powi(n as i32 + 1)).collect();
            let z: f64 = ps.iter().sum();
            ps.iter().enumerate().map(|(n, p)| n as f64 * p).sum::<f64>() / z
        };
        let cut = FockCutoff::new(30).unwrap();
        let th = thermal_state(4.0, cut).unwrap();
        let mean = expectation(&th.state, &number_op(cut)).unwrap().re;
        // truncation at 30 removes (4/5)^31 of the mass, pulling the mean down
        assert!((mean - 4.0).abs() < 0.05, "mean {mean}");
        assert_abs_diff_eq!(mean, oracle(4.0, 30), epsilon = 1e-12);

        let th2 = thermal_state(2.0, cut).unwrap();
        let m2 = expectation(&th2.state, &number_op(cut)).unwrap();
        assert!((m2.re - oracle(2.0, 30)).abs() < 1e-12 && m2.im.abs() < 1e-15);
    }

    #[test]
    fn expectation_basic_cases() {
        let cut = FockCutoff::new(4).unwrap();
        let vac = DensityMatrix::basis(5, 0).unwrap();
        assert_eq!(expectation(&vac, &number_op(cut)).unwrap(), c(0.0));
        let th = thermal_state(1.3, cut).unwrap().state;
        assert_abs_diff_eq!(expectation(&th, &OperatorMatrix::identity(5)).unwrap().re, 1.0, epsilon = 1e-14);
        assert!(expectation(&th, &OperatorMatrix::identity(4)).is_err());
    }

    #[test]
    fn partial_trace_product_and_correlated_states() {
        let space = TwoModeSpace::new(FockCutoff::new(3).unwrap(), FockCutoff::new(2).unwrap());
        let ra = thermal_state(0.7, space.optical).unwrap().state;
        let rb = thermal_state(1.9, space.mechanical).unwrap().state;
        let prod = ra.tensor(&rb);
        let back = partial_trace(&prod, &space, Mode::Optical).unwrap();
        assert!(linalg::max_abs(&(back.matrix() - ra.matrix())) < 1e-15);
        let back_b = partial_trace(&prod, &space, Mode::Mechanical).unwrap();
        assert!(linalg::max_abs(&(back_b.matrix() - rb.matrix())) < 1e-15);

        let sym = TwoModeSpace::symmetric(3).unwrap();
        let p = [0.4, 0.3, 0.2, 0.1];
        let mut diag = vec![0.0; sym.dim()];
        for (n, &pn) in p.iter().enumerate() {
            diag[sym.index(n, n)] = pn;
        }
        let corr = DensityMatrix::from_probabilities(&diag).unwrap();
        let marg = number_distribution(&partial_trace(&corr, &sym, Mode::Mechanical).unwrap());
        assert_eq!(marg.probs, p.to_vec());

        let wrong = DensityMatrix::basis(7, 0).unwrap();
        assert!(partial_trace(&wrong, &space, Mode::Optical).is_err());
    }

    #[test]
    fn thermal_occupation_values() {
        assert_eq!(thermal_occupation(0.0, 1.0).unwrap(), 0.0);
        let omega = 2.0 * std::f64::consts::PI * 200e6;
        let n = thermal_occupation(45e-3, omega).unwrap();
        assert!((n - 4.0).abs() < 0.25, "n̄ = {n}");
        // high-temperature expansion n̄ ≈ k_B T / ħω - 1/2
        for ratio in [25.0, 50.0, 200.0] {
            let t = ratio * HBAR * omega / K_B;
            let exact = thermal_occupation(t, omega).unwrap();
            let approx = ratio - 0.5;
            assert!((exact - approx).abs() / exact < 0.01);
        }
        assert!(thermal_occupation(-1.0, 1.0).is_err());
    }

    fn random_density(dim: usize, seed: &[f64]) -> DensityMatrix {
        // ρ = X X† / Tr(X X†) from a deterministic pseudo-random X
        let x = Array2::from_shape_fn((dim, dim), |(i, j)| {
            let k = (i * dim + j) % seed.len();
            C64::new(seed[k] * ((i + 1) as f64).sin(), seed[(k + 1) % seed.len()] * ((j + 2) as f64).cos())
        });
        let xx = x.dot(&x.t().mapv(|z| z.conj()));
        let tr: C64 = xx.diag().sum();
        DensityMatrix::from_matrix(xx.mapv(|z| z / tr.re)).unwrap()
    }

    fn sparse_from(dim: usize, vals: &[(usize, usize, f64, f64)]) -> OperatorMatrix {
        OperatorMatrix::from_triplets(dim, vals.iter().map(|&(r, c, re, im)| (r % dim, c % dim, C64::new(re, im))))
    }

    proptest! {
        #[test]
        fn kron_trace_factorizes(
            a in proptest::collection::vec((0usize..4, 0usize..4, -2.0..2.0f64, -2.0..2.0f64), 1..10),
            b in proptest::collection::vec((0usize..3, 0usize..3, -2.0..2.0f64, -2.0..2.0f64), 1..8),
        ) {
            let (a, b) = (sparse_from(4, &a), sparse_from(3, &b));
            let k = tensor_product(&a, &b);
            // dense brute-force Kronecker as the oracle
            let (da, db) = (a.to_dense(), b.to_dense());
            let dense = Array2::from_shape_fn((12, 12), |(i, j)| da[[i / 3, j / 3]] * db[[i % 3, j % 3]]);
            prop_assert!(linalg::max_abs(&(&k.to_dense() - &dense)) < 1e-12);
            prop_assert!((k.trace() - a.trace() * b.trace()).norm() < 1e-12);
        }

        #[test]
        fn thermal_diagonal_non_increasing(nbar in 0.0..20.0f64, n_max in 1usize..40) {
            let th = thermal_state(nbar, FockCutoff::new(n_max).unwrap()).unwrap();
            let p = number_distribution(&th.state).probs;
            for w in p.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-15);
            }
        }

        #[test]
        fn partial_traces_preserve_trace(seed in proptest::collection::vec(-1.0..1.0f64, 5..12)) {
            let space = TwoModeSpace::new(FockCutoff::new(2).unwrap(), FockCutoff::new(3).unwrap());
            let rho = random_density(space.dim(), &seed);
            // dense summation oracle for the optical marginal
            let m = rho.matrix();
            let mut tr_a = 0.0;
            for na in 0..3 { for nb in 0..4 { tr_a += m[[space.index(na, nb), space.index(na, nb)]].re; } }
            let ra = partial_trace(&rho, &space, Mode::Optical).unwrap();
            let rb = partial_trace(&rho, &space, Mode::Mechanical).unwrap();
            prop_assert!((ra.trace() - tr_a).abs() < 1e-12);
            prop_assert!((ra.trace() - 1.0).abs() < 1e-12);
            prop_assert!((rb.trace() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn expectation_is_linear_and_conjugate_symmetric(
            seed in proptest::collection::vec(-1.0..1.0f64, 5..12),
            x in proptest::collection::vec((0usize..6, 0usize..6, -2.0..2.0f64, -2.0..2.0f64), 1..12),
            y in proptest::collection::vec((0usize..6, 0usize..6, -2.0..2.0f64, -2.0..2.0f64), 1..12),
            s in -3.0..3.0f64,
        ) {
            let rho = random_density(6, &seed);
            let (x, y) = (sparse_from(6, &x), sparse_from(6, &y));
            let ex = expectation(&rho, &x).unwrap();
            let ey = expectation(&rho, &y).unwrap();
            let lin = expectation(&rho, &(&x.scale_real(s) + &y)).unwrap();
            prop_assert!((lin - (ex * s + ey)).norm() < 1e-10);
            let adj = expectation(&rho, &x.adjoint()).unwrap();
            prop_assert!((adj - ex.conj()).norm() < 1e-12);
        }
    }
}
