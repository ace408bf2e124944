//! Polariton normal modes of the linearized optomechanical Hamiltonian.
//!
//! The quadratic form `H₀ = ½ ξ† M ξ - ½ Tr h` with `ξ = (â, b̂, â†, b̂†)` is
//! diagonalized numerically: with `K = M^{1/2} Σ M^{1/2}` (Σ = diag(1,1,-1,-1))
//! and `K = W Λ Wᵀ`, the columns of `T = M^{-1/2} W |Λ|^{1/2}` give the
//! inverse transformation `ξ = T ζ`, `ζ = (Â, B̂, Â†, B̂†)`. The branch with
//! the larger frequency is `A`; for g > 0 the two branches never cross, so
//! this agrees with adiabatic continuation through δ = -1.

use nalgebra::{DMatrix, Matrix2, Matrix4};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::eigh_real;
use crate::model::TwoModeOperators;
use crate::fock::OperatorMatrix;

const CONSTRAINT_TOL: f64 = 1e-8;
/// Below this coupling a sweep through δ = -1 cannot be labeled reliably.
pub const MIN_CROSSING_COUPLING: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolaritonSpectrum {
    pub omega_a: f64,
    pub omega_b: f64,
}

/// `δ < -4g²`, i.e. ω_B real and positive in the red-detuned regime.
pub fn stability_check(delta: f64, g: f64) -> bool {
    delta < 0.0 && delta < -4.0 * g * g
}

/// Closed-form branch frequencies, `None` when a radicand is negative.
///
/// ω_B² is evaluated as `2δ(δ + 4g²) / (δ² + 1 + √D)`, algebraically equal
/// to `(δ² + 1 - √D) / 2` but free of cancellation near the stability edge.
pub fn closed_form_frequencies(delta: f64, g: f64) -> Option<(f64, f64)> {
    let s = delta * delta + 1.0;
    let disc = (delta * delta - 1.0).powi(2) - 16.0 * g * g * delta;
    if disc < 0.0 {
        return None;
    }
    let root = disc.sqrt();
    let wa2 = 0.5 * (s + root);
    let mut wb2 = 2.0 * delta * (delta + 4.0 * g * g) / (s + root);
    if wb2 < 0.0 && wb2 > -1e-14 {
        wb2 = 0.0;
    }
    if wb2 < 0.0 {
        return None;
    }
    Some((wa2.sqrt(), wb2.sqrt()))
}

pub fn polariton_frequencies(delta: f64, g: f64) -> Result<PolaritonSpectrum> {
    if !stability_check(delta, g) {
        return Err(Error::Unstable { delta, g });
    }
    let (omega_a, omega_b) = closed_form_frequencies(delta, g).ok_or(Error::Unstable { delta, g })?;
    Ok(PolaritonSpectrum { omega_a, omega_b })
}

/// `ω_A - ω_B` at the avoided crossing δ = -1.
pub fn avoided_crossing_gap(g: f64) -> Result<f64> {
    if !(0.0..0.5).contains(&g) {
        return Err(Error::InvalidParameter(format!("avoided crossing needs 0 <= g < 1/2, got {g}")));
    }
    Ok((1.0 + 2.0 * g).sqrt() - (1.0 - 2.0 * g).sqrt())
}

/// The 4×4 Hermitian matrix M of `H₀ = ½ ξ† M ξ - ½ Tr h`.
pub fn dynamical_matrix(delta: f64, g: f64) -> DMatrix<f64> {
    let h = [[-delta, g], [g, 1.0]];
    let pair = [[0.0, g], [g, 0.0]];
    DMatrix::from_fn(4, 4, |i, j| {
        let (bi, bj) = (i / 2, j / 2);
        let (r, c) = (i % 2, j % 2);
        if bi == bj {
            h[r][c]
        } else {
            pair[r][c]
        }
    })
}

/// Normal-mode transformation `(â, b̂, â†, b̂†)ᵀ = [[U, V*], [V, U*]] (Â, B̂, Â†, B̂†)ᵀ`.
///
/// Column 0 of U and V belongs to A, column 1 to B. Gauge: diagonal entries
/// of U are real and non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct BogoliubovMatrices {
    pub u: Matrix2<C64>,
    pub v: Matrix2<C64>,
    pub spectrum: PolaritonSpectrum,
    /// Constant in `H₀ = ω_A N̂_A + ω_B N̂_B + const` (units of ħω_m).
    pub ground_offset: f64,
}

impl BogoliubovMatrices {
    /// Max-norm residuals of `U†U - V†V - I` and `UᵀV - VᵀU`.
    pub fn constraint_residuals(&self) -> (f64, f64) {
        let (u, v) = (&self.u, &self.v);
        let first = u.adjoint() * u - v.adjoint() * v - Matrix2::identity();
        let second = u.transpose() * v - v.transpose() * u;
        (max_norm2(&first), max_norm2(&second))
    }

    /// `(â, b̂, â†, b̂†) = T (Â, B̂, Â†, B̂†)`.
    pub fn inverse_matrix(&self) -> Matrix4<C64> {
        let mut t = Matrix4::zeros();
        t.fixed_view_mut::<2, 2>(0, 0).copy_from(&self.u);
        t.fixed_view_mut::<2, 2>(0, 2).copy_from(&self.v.map(|z| z.conj()));
        t.fixed_view_mut::<2, 2>(2, 0).copy_from(&self.v);
        t.fixed_view_mut::<2, 2>(2, 2).copy_from(&self.u.map(|z| z.conj()));
        t
    }

    /// `(Â, B̂, Â†, B̂†) = F (â, b̂, â†, b̂†)` with `F = [[U†, -V†], [-Vᵀ, Uᵀ]]`.
    pub fn forward_matrix(&self) -> Matrix4<C64> {
        let mut f = Matrix4::zeros();
        f.fixed_view_mut::<2, 2>(0, 0).copy_from(&self.u.adjoint());
        f.fixed_view_mut::<2, 2>(0, 2).copy_from(&(-self.v.adjoint()));
        f.fixed_view_mut::<2, 2>(2, 0).copy_from(&(-self.v.transpose()));
        f.fixed_view_mut::<2, 2>(2, 2).copy_from(&self.u.transpose());
        f
    }

    /// Max-norm deviation of `F T` from the identity.
    pub fn round_trip_residual(&self) -> f64 {
        let prod = self.forward_matrix() * self.inverse_matrix() - Matrix4::identity();
        prod.iter().fold(0.0, |acc, z| acc.max(z.norm()))
    }

    fn column(&self, branch: Branch) -> [C64; 4] {
        let j = branch.index();
        [self.u[(0, j)], self.u[(1, j)], self.v[(0, j)], self.v[(1, j)]]
    }

    fn swap_branches(&mut self) {
        self.u.swap_columns(0, 1);
        self.v.swap_columns(0, 1);
        std::mem::swap(&mut self.spectrum.omega_a, &mut self.spectrum.omega_b);
    }
}

fn max_norm2(m: &Matrix2<C64>) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    A,
    B,
}

impl Branch {
    fn index(self) -> usize {
        match self {
            Branch::A => 0,
            Branch::B => 1,
        }
    }
}

pub fn bogoliubov_numeric(delta: f64, g: f64) -> Result<BogoliubovMatrices> {
    if !stability_check(delta, g) {
        return Err(Error::Unstable { delta, g });
    }
    let m = dynamical_matrix(delta, g);
    let (mvals, mvecs) = eigh_real(&m);
    if mvals[0] <= 0.0 {
        return Err(Error::Unstable { delta, g });
    }
    let sqrt_m = &mvecs * DMatrix::from_diagonal(&mvals.iter().map(|x| x.sqrt()).collect::<Vec<_>>().into()) * mvecs.transpose();
    let inv_sqrt_m =
        &mvecs * DMatrix::from_diagonal(&mvals.iter().map(|x| 1.0 / x.sqrt()).collect::<Vec<_>>().into()) * mvecs.transpose();
    let sigma = DMatrix::from_diagonal(&vec![1.0, 1.0, -1.0, -1.0].into());
    let k = &sqrt_m * sigma * &sqrt_m;
    let k = 0.5 * (&k + k.transpose());
    let (kvals, kvecs) = eigh_real(&k);
    // ascending: -ω_A, -ω_B, ω_B, ω_A
    let (omega_b, omega_a) = (kvals[2], kvals[3]);
    let mut u = Matrix2::zeros();
    let mut v = Matrix2::zeros();
    for (j, (col, omega)) in [(3usize, omega_a), (2usize, omega_b)].into_iter().enumerate() {
        let t = &inv_sqrt_m * kvecs.column(col) * omega.sqrt();
        let sign = if t[j] < 0.0 { -1.0 } else { 1.0 };
        u[(0, j)] = C64::new(sign * t[0], 0.0);
        u[(1, j)] = C64::new(sign * t[1], 0.0);
        v[(0, j)] = C64::new(sign * t[2], 0.0);
        v[(1, j)] = C64::new(sign * t[3], 0.0);
    }
    let bog = BogoliubovMatrices {
        u,
        v,
        spectrum: PolaritonSpectrum { omega_a, omega_b },
        ground_offset: 0.5 * (omega_a + omega_b + delta - 1.0),
    };
    let (r1, r2) = bog.constraint_residuals();
    if r1.max(r2) > CONSTRAINT_TOL {
        return Err(Error::ConstraintResidual(r1.max(r2)));
    }
    Ok(bog)
}

/// Polariton annihilation operators `(Â, B̂)` on the truncated bare space.
pub fn polariton_annihilators(bog: &BogoliubovMatrices, ops: &TwoModeOperators) -> (OperatorMatrix, OperatorMatrix) {
    let a_dag = ops.a.adjoint();
    let b_dag = ops.b.adjoint();
    let build = |j: usize| {
        let terms = [
            ops.a.scale(bog.u[(0, j)].conj()),
            ops.b.scale(bog.u[(1, j)].conj()),
            a_dag.scale(-bog.v[(0, j)].conj()),
            b_dag.scale(-bog.v[(1, j)].conj()),
        ];
        terms.iter().skip(1).fold(terms[0].clone(), |acc, t| &acc + t)
    };
    (build(0), build(1))
}

/// `(N̂_A, N̂_B) = (Â†Â, B̂†B̂)` assembled from bare operators.
pub fn polariton_number_operator(bog: &BogoliubovMatrices, ops: &TwoModeOperators) -> (OperatorMatrix, OperatorMatrix) {
    let (a, b) = polariton_annihilators(bog, ops);
    (&a.adjoint() * &a, &b.adjoint() * &b)
}

/// Which bare mode polariton B resembles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    PhononLike,
    PhotonLike,
}

impl Side {
    pub fn of(delta: f64) -> Self {
        if delta < -1.0 {
            Side::PhononLike
        } else {
            Side::PhotonLike
        }
    }
}

/// Second-order thermal population of polariton B on a product of bare
/// thermal states, neglecting bare-mode correlations and squeezing.
///
/// With `n̄_a = 0` the phonon-like side reduces to
/// `[1 + 4δg²/(δ²-1)²] n̄_b + (g/(1-δ))²` and the photon-like side to
/// `2(1+δ²)g²/(δ²-1)² n̄_b + (g/(1-δ))²`.
pub fn approx_population_b(delta: f64, g: f64, nbar_a: f64, nbar_b: f64, side: Side) -> Result<f64> {
    if (delta.abs() - 1.0).abs() < 1e-12 {
        return Err(Error::Singular("second-order polariton population", delta));
    }
    if g > 0.2 {
        log::warn!("second-order population used outside its validity (g = {g} > 0.2)");
    }
    let d2 = (delta * delta - 1.0).powi(2);
    let self_weight = 1.0 + 4.0 * delta * g * g / d2;
    let cross_weight = 2.0 * (1.0 + delta * delta) * g * g / d2;
    let vacuum = (g / (1.0 - delta)).powi(2);
    Ok(match side {
        Side::PhononLike => self_weight * nbar_b + cross_weight * nbar_a + vacuum,
        Side::PhotonLike => self_weight * nbar_a + cross_weight * nbar_b + vacuum,
    })
}

/// Exact ⟨N̂_B⟩ (and ⟨N̂_A⟩) on the product of bare thermal states from the
/// numeric transformation: `Σ_i |U_ij|² n̄_i + |V_ij|² (n̄_i + 1)`.
pub fn thermal_polariton_populations(bog: &BogoliubovMatrices, nbar_a: f64, nbar_b: f64) -> (f64, f64) {
    let nbar = [nbar_a, nbar_b];
    let pop = |j: usize| {
        (0..2).map(|i| bog.u[(i, j)].norm_sqr() * nbar[i] + bog.v[(i, j)].norm_sqr() * (nbar[i] + 1.0)).sum::<f64>()
    };
    (pop(0), pop(1))
}

/// Bogoliubov matrices along a detuning sweep with branch labels assigned by
/// symplectic overlap with the previous point.
pub fn track_branches(deltas: &[f64], g: f64) -> Result<Vec<BogoliubovMatrices>> {
    let crosses = deltas.windows(2).any(|w| (w[0] + 1.0) * (w[1] + 1.0) <= 0.0);
    if crosses && g < MIN_CROSSING_COUPLING {
        return Err(Error::InvalidParameter(format!(
            "branch labels are ill-conditioned through delta = -1 for g = {g:e} < {MIN_CROSSING_COUPLING:e}"
        )));
    }
    let mut out: Vec<BogoliubovMatrices> = Vec::with_capacity(deltas.len());
    for &d in deltas {
        let mut bog = bogoliubov_numeric(d, g)?;
        if let Some(prev) = out.last() {
            let keep = symplectic_overlap(prev, Branch::A, &bog, Branch::A)
                + symplectic_overlap(prev, Branch::B, &bog, Branch::B);
            let swap = symplectic_overlap(prev, Branch::A, &bog, Branch::B)
                + symplectic_overlap(prev, Branch::B, &bog, Branch::A);
            if swap > keep {
                bog.swap_branches();
            }
        }
        out.push(bog);
    }
    Ok(out)
}

/// `|t_x† Σ t_y|` for the mode columns of two transformations.
fn symplectic_overlap(p: &BogoliubovMatrices, x: Branch, q: &BogoliubovMatrices, y: Branch) -> f64 {
    let (s, t) = (p.column(x), q.column(y));
    (s[0].conj() * t[0] + s[1].conj() * t[1] - s[2].conj() * t[2] - s[3].conj() * t[3]).norm()
}
