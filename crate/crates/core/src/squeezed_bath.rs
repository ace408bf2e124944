//! Effective single-mode description of polariton B coupled to a squeezed
//! thermal reservoir.
//!
//! Projecting the bare dissipators onto B (with A in vacuum) gives
//! `Γ(N̄+1) L[B] + Γ N̄ L[B†] + Γ M̄ J[B] + Γ M̄* J[B†]`, a Lindblad generator
//! with Kossakowski matrix `Γ [[N̄+1, M̄], [M̄*, N̄]]` over `(B, B†)`. It is
//! diagonalized into two ordinary jump operators so the generic integrator
//! applies unchanged.

use nalgebra::Matrix2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{rk4_evolve, Dissipator, EvolveOptions, Generator, Trajectory};
use crate::error::{Error, Result};
use crate::fock::{annihilation_op, number_op, DensityMatrix, FockCutoff, NumberDistribution, OperatorMatrix};
use crate::normal_modes::BogoliubovMatrices;

const SQUEEZE_TOL: f64 = 1e-10;

/// Reservoir seen by polariton B. `mbar` is the squeezing parameter after the
/// phase of B has been rotated by `rotation` so that it is real and `<= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveBath {
    pub gamma_b: f64,
    pub nbar_b: f64,
    pub mbar_b: f64,
    /// `B_rotated = B e^{i·rotation}`.
    pub rotation: f64,
}

impl EffectiveBath {
    /// Builds a bath from a possibly complex `M̄`, fixing the gauge.
    pub fn new(gamma_b: f64, nbar_b: f64, mbar_b: C64) -> Result<Self> {
        if !(gamma_b > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "effective decay rate must be positive, got {gamma_b}; weak-coupling reduction invalid"
            )));
        }
        if nbar_b < 0.0 {
            return Err(Error::InvalidParameter(format!("N_B must be >= 0, got {nbar_b}")));
        }
        let excess = mbar_b.norm_sqr() - nbar_b * (nbar_b + 1.0);
        if excess > SQUEEZE_TOL {
            return Err(Error::InvalidParameter(format!("|M|^2 exceeds N(N+1) by {excess:e}")));
        }
        let rotation = if mbar_b.norm() == 0.0 { 0.0 } else { 0.5 * (mbar_b.arg() - std::f64::consts::PI) };
        Ok(Self { gamma_b, nbar_b, mbar_b: -mbar_b.norm(), rotation })
    }

    pub fn thermal(gamma_b: f64, nbar_b: f64) -> Result<Self> {
        Self::new(gamma_b, nbar_b, C64::new(0.0, 0.0))
    }

    /// Smallest single-mode cutoff accepted by [`evolve_effective_b`].
    pub fn min_cutoff(&self) -> usize {
        (8.0 * self.nbar_b).ceil() as usize + 10
    }
}

/// Reservoir parameters of B from the exact transformation coefficients.
pub fn effective_bath_exact(bog: &BogoliubovMatrices, kappa: f64, gamma: f64, nbar_a: f64, nbar_b: f64) -> Result<EffectiveBath> {
    let (u12, v12) = (bog.u[(0, 1)], bog.v[(0, 1)]);
    let (u22, v22) = (bog.u[(1, 1)], bog.v[(1, 1)]);
    let rate = kappa * (u12.norm_sqr() - v12.norm_sqr()) + gamma * (u22.norm_sqr() - v22.norm_sqr());
    if !(rate > 0.0) {
        return Err(Error::InvalidParameter(format!("effective decay rate {rate} is not positive")));
    }
    let n = kappa * (nbar_a + 1.0) * v12.norm_sqr()
        + kappa * nbar_a * u12.norm_sqr()
        + gamma * (nbar_b + 1.0) * v22.norm_sqr()
        + gamma * nbar_b * u22.norm_sqr();
    let m = v12 * u12 * (kappa * (2.0 * nbar_a + 1.0)) + v22 * u22 * (gamma * (2.0 * nbar_b + 1.0));
    EffectiveBath::new(rate, n / rate, m / rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureStats {
    pub var_x: f64,
    pub var_y: f64,
}

impl QuadratureStats {
    pub fn population(&self) -> f64 {
        0.5 * (self.var_x + self.var_y - 1.0)
    }

    pub fn uncertainty_product(&self) -> f64 {
        self.var_x * self.var_y
    }
}

pub fn steady_variances(bath: &EffectiveBath) -> QuadratureStats {
    QuadratureStats { var_x: bath.nbar_b - bath.mbar_b + 0.5, var_y: bath.nbar_b + bath.mbar_b + 0.5 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqueezingDecomposition {
    pub n_th: f64,
    pub r: f64,
}

impl SqueezingDecomposition {
    /// `(N̄, M̄)` with `N̄ = N_th + (2N_th+1) sinh²r`, `M̄ = -cosh r sinh r (2N_th+1)`.
    pub fn moments(&self) -> (f64, f64) {
        let w = 2.0 * self.n_th + 1.0;
        (self.n_th + w * self.r.sinh().powi(2), -self.r.cosh() * self.r.sinh() * w)
    }
}

/// Inverts the squeezed-thermal parametrization. With `s = N̄ + ½`,
/// `N_th + ½ = √(s² - M̄²)` and `tanh 2r = -M̄ / s`.
pub fn squeezing_decomposition(nbar: f64, mbar: f64) -> Result<SqueezingDecomposition> {
    let s = nbar + 0.5;
    let excess = mbar * mbar - nbar * (nbar + 1.0);
    if nbar < 0.0 || excess > SQUEEZE_TOL {
        return Err(Error::InvalidParameter(format!("(N = {nbar}, M = {mbar}) violates M^2 <= N(N+1)")));
    }
    let w = (s * s - mbar * mbar).max(0.25).sqrt();
    Ok(SqueezingDecomposition { n_th: w - 0.5, r: 0.5 * (-mbar / s).atanh() })
}

/// Reference frame of the effective evolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Frame {
    /// Rotating at ω_B: `H_B` drops out and the squeezing terms are static.
    Rotating,
    /// Lab frame with `H_B = ω_B B†B`.
    Lab,
}

/// Jump operators equivalent to the squeezed-bath dissipator.
pub fn effective_dissipators(bath: &EffectiveBath, cutoff: FockCutoff) -> Result<Vec<Dissipator>> {
    let b = annihilation_op(cutoff);
    let bd = b.adjoint();
    let (n, m) = (bath.nbar_b, bath.mbar_b);
    let kossakowski = Matrix2::new(n + 1.0, m, m, n) * bath.gamma_b;
    let eig = kossakowski.symmetric_eigen();
    let mut out = Vec::new();
    for k in 0..2 {
        let lambda = eig.eigenvalues[k];
        if lambda < -1e-12 * bath.gamma_b {
            return Err(Error::InvalidParameter(format!("squeezed bath is not completely positive (eigenvalue {lambda:e})")));
        }
        if lambda <= 0.0 {
            continue;
        }
        let w = eig.eigenvectors.column(k);
        let jump = &b.scale_real(w[0]) + &bd.scale_real(w[1]);
        out.push(Dissipator::new(jump, lambda)?);
    }
    Ok(out)
}

/// Quadratures `X = (B + B†)/√2`, `Y = (B - B†)/(i√2)` of the evolution frame.
pub fn quadrature_squares(cutoff: FockCutoff) -> (OperatorMatrix, OperatorMatrix) {
    let b = annihilation_op(cutoff);
    let bd = b.adjoint();
    let x = (&b + &bd).scale_real(std::f64::consts::FRAC_1_SQRT_2);
    let y = (&b - &bd).scale(C64::new(0.0, -std::f64::consts::FRAC_1_SQRT_2));
    (&x * &x, &y * &y)
}

/// Integrates the effective master equation of B. Records `N_B`, `X2`, `Y2`.
pub fn evolve_effective_b(
    bath: &EffectiveBath,
    omega_b: f64,
    frame: Frame,
    rho_b0: &DensityMatrix,
    t: f64,
    opts: &EvolveOptions,
) -> Result<(DensityMatrix, Trajectory)> {
    let cutoff = FockCutoff::new(rho_b0.dim() - 1)?;
    if cutoff.n_max() < bath.min_cutoff() {
        return Err(Error::InvalidParameter(format!(
            "single-mode cutoff {} below the required {} for N_B = {}",
            cutoff.n_max(),
            bath.min_cutoff(),
            bath.nbar_b
        )));
    }
    let n = number_op(cutoff);
    let h = match frame {
        Frame::Rotating => OperatorMatrix::zeros(cutoff.dim()),
        Frame::Lab => n.scale_real(omega_b),
    };
    let gen = Generator::new(&h, &effective_dissipators(bath, cutoff)?)?;
    let (x2, y2) = quadrature_squares(cutoff);
    rk4_evolve(rho_b0, &gen, 0.0, t, opts, &[("N_B", &n), ("X2", &x2), ("Y2", &y2)])
}

/// χ² distance of a number distribution from the geometric law with the same
/// mean, both restricted to the support of `dist`.
pub fn nonthermality_chi2(dist: &NumberDistribution) -> f64 {
    let mean = dist.mean() / dist.total();
    let ratio = mean / (mean + 1.0);
    let geo: Vec<f64> = (0..dist.probs.len()).map(|k| ratio.powi(k as i32)).collect();
    let z: f64 = geo.iter().sum();
    dist.probs
        .iter()
        .zip(&geo)
        .map(|(p, q)| {
            let q = q / z;
            (p / dist.total() - q).powi(2) / q
        })
        .sum()
}
