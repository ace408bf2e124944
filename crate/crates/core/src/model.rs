//! Physical model: parameters, the linearized Hamiltonian, mean-field
//! steady state and detuning schedules.
//!
//! Internally ħ = 1 and ω_m = 1: detunings, couplings, rates and times are
//! all expressed in units of ω_m (or ω_m⁻¹). Only `omega_m` itself and the
//! optional pump block carry SI units.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{annihilation_op, number_op, FockCutoff, OperatorMatrix, TwoModeSpace, HBAR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Mechanical frequency in rad/s.
    pub omega_m: f64,
    /// Pump detuning Δ_p / ω_m.
    pub delta: f64,
    /// Linearized coupling G / ω_m.
    pub g: f64,
    /// Cavity decay rate κ / ω_m.
    pub kappa: f64,
    /// Mechanical damping rate γ / ω_m.
    pub gamma: f64,
    /// Optical reservoir occupation.
    pub nbar_a: f64,
    /// Mechanical reservoir occupation.
    pub nbar_b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pump: Option<PumpParams>,
}

/// Drive and device parameters needed for the mean-field solution (SI).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PumpParams {
    /// Single-photon coupling g₀ in rad/s.
    pub g0: f64,
    /// Pump amplitude α_in in units such that α = α_in / Δ_p is dimensionless.
    pub alpha_in: f64,
    pub omega_c: f64,
    pub omega_p: f64,
    /// Effective mirror mass in kg.
    pub mass: f64,
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if !(self.omega_m > 0.0) {
            return bad("omega_m must be > 0");
        }
        if !(self.g >= 0.0) {
            return bad("g must be >= 0");
        }
        if !(self.kappa >= 0.0) || !(self.gamma >= 0.0) {
            return bad("decay rates must be >= 0");
        }
        if !(self.nbar_a >= 0.0) || !(self.nbar_b >= 0.0) {
            return bad("reservoir occupations must be >= 0");
        }
        if !(self.delta < 0.0) {
            return bad("only the red-detuned regime delta < 0 is supported");
        }
        if let Some(p) = &self.pump {
            if !(p.mass > 0.0) {
                return bad("pump block: mass must be > 0");
            }
        }
        Ok(())
    }

    pub fn with_delta(&self, delta: f64) -> Self {
        Self { delta, ..self.clone() }
    }
}

/// Bare-mode operators embedded in the photon ⊗ phonon space.
#[derive(Debug, Clone)]
pub struct TwoModeOperators {
    pub space: TwoModeSpace,
    pub a: OperatorMatrix,
    pub b: OperatorMatrix,
    pub n_a: OperatorMatrix,
    pub n_b: OperatorMatrix,
    /// `(b + b†)(a + a†)`, the coupling without its strength.
    pub coupling: OperatorMatrix,
}

impl TwoModeOperators {
    pub fn new(space: TwoModeSpace) -> Self {
        let ia = OperatorMatrix::identity(space.optical.dim());
        let ib = OperatorMatrix::identity(space.mechanical.dim());
        let a = annihilation_op(space.optical).kron(&ib);
        let b = ia.kron(&annihilation_op(space.mechanical));
        let n_a = number_op(space.optical).kron(&ib);
        let n_b = ia.kron(&number_op(space.mechanical));
        let xa = &a + &a.adjoint();
        let xb = &b + &b.adjoint();
        let coupling = &xb * &xa;
        Self { space, a, b, n_a, n_b, coupling }
    }

    /// `H₀ = -δ â†â + b̂†b̂ + g (b̂ + b̂†)(â + â†)` in units of ħω_m.
    pub fn hamiltonian(&self, delta: f64, g: f64) -> OperatorMatrix {
        let diag = self.n_a.scale_real(-delta);
        let h = &diag + &self.n_b;
        &h + &self.coupling.scale_real(g)
    }
}

pub fn build_hamiltonian(params: &SystemParams, cutoff_a: FockCutoff, cutoff_b: FockCutoff) -> Result<OperatorMatrix> {
    params.validate()?;
    let ops = TwoModeOperators::new(TwoModeSpace::new(cutoff_a, cutoff_b));
    Ok(ops.hamiltonian(params.delta, params.g))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldState {
    /// Intracavity amplitude α (real, non-negative by gauge choice).
    pub alpha: f64,
    /// Normalized mirror displacement x / x_zpt.
    pub beta: f64,
    /// Zero-point displacement in meters.
    pub x_zpt: f64,
    /// Self-consistent effective detuning Δ_p in rad/s.
    pub detuning: f64,
    /// Linearized coupling G = g₀ α in rad/s.
    pub coupling: f64,
}

const MEAN_FIELD_MAX_ITER: usize = 1000;
const MEAN_FIELD_RELAXATION: f64 = 0.5;
const MEAN_FIELD_TOL: f64 = 1e-12;

/// Self-consistent mean field in the κ ≪ |Δ_p| limit.
///
/// Iterates `Δ_p = ω_p - ω_c - 2 g₀ β(Δ_p)` with `α = |α_in / Δ_p|` and
/// `β = -g₀ α² / ω_m`, damped with relaxation 0.5.
pub fn mean_field(alpha_in: f64, params: &SystemParams) -> Result<MeanFieldState> {
    let pump = params
        .pump
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("mean field requires the pump block".into()))?;
    let omega_m = params.omega_m;
    let bare = pump.omega_p - pump.omega_c;
    let beta_of = |detuning: f64| {
        let alpha = (alpha_in / detuning).abs();
        (alpha, -pump.g0 * alpha * alpha / omega_m)
    };
    let mut detuning = bare;
    for _ in 0..MEAN_FIELD_MAX_ITER {
        if detuning == 0.0 {
            return Err(Error::Singular("mean field (zero effective detuning)", 0.0));
        }
        let (_, beta) = beta_of(detuning);
        let target = bare - 2.0 * pump.g0 * beta;
        let next = (1.0 - MEAN_FIELD_RELAXATION) * detuning + MEAN_FIELD_RELAXATION * target;
        let converged = (next - detuning).abs() <= MEAN_FIELD_TOL * next.abs().max(omega_m);
        detuning = next;
        if converged {
            let (alpha, beta) = beta_of(detuning);
            return Ok(MeanFieldState {
                alpha,
                beta,
                x_zpt: (HBAR / (2.0 * pump.mass * omega_m)).sqrt(),
                detuning,
                coupling: pump.g0 * alpha,
            });
        }
    }
    Err(Error::NoConvergence(MEAN_FIELD_MAX_ITER))
}

/// Pump amplitude that keeps the intracavity amplitude at `alpha` for the
/// normalized detuning `delta`, so that G = g₀ α stays fixed along a sweep.
pub fn pump_for_constant_coupling(delta: f64, alpha: f64, omega_m: f64) -> f64 {
    alpha * (delta * omega_m).abs()
}

/// One linear piece of a detuning schedule; duration in units of ω_m⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration: f64,
    pub delta_start: f64,
    pub delta_end: f64,
}

impl Segment {
    pub fn ramp(duration: f64, from: f64, to: f64) -> Self {
        Self { duration, delta_start: from, delta_end: to }
    }

    pub fn hold(duration: f64, delta: f64) -> Self {
        Self::ramp(duration, delta, delta)
    }

    pub fn slope(&self) -> f64 {
        (self.delta_end - self.delta_start) / self.duration
    }
}

/// Piecewise-linear δ(t), continuous across segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetuningSchedule {
    segments: Vec<Segment>,
}

const JOIN_TOL: f64 = 1e-12;

impl DetuningSchedule {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidParameter("schedule needs at least one segment".into()));
        }
        for (k, s) in segments.iter().enumerate() {
            if !(s.duration > 0.0) {
                return Err(Error::InvalidParameter(format!("segment {k} has non-positive duration")));
            }
            if !(s.delta_start < 0.0 && s.delta_end < 0.0) {
                return Err(Error::InvalidParameter(format!("segment {k} leaves the red-detuned regime")));
            }
        }
        for (k, w) in segments.windows(2).enumerate() {
            if (w[0].delta_end - w[1].delta_start).abs() > JOIN_TOL {
                return Err(Error::InvalidParameter(format!("segments {k} and {} are not contiguous", k + 1)));
            }
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    /// Segment index containing `t` and the segment's start time. Segments
    /// are closed on the left; the final instant belongs to the last segment.
    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let end = self.total_duration();
        if !(t >= 0.0 && t <= end * (1.0 + 1e-14)) {
            return Err(Error::OutOfDomain { t, end });
        }
        let mut start = 0.0;
        for (k, s) in self.segments.iter().enumerate() {
            if t < start + s.duration || k + 1 == self.segments.len() {
                return Ok((k, start));
            }
            start += s.duration;
        }
        unreachable!()
    }

    pub fn delta_at(&self, t: f64) -> Result<f64> {
        let (k, start) = self.locate(t)?;
        let s = &self.segments[k];
        let frac = ((t - start) / s.duration).min(1.0);
        Ok(s.delta_start + frac * (s.delta_end - s.delta_start))
    }

    /// Exact dδ/dt (right derivative at segment joins).
    pub fn rate_at(&self, t: f64) -> Result<f64> {
        let (k, _) = self.locate(t)?;
        Ok(self.segments[k].slope())
    }
}

pub fn schedule_eval(sched: &DetuningSchedule, t: f64) -> Result<f64> {
    sched.delta_at(t)
}

#[cfg(test)]
mod tests {
    fn c64(re: f64) -> num_complex::Complex64 {
        num_complex::Complex64::new(re, 0.0)
    }

    use super::*;
    use crate::linalg;
    use proptest::prelude::*;

    pub(crate) fn params(delta: f64, g: f64) -> SystemParams {
        SystemParams { omega_m: 1.0, delta, g, kappa: 0.0, gamma: 0.0, nbar_a: 0.0, nbar_b: 0.0, pump: None }
    }

    #[test]
    fn uncoupled_hamiltonian_is_diagonal() {
        let cut = FockCutoff::new(4).unwrap();
        let h = build_hamiltonian(&params(-3.0, 0.0), cut, cut).unwrap();
        let space = TwoModeSpace::new(cut, cut);
        for i in 0..space.dim() {
            let (na, nb) = space.levels(i);
            for j in 0..space.dim() {
                let want = if i == j { (3 * na + nb) as f64 } else { 0.0 };
                assert_eq!(h.get(i, j), c64(want));
            }
        }
    }

    #[test]
    fn red_detuning_required() {
        let cut = FockCutoff::new(2).unwrap();
        assert!(build_hamiltonian(&params(0.5, 0.1), cut, cut).is_err());
    }

    #[test]
    fn uncoupled_hamiltonian_commutes_with_number_operators() {
        let ops = TwoModeOperators::new(TwoModeSpace::symmetric(5).unwrap());
        let h = ops.hamiltonian(-1.7, 0.0);
        assert_eq!(h.commutator(&ops.n_a).max_abs(), 0.0);
        assert_eq!(h.commutator(&ops.n_b).max_abs(), 0.0);
    }

    #[test]
    fn truncated_spectrum_gaps() {
        // oracle: eigenvalues of the dense truncated matrix
        let ops = TwoModeOperators::new(TwoModeSpace::symmetric(6).unwrap());
        let h = ops.hamiltonian(-3.0, 0.05);
        let w = linalg::eigvalsh(&h.to_dense());
        let s = crate::normal_modes::polariton_frequencies(-3.0, 0.05).unwrap();
        assert!((w[1] - w[0] - s.omega_b).abs() < 1e-6);
        // second gap: 2ω_B ≈ 2.0 sits below ω_A ≈ 3.0
        let has_a = w.iter().any(|&e| (e - w[0] - s.omega_a).abs() < 1e-6);
        assert!(has_a);
    }

    fn pumped(g0: f64, alpha_in: f64, omega_c: f64, omega_p: f64) -> SystemParams {
        SystemParams {
            pump: Some(PumpParams { g0, alpha_in, omega_c, omega_p, mass: 1e-15 }),
            ..params(-1.0, 0.0)
        }
    }

    #[test]
    fn mean_field_trivial_limits() {
        let p = pumped(0.0, 5.0, 10.0, 7.0);
        let mf = mean_field(5.0, &p).unwrap();
        assert_eq!(mf.beta, 0.0);
        assert!((mf.detuning - (-3.0)).abs() < 1e-12);

        let p = pumped(1e-5, 0.0, 10.0, 7.0);
        let mf = mean_field(0.0, &p).unwrap();
        assert_eq!(mf.alpha, 0.0);
        assert_eq!(mf.beta, 0.0);

        assert!(mean_field(1.0, &params(-1.0, 0.0)).is_err());
    }

    #[test]
    fn mean_field_self_consistent_coupling() {
        // Target Δ_p = -3 ω_m, α = 2e4, g₀ = 1e-5 ω_m. The bare detuning that
        // produces it follows from Δ = Δ₀ + 2 g₀² α² / ω_m.
        let (g0, alpha, target) = (1e-5, 2e4, -3.0f64);
        let alpha_in = alpha * target.abs();
        let bare = target - 2.0 * g0 * g0 * alpha * alpha;
        let p = pumped(g0, alpha_in, 10.0, 10.0 + bare);
        let mf = mean_field(alpha_in, &p).unwrap();
        assert!((mf.coupling - 0.2).abs() < 1e-10);
        assert!((mf.beta - (-g0 * alpha * alpha)).abs() < 1e-6);
        let residual = mf.detuning - (p.pump.as_ref().unwrap().omega_p - 10.0 - 2.0 * g0 * mf.beta);
        assert!(residual.abs() < 1e-10);
        assert!((mf.detuning - target).abs() < 1e-10);
        // re-solving the pump for another detuning keeps G fixed
        let new_in = pump_for_constant_coupling(-0.4, mf.alpha, 1.0);
        let bare2 = -0.4 - 2.0 * g0 * g0 * alpha * alpha;
        let p2 = pumped(g0, new_in, 10.0, 10.0 + bare2);
        let mf2 = mean_field(new_in, &p2).unwrap();
        assert!((mf2.detuning + 0.4).abs() < 1e-9);
        assert!((mf2.coupling - mf.coupling).abs() < 1e-9);
    }

    #[test]
    fn schedule_examples() {
        let tau = 25.0;
        let s = DetuningSchedule::new(vec![Segment::ramp(tau, -3.0, -0.4)]).unwrap();
        assert_eq!(schedule_eval(&s, 0.0).unwrap(), -3.0);
        assert!((schedule_eval(&s, tau / 2.0).unwrap() + 1.7).abs() < 1e-15);
        assert!((schedule_eval(&s, tau).unwrap() + 0.4).abs() < 1e-15);
        assert!(schedule_eval(&s, tau * 1.1).is_err());
        assert!(schedule_eval(&s, -0.1).is_err());
        let h = DetuningSchedule::new(vec![Segment::hold(tau, -0.4)]).unwrap();
        for t in [0.0, 3.0, tau] {
            assert_eq!(schedule_eval(&h, t).unwrap(), -0.4);
            assert_eq!(h.rate_at(t).unwrap(), 0.0);
        }
    }

    #[test]
    fn schedule_rejects_bad_segments() {
        assert!(DetuningSchedule::new(vec![]).is_err());
        assert!(DetuningSchedule::new(vec![Segment::ramp(0.0, -3.0, -1.0)]).is_err());
        assert!(DetuningSchedule::new(vec![Segment::ramp(1.0, -3.0, 0.2)]).is_err());
        assert!(DetuningSchedule::new(vec![Segment::ramp(1.0, -3.0, -1.0), Segment::hold(1.0, -0.9)]).is_err());
    }

    proptest! {
        #[test]
        fn hamiltonian_is_exactly_hermitian(delta in -5.0..-0.01f64, g in 0.0..0.5f64, na in 1usize..6, nb in 1usize..6) {
            let ops = TwoModeOperators::new(TwoModeSpace::new(FockCutoff::new(na).unwrap(), FockCutoff::new(nb).unwrap()));
            prop_assert_eq!(ops.hamiltonian(delta, g).hermiticity_error(), 0.0);
        }

        #[test]
        fn schedule_is_continuous_at_joins(d in proptest::collection::vec(-5.0..-0.05f64, 2..6), taus in proptest::collection::vec(0.1..50.0f64, 5)) {
            let segs: Vec<Segment> = d.windows(2).zip(&taus).map(|(w, &t)| Segment::ramp(t, w[0], w[1])).collect();
            let s = DetuningSchedule::new(segs.clone()).unwrap();
            let mut t = 0.0;
            for seg in &segs[..segs.len() - 1] {
                t += seg.duration;
                let left = seg.delta_end;
                let right = s.delta_at(t).unwrap();
                prop_assert!((left - right).abs() < 1e-12);
                let before = s.delta_at(t - 1e-9).unwrap();
                prop_assert!((before - right).abs() < 1e-6);
            }
        }
    }
}
