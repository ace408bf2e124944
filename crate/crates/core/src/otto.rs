//! Four-stroke Otto cycle driven by the detuning, with its energy ledger.
//!
//! Stroke 1 ramps δ_i → δ_f, stroke 2 holds δ_f, stroke 3 ramps back and
//! stroke 4 holds δ_i. Heat and work are accumulated per sampling interval as
//! `Q_k = Tr[(ρ_{k+1} - ρ_k) H̄_k]` and `W_k = Tr[ρ̄_k (H_{k+1} - H_k)]`, where
//! bars denote interval midpoints. This is the trapezoid rule applied to
//! `Tr[ρ̇ H]` and `Tr[ρ Ḣ]` with the derivative taken at the midpoint, and
//! `Q_k + W_k` telescopes to the endpoint energy change.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{rk4_evolve, standard_dissipators, EvolveOptions, Generator, Trajectory};
use crate::error::{Error, Result};
use crate::fock::{expectation, thermal_state, DensityMatrix, OperatorMatrix, TwoModeSpace};
use crate::model::{SystemParams, TwoModeOperators};
use crate::normal_modes::{bogoliubov_numeric, stability_check, thermal_polariton_populations, BogoliubovMatrices};

/// Stride check: full- and half-resolution quadratures must agree to this.
const STRIDE_TOL: f64 = 1e-2;
/// Most negative eigenvalue accepted at stroke boundaries.
const POSITIVITY_TOL: f64 = 1e-8;
const MUCH_LESS_OK: f64 = 5.0;
const MUCH_LESS_FAIL: f64 = 2.0;
const TIGHT_STRICT: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepPolicy {
    /// RK4 step on strokes 1-3.
    pub dt_fast: f64,
    /// RK4 step on the long stroke-4 hold.
    pub dt_slow: f64,
    /// Time between recorded samples on the ramps.
    pub ramp_spacing: f64,
    /// Time between recorded samples on the holds.
    pub hold_spacing: f64,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self { dt_fast: 1e-3, dt_slow: 1e-2, ramp_spacing: 0.02, hold_spacing: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleConfig {
    pub delta_i: f64,
    pub delta_f: f64,
    /// Stroke durations τ₁..τ₄ in units of 1/ω_m.
    pub tau: [f64; 4],
    /// Rates, coupling and reservoir occupations; `params.delta` is ignored.
    pub params: SystemParams,
    pub cutoffs: TwoModeSpace,
    #[serde(default)]
    pub steps: StepPolicy,
    /// Refuse configurations that violate the timescale hierarchy.
    #[serde(default = "yes")]
    pub enforce_hierarchy: bool,
}

fn yes() -> bool {
    true
}

impl CycleConfig {
    /// Detuning ordering and stability at both ends. Any linear ramp between
    /// two stable detunings stays stable because the region δ < -4g² is convex.
    pub fn validate(&self) -> Result<()> {
        let (di, df, g) = (self.delta_i, self.delta_f, self.params.g);
        if di == df {
            return Err(Error::InvalidParameter("delta_i == delta_f gives a zero-area cycle".into()));
        }
        if !(di < df && df < 0.0) {
            return Err(Error::InvalidParameter(format!("need delta_i < delta_f < 0, got {di} and {df}")));
        }
        for d in [di, df] {
            if !stability_check(d, g) {
                return Err(Error::Unstable { delta: d, g });
            }
        }
        if self.tau.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidParameter("stroke durations must be positive".into()));
        }
        let s = &self.steps;
        if [s.dt_fast, s.dt_slow, s.ramp_spacing, s.hold_spacing].iter().any(|x| !(*x > 0.0)) {
            return Err(Error::InvalidParameter("step policy entries must be positive".into()));
        }
        let p = self.params.with_delta(di);
        p.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Ok,
    Warn,
    Fail,
}

/// One inequality of the hierarchy, with `ratio = larger / smaller`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimescaleCheck {
    pub relation: String,
    pub ratio: f64,
    pub status: CheckStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimescaleReport {
    pub checks: Vec<TimescaleCheck>,
}

impl TimescaleReport {
    pub fn warnings(&self) -> impl Iterator<Item = &TimescaleCheck> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Warn)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TimescaleCheck> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail)
    }
}

/// Checks `1/τ₄ < γ ≪ 1/τ₂ < κ < 1/τ₁,₃ ≪ G ≪ ω_m`.
///
/// A strict `<` fails at ratio ≤ 1 and warns below 2. A `≪` fails below 2
/// and warns below 5.
pub fn validate_timescales(cfg: &CycleConfig) -> Result<TimescaleReport> {
    let p = &cfg.params;
    let [t1, t2, t3, t4] = cfg.tau;
    let strict = |relation: &str, ratio: f64| {
        let status = if !(ratio > 1.0) {
            CheckStatus::Fail
        } else if ratio < TIGHT_STRICT {
            CheckStatus::Warn
        } else {
            CheckStatus::Ok
        };
        TimescaleCheck { relation: relation.into(), ratio, status }
    };
    let much = |relation: &str, ratio: f64| {
        let status = if !(ratio >= MUCH_LESS_FAIL) {
            CheckStatus::Fail
        } else if ratio < MUCH_LESS_OK {
            CheckStatus::Warn
        } else {
            CheckStatus::Ok
        };
        TimescaleCheck { relation: relation.into(), ratio, status }
    };
    let report = TimescaleReport {
        checks: vec![
            strict("1/tau4 < gamma", p.gamma * t4),
            much("gamma << 1/tau2", 1.0 / (t2 * p.gamma)),
            strict("1/tau2 < kappa", p.kappa * t2),
            strict("kappa < 1/tau1", 1.0 / (p.kappa * t1)),
            strict("kappa < 1/tau3", 1.0 / (p.kappa * t3)),
            much("1/tau1 << G", p.g * t1),
            much("1/tau3 << G", p.g * t3),
            much("G << omega_m", 1.0 / p.g),
        ],
    };
    for w in report.warnings() {
        log::warn!("timescale hierarchy is tight: {} (ratio {:.3})", w.relation, w.ratio);
    }
    let failed: Vec<String> = report.failures().map(|c| format!("{} (ratio {:.3})", c.relation, c.ratio)).collect();
    if failed.is_empty() {
        Ok(report)
    } else {
        Err(Error::Hierarchy(failed.join("; ")))
    }
}

/// Real parts of the bare second moments that fix the polariton numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n_a: f64,
    pub n_b: f64,
    /// Re⟨â†b̂⟩
    pub adag_b: f64,
    /// Re⟨â²⟩
    pub aa: f64,
    /// Re⟨b̂²⟩
    pub bb: f64,
    /// Re⟨âb̂⟩
    pub ab: f64,
}

impl Moments {
    /// ⟨(b̂ + b̂†)(â + â†)⟩
    pub fn coupling(&self) -> f64 {
        2.0 * (self.ab + self.adag_b)
    }

    /// ⟨H₀⟩ at detuning δ.
    pub fn energy(&self, delta: f64, g: f64) -> f64 {
        -delta * self.n_a + self.n_b + g * self.coupling()
    }
}

const MOMENT_NAMES: [&str; 6] = ["n_a", "n_b", "adag_b", "aa", "bb", "ab"];

/// Hermitian operators whose expectations are the [`Moments`] fields.
fn moment_operators(ops: &TwoModeOperators) -> [OperatorMatrix; 6] {
    let half = |x: &OperatorMatrix| {
        let s = x + &x.adjoint();
        s.scale_real(0.5)
    };
    [
        ops.n_a.clone(),
        ops.n_b.clone(),
        half(&(&ops.a.adjoint() * &ops.b)),
        half(&(&ops.a * &ops.a)),
        half(&(&ops.b * &ops.b)),
        half(&(&ops.a * &ops.b)),
    ]
}

/// `(⟨N̂_A⟩, ⟨N̂_B⟩)` from bare moments, using canonical commutators. The
/// transformation from [`bogoliubov_numeric`] is real, so only real parts of
/// the moments enter.
pub fn polariton_populations(bog: &BogoliubovMatrices, m: &Moments) -> (f64, f64) {
    let c = [[m.n_a, m.adag_b], [m.adag_b, m.n_b]];
    let p = [[m.aa, m.ab], [m.ab, m.bb]];
    let pop = |j: usize| {
        let u = [bog.u[(0, j)].re, bog.u[(1, j)].re];
        let v = [bog.v[(0, j)].re, bog.v[(1, j)].re];
        let mut n = v[0] * v[0] + v[1] * v[1];
        for i in 0..2 {
            for k in 0..2 {
                n += (u[i] * u[k] + v[i] * v[k]) * c[i][k] - 2.0 * u[i] * v[k] * p[i][k];
            }
        }
        n
    };
    (pop(0), pop(1))
}

/// Heat and work over a stretch of evolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatWork {
    pub heat: f64,
    pub work: f64,
    /// `Tr[ρH]` at the end minus at the start.
    pub energy_change: f64,
    /// `|Q + W - ΔU|`.
    pub closure_residual: f64,
}

/// Ledger from `cross(k, j) = Tr[ρ_k H_j]` on `n` samples, for neighbours only.
fn ledger(n: usize, cross: impl Fn(usize, usize) -> f64) -> HeatWork {
    let mut heat = 0.0;
    let mut work = 0.0;
    for k in 0..n.saturating_sub(1) {
        let (a, b) = (k, k + 1);
        heat += 0.5 * (cross(b, a) + cross(b, b) - cross(a, a) - cross(a, b));
        work += 0.5 * (cross(a, b) + cross(b, b) - cross(a, a) - cross(b, a));
    }
    let energy_change = if n > 0 { cross(n - 1, n - 1) - cross(0, 0) } else { 0.0 };
    HeatWork { heat, work, energy_change, closure_residual: (heat + work - energy_change).abs() }
}

fn check_stride(full: &HeatWork, coarse: &HeatWork) -> Result<()> {
    let scale = full.heat.abs().max(full.work.abs()).max(full.energy_change.abs());
    let diff = (full.heat - coarse.heat).abs().max((full.work - coarse.work).abs());
    if diff > STRIDE_TOL * scale + 1e-12 {
        return Err(Error::LedgerClosure(diff / scale.max(f64::MIN_POSITIVE)));
    }
    Ok(())
}

/// `Q = ∫Tr[ρ̇H]dt`, `W = ∫Tr[ρḢ]dt` over stored snapshots.
///
/// Fails when halving the resolution moves Q or W by more than 1% of the
/// largest ledger entry, which signals a stride too coarse for quadrature.
pub fn heat_work_integrals<F>(snapshots: &[(f64, DensityMatrix)], h_of_t: F) -> Result<HeatWork>
where
    F: Fn(f64) -> Result<OperatorMatrix>,
{
    if snapshots.len() < 2 {
        return Err(Error::InvalidParameter("need at least two snapshots".into()));
    }
    let hs = snapshots.iter().map(|(t, _)| h_of_t(*t)).collect::<Result<Vec<_>>>()?;
    let run = |step: usize| -> Result<HeatWork> {
        let idx: Vec<usize> = (0..snapshots.len()).step_by(step).collect();
        let (mut heat, mut work) = (0.0, 0.0);
        for w in idx.windows(2) {
            let (ra, rb) = (&snapshots[w[0]].1, &snapshots[w[1]].1);
            let (ha, hb) = (&hs[w[0]], &hs[w[1]]);
            let mid = (ha + hb).scale_real(0.5);
            let dh = hb - ha;
            heat += expectation(rb, &mid)?.re - expectation(ra, &mid)?.re;
            work += 0.5 * (expectation(ra, &dh)?.re + expectation(rb, &dh)?.re);
        }
        let (first, last) = (idx[0], *idx.last().expect("non-empty"));
        let energy_change = expectation(&snapshots[last].1, &hs[last])?.re - expectation(&snapshots[first].1, &hs[first])?.re;
        Ok(HeatWork { heat, work, energy_change, closure_residual: (heat + work - energy_change).abs() })
    };
    let full = run(1)?;
    if snapshots.len() >= 3 && snapshots.len() % 2 == 1 {
        check_stride(&full, &run(2)?)?;
    }
    Ok(full)
}

/// Bare-mode split of one stroke.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BareLedger {
    /// `∫ -δ d⟨â†â⟩`
    pub q_a: f64,
    /// `∫ d⟨b̂†b̂⟩`
    pub q_b: f64,
    /// `∫ -δ̇ ⟨â†â⟩ dt`
    pub w_a: f64,
    /// `g Δ⟨(b̂ + b̂†)(â + â†)⟩`
    pub correlation: f64,
    /// `|Q_a + Q_b + W_a + corr - ΔU|`, zero up to rounding.
    pub identity_residual: f64,
}

/// Sampled observables of a cycle, one entry per sample.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CycleSeries {
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
    pub n_a: Vec<f64>,
    pub n_b: Vec<f64>,
    #[serde(rename = "N_A")]
    pub big_n_a: Vec<f64>,
    #[serde(rename = "N_B")]
    pub big_n_b: Vec<f64>,
    /// ⟨(b̂ + b̂†)(â + â†)⟩
    pub coupling: Vec<f64>,
    pub energy: Vec<f64>,
    pub purity: Vec<f64>,
}

impl CycleSeries {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    fn extend(&mut self, other: &CycleSeries) {
        let skip = usize::from(!self.t.is_empty() && other.t.first() == self.t.last());
        self.t.extend_from_slice(&other.t[skip..]);
        self.delta.extend_from_slice(&other.delta[skip..]);
        self.n_a.extend_from_slice(&other.n_a[skip..]);
        self.n_b.extend_from_slice(&other.n_b[skip..]);
        self.big_n_a.extend_from_slice(&other.big_n_a[skip..]);
        self.big_n_b.extend_from_slice(&other.big_n_b[skip..]);
        self.coupling.extend_from_slice(&other.coupling[skip..]);
        self.energy.extend_from_slice(&other.energy[skip..]);
        self.purity.extend_from_slice(&other.purity[skip..]);
    }

    fn ledgers(&self, g: f64, from: usize, step: usize) -> (HeatWork, BareLedger) {
        let idx: Vec<usize> = (from..self.len()).step_by(step).collect();
        let n = idx.len();
        let h = |k: usize, j: usize| {
            let (k, j) = (idx[k], idx[j]);
            -self.delta[j] * self.n_a[k] + self.n_b[k] + g * self.coupling[k]
        };
        let hw = ledger(n, h);
        let mut bare = BareLedger { q_a: 0.0, q_b: 0.0, w_a: 0.0, correlation: 0.0, identity_residual: 0.0 };
        for w in idx.windows(2) {
            let (a, b) = (w[0], w[1]);
            let mid_delta = 0.5 * (self.delta[a] + self.delta[b]);
            bare.q_a += -mid_delta * (self.n_a[b] - self.n_a[a]);
            bare.q_b += self.n_b[b] - self.n_b[a];
            bare.w_a += -(self.delta[b] - self.delta[a]) * 0.5 * (self.n_a[a] + self.n_a[b]);
            bare.correlation += g * (self.coupling[b] - self.coupling[a]);
        }
        bare.identity_residual = (bare.q_a + bare.q_b + bare.w_a + bare.correlation - hw.energy_change).abs();
        (hw, bare)
    }
}

/// Heat/work and bare decomposition of a sampled stretch with known δ(t).
///
/// Fails like [`heat_work_integrals`] when the samples are too sparse.
pub fn bare_decomposition(series: &CycleSeries, g: f64) -> Result<(HeatWork, BareLedger)> {
    if series.len() < 2 {
        return Err(Error::InvalidParameter("need at least two samples".into()));
    }
    let (hw, bare) = series.ledgers(g, 0, 1);
    if series.len() >= 3 && series.len() % 2 == 1 {
        let (coarse, _) = series.ledgers(g, 0, 2);
        check_stride(&hw, &coarse)?;
    }
    Ok((hw, bare))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrokeKind {
    Ramp,
    Hold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrokeRecord {
    pub kind: StrokeKind,
    pub t_start: f64,
    pub t_end: f64,
    pub delta_start: f64,
    pub delta_end: f64,
    pub ledger: HeatWork,
    pub bare_ledger: BareLedger,
    /// ⟨N̂_A⟩, ⟨N̂_B⟩ at the end of the stroke.
    pub populations_end: (f64, f64),
    pub min_eigenvalue_end: f64,
    /// Raw bare moments, purity and trace as recorded by the integrator.
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub config: CycleConfig,
    pub timescales: TimescaleReport,
    /// ⟨H₀⟩ at the start of strokes 1..4.
    pub node_energies: [f64; 4],
    /// ⟨H₀⟩ after stroke 4.
    pub final_energy: f64,
    pub analytic_node_energies: Option<NodeEnergies>,
    /// Numeric minus analytic node energies.
    pub node_energy_difference: Option<[f64; 4]>,
    /// W₁, W₃
    pub stroke_work: [f64; 2],
    /// Q₂, Q₄
    pub stroke_heat: [f64; 2],
    /// Q₁, Q₃: heat exchanged during the ramps.
    pub ramp_heat: [f64; 2],
    pub total_work: f64,
    /// `-W_tot / Q₄`, absent when no heat is absorbed on stroke 4.
    pub efficiency: Option<f64>,
    /// `1 - ω_B(δ_f)/ω_B(δ_i)`
    pub analytic_efficiency: f64,
    /// `W₁ + W₃ + Q₂ + Q₄`
    pub first_law_residual: f64,
    /// ⟨N̂_B⟩ after stroke 4 minus its initial value.
    pub thermal_gap: f64,
    pub strokes: Vec<StrokeRecord>,
    pub series: CycleSeries,
    pub max_trace_drift: f64,
    pub max_hermiticity_error: f64,
}

struct StrokePlan {
    kind: StrokeKind,
    duration: f64,
    from: f64,
    to: f64,
    dt: f64,
}

/// Evolves the full master equation through the four strokes from the
/// thermal product state at `(n̄_a, n̄_b)`.
pub fn run_cycle(cfg: &CycleConfig) -> Result<CycleRecord> {
    cfg.validate()?;
    let timescales = if cfg.enforce_hierarchy {
        validate_timescales(cfg)?
    } else {
        validate_timescales(cfg).unwrap_or_default()
    };
    let p = cfg.params.with_delta(cfg.delta_i);
    let g = p.g;
    let ops = TwoModeOperators::new(cfg.cutoffs);
    let dissipators = standard_dissipators(&ops, &p)?;
    let moment_ops = moment_operators(&ops);
    let observables: Vec<(&str, &OperatorMatrix)> = MOMENT_NAMES.iter().copied().zip(moment_ops.iter()).collect();
    let static_h = &ops.n_b + &ops.coupling.scale_real(g);
    let minus_na = ops.n_a.scale_real(-1.0);

    let rho_a = thermal_state(p.nbar_a, cfg.cutoffs.optical)?;
    let rho_b = thermal_state(p.nbar_b, cfg.cutoffs.mechanical)?;
    let mut rho = rho_a.state.tensor(&rho_b.state);

    let (di, df) = (cfg.delta_i, cfg.delta_f);
    let s = &cfg.steps;
    let plans = [
        StrokePlan { kind: StrokeKind::Ramp, duration: cfg.tau[0], from: di, to: df, dt: s.dt_fast },
        StrokePlan { kind: StrokeKind::Hold, duration: cfg.tau[1], from: df, to: df, dt: s.dt_fast },
        StrokePlan { kind: StrokeKind::Ramp, duration: cfg.tau[2], from: df, to: di, dt: s.dt_fast },
        StrokePlan { kind: StrokeKind::Hold, duration: cfg.tau[3], from: di, to: di, dt: s.dt_slow },
    ];

    let mut strokes = Vec::with_capacity(4);
    let mut series = CycleSeries::default();
    let mut node_energies = [0.0; 4];
    let mut t0 = 0.0;
    for (k, plan) in plans.iter().enumerate() {
        let t1 = t0 + plan.duration;
        let rate = (plan.to - plan.from) / plan.duration;
        let (from, start) = (plan.from, t0);
        let delta_of = move |t: f64| from + rate * (t - start);
        let gen = Generator::new(&static_h, &dissipators)?.with_drive(&minus_na, Box::new(delta_of))?;
        let spacing = match plan.kind {
            StrokeKind::Ramp => s.ramp_spacing,
            StrokeKind::Hold => s.hold_spacing,
        };
        let every = ((spacing / plan.dt).round() as usize).max(1);
        log::info!("stroke {}: {:?} over [{t0}, {t1}] with dt = {}", k + 1, plan.kind, plan.dt);
        let (next, traj) = rk4_evolve(&rho, &gen, t0, t1, &EvolveOptions::sampled(plan.dt, every), &observables)?;
        rho = next;

        let stroke_series = derive_series(&traj, &delta_of, g)?;
        let (ledger, bare) = bare_decomposition(&stroke_series, g)?;
        node_energies[k] = stroke_series.energy[0];
        let min_eig = rho.min_eigenvalue();
        if min_eig < -POSITIVITY_TOL {
            return Err(Error::InvalidState(format!("stroke {} ends with eigenvalue {min_eig:e}", k + 1)));
        }
        let last = stroke_series.len() - 1;
        strokes.push(StrokeRecord {
            kind: plan.kind,
            t_start: t0,
            t_end: t1,
            delta_start: plan.from,
            delta_end: plan.to,
            ledger,
            bare_ledger: bare,
            populations_end: (stroke_series.big_n_a[last], stroke_series.big_n_b[last]),
            min_eigenvalue_end: min_eig,
            trajectory: traj,
        });
        series.extend(&stroke_series);
        t0 = t1;
    }

    let final_energy = *series.energy.last().expect("non-empty series");
    let analytic = analytic_node_energies(di, df, g, p.nbar_b).ok();
    let difference = analytic.as_ref().map(|a| [0, 1, 2, 3].map(|k| node_energies[k] - a.values[k]));
    let stroke_work = [strokes[0].ledger.work, strokes[2].ledger.work];
    let stroke_heat = [strokes[1].ledger.heat, strokes[3].ledger.heat];
    let ramp_heat = [strokes[0].ledger.heat, strokes[2].ledger.heat];
    let total_work = stroke_work[0] + stroke_work[1];
    let q_in = stroke_heat[1];
    let efficiency = (q_in > 0.0).then(|| -total_work / q_in);
    let wi = bogoliubov_numeric(di, g)?.spectrum.omega_b;
    let wf = bogoliubov_numeric(df, g)?.spectrum.omega_b;
    let thermal_gap = series.big_n_b.last().copied().unwrap_or(0.0) - series.big_n_b[0];
    if thermal_gap.abs() > 1e-3 {
        log::info!("stroke 4 leaves polariton B {thermal_gap:.4} away from its initial population");
    }
    Ok(CycleRecord {
        config: cfg.clone(),
        timescales,
        node_energies,
        final_energy,
        analytic_node_energies: analytic,
        node_energy_difference: difference,
        stroke_work,
        stroke_heat,
        ramp_heat,
        total_work,
        efficiency,
        analytic_efficiency: 1.0 - wf / wi,
        first_law_residual: stroke_work[0] + stroke_work[1] + stroke_heat[0] + stroke_heat[1],
        thermal_gap,
        max_trace_drift: strokes.iter().map(|s| s.trajectory.max_trace_drift).fold(0.0, f64::max),
        max_hermiticity_error: strokes.iter().map(|s| s.trajectory.max_hermiticity_error).fold(0.0, f64::max),
        strokes,
        series,
    })
}

fn derive_series(traj: &Trajectory, delta_of: &impl Fn(f64) -> f64, g: f64) -> Result<CycleSeries> {
    let col = |name: &str| traj.series(name).expect("recorded moment");
    let cols = MOMENT_NAMES.map(col);
    let n = traj.times.len();
    let mut out = CycleSeries {
        t: traj.times.clone(),
        purity: traj.purity.clone(),
        ..Default::default()
    };
    let mut cache: Option<(f64, BogoliubovMatrices)> = None;
    for k in 0..n {
        let t = traj.times[k];
        let delta = delta_of(t);
        let m = Moments { n_a: cols[0][k], n_b: cols[1][k], adag_b: cols[2][k], aa: cols[3][k], bb: cols[4][k], ab: cols[5][k] };
        let bog = match &cache {
            Some((d, b)) if *d == delta => b.clone(),
            _ => {
                let b = bogoliubov_numeric(delta, g)?;
                cache = Some((delta, b.clone()));
                b
            }
        };
        let (na, nb) = polariton_populations(&bog, &m);
        out.delta.push(delta);
        out.n_a.push(m.n_a);
        out.n_b.push(m.n_b);
        out.big_n_a.push(na);
        out.big_n_b.push(nb);
        out.coupling.push(m.coupling());
        out.energy.push(m.energy(delta, g));
    }
    Ok(out)
}

/// Closed-form B-cycle node energies, second order in g.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeEnergies {
    pub values: [f64; 4],
    /// δ_i < -1 < δ_f < 0 and g ≤ 0.2.
    pub in_validity_regime: bool,
}

/// `E_k = ω_B(δ)[⟨N̂_B⟩ - (g/(δ-1))²]` at the four cycle nodes, with ω_B and
/// ⟨N̂_B⟩ expanded to second order in g and n̄_a = 0.
pub fn analytic_node_energies(delta_i: f64, delta_f: f64, g: f64, nbar_b: f64) -> Result<NodeEnergies> {
    for d in [delta_i, delta_f] {
        if (d * d - 1.0).abs() < 1e-12 {
            return Err(Error::Singular("second-order node energies", d));
        }
    }
    let in_validity_regime = delta_i < -1.0 && -1.0 < delta_f && delta_f < 0.0 && g <= 0.2;
    if !in_validity_regime {
        log::warn!("node energy formulas used outside their validity regime (delta_i = {delta_i}, delta_f = {delta_f}, g = {g})");
    }
    let g2 = g * g;
    let sq = |d: f64| (d * d - 1.0).powi(2);
    let omega_bi = 1.0 + 2.0 * delta_i * g2 / (delta_i * delta_i - 1.0);
    let omega_bf = 2.0 * g2 / (delta_f * delta_f - 1.0) - delta_f;
    let offset_i = (g / (delta_i - 1.0)).powi(2);
    let offset_f = (g / (delta_f - 1.0)).powi(2);
    let hot = (1.0 + 4.0 * delta_i * g2 / sq(delta_i)) * nbar_b;
    let cold = 2.0 * (1.0 + delta_f * delta_f) * g2 / sq(delta_f) * nbar_b;
    Ok(NodeEnergies {
        values: [
            omega_bi * hot,
            omega_bf * (hot + offset_i - offset_f),
            omega_bf * cold,
            omega_bi * (cold + offset_f - offset_i),
        ],
        in_validity_regime,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticPerformance {
    pub w_tot_a: f64,
    pub w_tot_b: f64,
    pub eta_a: f64,
    pub eta_b: f64,
}

/// Total work `(ω_i - ω_f)(⟨N⟩_f - ⟨N⟩_i)` and efficiency `1 - ω_f/ω_i` of
/// both polariton cycles, with populations of the bare thermal product
/// evaluated in the exact normal modes at each detuning.
pub fn work_efficiency_analytic(delta_i: f64, delta_f: f64, g: f64, nbar_a: f64, nbar_b: f64) -> Result<AnalyticPerformance> {
    if delta_i == delta_f {
        return Err(Error::InvalidParameter("delta_i == delta_f gives a zero-area cycle".into()));
    }
    let bi = bogoliubov_numeric(delta_i, g)?;
    let bf = bogoliubov_numeric(delta_f, g)?;
    let (na_i, nb_i) = thermal_polariton_populations(&bi, nbar_a, nbar_b);
    let (na_f, nb_f) = thermal_polariton_populations(&bf, nbar_a, nbar_b);
    let (si, sf) = (bi.spectrum, bf.spectrum);
    Ok(AnalyticPerformance {
        w_tot_a: (si.omega_a - sf.omega_a) * (na_f - na_i),
        w_tot_b: (si.omega_b - sf.omega_b) * (nb_f - nb_i),
        eta_a: 1.0 - sf.omega_a / si.omega_a,
        eta_b: 1.0 - sf.omega_b / si.omega_b,
    })
}

/// Small-g, near-resonant, high-temperature limits of the B cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderPerformance {
    pub eta: f64,
    pub w_tot: f64,
    /// Coupling g² that maximizes the extracted work.
    pub g2_opt: f64,
    /// Efficiency at maximum power.
    pub eta_p: f64,
    /// Curzon-Ahlborn-type bound `1 - √(-δ_f/(2n̄_b + 1))`.
    pub ca_bound: f64,
}

/// Uses `k_B T_b / ħω_m ≈ n̄_b + ½`.
pub fn second_order_performance(delta_f: f64, g: f64, nbar_b: f64) -> SecondOrderPerformance {
    let g2 = g * g;
    SecondOrderPerformance {
        eta: 1.0 - (-delta_f - 2.0 * g2),
        w_tot: (-delta_f - 2.0 * g2 - 1.0) * ((1.0 - 2.0 * g2) * nbar_b - g2),
        g2_opt: -delta_f / 4.0 - 1.0 / (8.0 * nbar_b + 4.0),
        eta_p: 1.0 - (-delta_f / 2.0 + 1.0 / (4.0 * nbar_b + 2.0)),
        ca_bound: 1.0 - (-delta_f / (2.0 * nbar_b + 1.0)).sqrt(),
    }
}

/// η_B and |W_B,tot| over a (δ_f, g) grid. Rows follow `g`, columns `delta_f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMap {
    pub delta_i: f64,
    pub nbar_a: f64,
    pub nbar_b: f64,
    pub delta_f: Vec<f64>,
    pub g: Vec<f64>,
    pub efficiency: Vec<Vec<Option<f64>>>,
    pub abs_work: Vec<Vec<Option<f64>>>,
    /// `true` where the cell is unstable (or the cycle degenerate) and masked.
    pub stability_mask: Vec<Vec<bool>>,
}

pub fn sweep_map(delta_i: f64, delta_f: &[f64], g: &[f64], nbar_a: f64, nbar_b: f64) -> SweepMap {
    let rows: Vec<Vec<Option<AnalyticPerformance>>> = g
        .par_iter()
        .map(|&gg| {
            delta_f
                .iter()
                .map(|&df| {
                    let usable = stability_check(df, gg) && stability_check(delta_i, gg) && df != delta_i;
                    usable.then(|| work_efficiency_analytic(delta_i, df, gg, nbar_a, nbar_b).ok()).flatten()
                })
                .collect()
        })
        .collect();
    SweepMap {
        delta_i,
        nbar_a,
        nbar_b,
        delta_f: delta_f.to_vec(),
        g: g.to_vec(),
        efficiency: rows.iter().map(|r| r.iter().map(|c| c.map(|p| p.eta_b)).collect()).collect(),
        abs_work: rows.iter().map(|r| r.iter().map(|c| c.map(|p| p.w_tot_b.abs())).collect()).collect(),
        stability_mask: rows.iter().map(|r| r.iter().map(Option::is_none).collect()).collect(),
    }
}
