//! Lindblad master-equation evolution.
//!
//! The generator is compiled once into `dρ/dt = Mρ + (Mρ)† + Σ_k r_k J_k ρ J_k†`
//! with `M = -iH - ½ Σ_k r_k J_k†J_k`. This form keeps ρ Hermitian exactly and
//! needs one sparse-dense product for the coherent part. Jump operators with
//! at most one entry per row (ladder operators on a product space) are
//! applied as a permuted, scaled copy of ρ.

use ndarray::{Array1, Array2, Zip};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{expectation_dense, DensityMatrix, OperatorMatrix};
use crate::linalg::expm_apply;
use crate::model::{SystemParams, TwoModeOperators};

/// Trace drift tolerated before a run is aborted.
pub const TRACE_DRIFT_FAIL: f64 = 1e-6;
/// Largest Hilbert-space dimension accepted by [`expm_oracle`]; the dense
/// Liouvillian has `dim⁴` entries.
pub const ORACLE_MAX_DIM: usize = 64;
const STEP_WARN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dissipator {
    pub jump_op: OperatorMatrix,
    pub rate: f64,
}

impl Dissipator {
    pub fn new(jump_op: OperatorMatrix, rate: f64) -> Result<Self> {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("dissipator rate must be >= 0, got {rate}")));
        }
        Ok(Self { jump_op, rate })
    }
}

/// `κ(n̄_a+1) L[â] + κ n̄_a L[â†] + γ(n̄_b+1) L[b̂] + γ n̄_b L[b̂†]`, zero rates omitted.
pub fn standard_dissipators(ops: &TwoModeOperators, params: &SystemParams) -> Result<Vec<Dissipator>> {
    let terms = [
        (&ops.a, params.kappa * (params.nbar_a + 1.0), false),
        (&ops.a, params.kappa * params.nbar_a, true),
        (&ops.b, params.gamma * (params.nbar_b + 1.0), false),
        (&ops.b, params.gamma * params.nbar_b, true),
    ];
    terms
        .into_iter()
        .filter(|(_, r, _)| *r > 0.0)
        .map(|(op, r, dag)| Dissipator::new(if dag { op.adjoint() } else { op.clone() }, r))
        .collect()
}

/// Off-diagonal part of a sparse matrix in plain CSR arrays, stored as
/// `phase · real values` when every entry shares one phase (the usual case
/// for `-iH` with real H), so the inner loop multiplies by reals.
#[derive(Debug, Clone)]
struct Csr {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
    real: Option<(C64, Vec<f64>)>,
}

impl Csr {
    fn off_diagonal(op: &OperatorMatrix) -> Self {
        let mut out = Csr { row_ptr: vec![0], cols: Vec::new(), vals: Vec::new(), real: None };
        for r in 0..op.dim() {
            for (c, v) in op.row(r) {
                if c != r {
                    out.cols.push(c);
                    out.vals.push(v);
                }
            }
            out.row_ptr.push(out.cols.len());
        }
        if let Some(first) = out.vals.first() {
            let phase = first / first.norm();
            let rotated: Vec<C64> = out.vals.iter().map(|v| v * phase.conj()).collect();
            if rotated.iter().all(|z| z.im.abs() <= 1e-15 * z.re.abs()) {
                out.real = Some((phase, rotated.iter().map(|z| z.re).collect()));
            }
        }
        out
    }

    fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    /// `out[i, :] += s · Σ_k A_ik rho[k, :]`
    fn mul_add(&self, s: C64, rho: &[C64], out: &mut [C64], dim: usize) {
        for i in 0..dim {
            let dst = &mut out[i * dim..(i + 1) * dim];
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let v = self.vals[p] * s;
                let src = &rho[self.cols[p] * dim..(self.cols[p] + 1) * dim];
                for (d, x) in dst.iter_mut().zip(src) {
                    *d += v * x;
                }
            }
        }
    }

    /// Like [`Csr::mul_add`] without the common phase; returns that phase.
    fn mul_add_real(&self, rho: &[C64], out: &mut [C64], dim: usize) -> Option<C64> {
        let (phase, vals) = self.real.as_ref()?;
        for i in 0..dim {
            let dst = &mut out[i * dim..(i + 1) * dim];
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let v = vals[p];
                let src = &rho[self.cols[p] * dim..(self.cols[p] + 1) * dim];
                for (d, x) in dst.iter_mut().zip(src) {
                    *d += x * v;
                }
            }
        }
        Some(*phase)
    }
}

#[derive(Debug, Clone)]
enum JumpKernel {
    /// Row i holds `coef[i]` at column `src[i]` (coef zero for empty rows).
    Monomial { src: Vec<usize>, coef: Vec<f64> },
    Complex { src: Vec<usize>, coef: Vec<C64> },
    General(OperatorMatrix),
}

impl JumpKernel {
    fn compile(op: &OperatorMatrix) -> Self {
        let dim = op.dim();
        let mut src = vec![0; dim];
        let mut coef = vec![C64::new(0.0, 0.0); dim];
        for r in 0..dim {
            let mut entries = op.row(r);
            if let Some((c, v)) = entries.next() {
                if entries.next().is_some() {
                    return JumpKernel::General(op.clone());
                }
                src[r] = c;
                coef[r] = v;
            }
        }
        if coef.iter().all(|z| z.im == 0.0) {
            JumpKernel::Monomial { src, coef: coef.iter().map(|z| z.re).collect() }
        } else {
            JumpKernel::Complex { src, coef }
        }
    }

    /// `out += rate · J ρ J†` on the upper triangle.
    fn apply(&self, rate: f64, rho: &[C64], out: &mut [C64], scratch: &mut [C64], dim: usize) {
        match self {
            JumpKernel::Monomial { src, coef } => {
                // upper triangle only; the caller mirrors
                for i in 0..dim {
                    let ci = coef[i] * rate;
                    if ci == 0.0 {
                        continue;
                    }
                    let row = &rho[src[i] * dim..(src[i] + 1) * dim];
                    let dst = &mut out[i * dim..(i + 1) * dim];
                    for j in i..dim {
                        dst[j] += row[src[j]] * (ci * coef[j]);
                    }
                }
            }
            JumpKernel::Complex { src, coef } => {
                for i in 0..dim {
                    let ci = coef[i] * rate;
                    if ci == C64::new(0.0, 0.0) {
                        continue;
                    }
                    let row = &rho[src[i] * dim..(src[i] + 1) * dim];
                    let dst = &mut out[i * dim..(i + 1) * dim];
                    for j in i..dim {
                        dst[j] += ci * coef[j].conj() * row[src[j]];
                    }
                }
            }
            JumpKernel::General(op) => {
                // scratch = J ρ; out += rate · J scratch† (= J ρ J† since ρ = ρ†)
                scratch.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
                for i in 0..dim {
                    for (k, v) in op.row(i) {
                        let src = &rho[k * dim..(k + 1) * dim];
                        let dst = &mut scratch[i * dim..(i + 1) * dim];
                        for (d, x) in dst.iter_mut().zip(src) {
                            *d += v * x;
                        }
                    }
                }
                for i in 0..dim {
                    for (k, v) in op.row(i) {
                        let v = v * rate;
                        for j in i..dim {
                            out[i * dim + j] += v * scratch[j * dim + k].conj();
                        }
                    }
                }
            }
        }
    }
}

/// Scalar time dependence of the driven Hamiltonian term.
pub type Coefficient = Box<dyn Fn(f64) -> f64 + Send + Sync>;

struct Drive {
    op: OperatorMatrix,
    diag: Vec<f64>,
    off: Csr,
    coeff: Coefficient,
}

/// Compiled master-equation generator for `H(t) = H_s + c(t) K`.
pub struct Generator {
    dim: usize,
    hamiltonian: OperatorMatrix,
    dissipators: Vec<Dissipator>,
    diag: Vec<C64>,
    off: Csr,
    drive: Option<Drive>,
    jumps: Vec<(f64, JumpKernel)>,
}

impl std::fmt::Debug for Generator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Generator")
            .field("dim", &self.dim)
            .field("driven", &self.drive.is_some())
            .field("dissipators", &self.dissipators.len())
            .finish()
    }
}

impl Generator {
    pub fn new(hamiltonian: &OperatorMatrix, dissipators: &[Dissipator]) -> Result<Self> {
        let dim = hamiltonian.dim();
        for d in dissipators {
            if d.jump_op.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: d.jump_op.dim() });
            }
        }
        let mut m = hamiltonian.scale(C64::new(0.0, -1.0));
        for d in dissipators.iter().filter(|d| d.rate > 0.0) {
            m = &m - &(&d.jump_op.adjoint() * &d.jump_op).scale_real(0.5 * d.rate);
        }
        let mut diag = vec![C64::new(0.0, 0.0); dim];
        for (i, z) in m.diagonal().into_iter().enumerate() {
            diag[i] = z;
        }
        Ok(Self {
            dim,
            hamiltonian: hamiltonian.clone(),
            dissipators: dissipators.to_vec(),
            diag,
            off: Csr::off_diagonal(&m),
            drive: None,
            jumps: dissipators
                .iter()
                .filter(|d| d.rate > 0.0)
                .map(|d| (d.rate, JumpKernel::compile(&d.jump_op)))
                .collect(),
        })
    }

    /// Adds `c(t) K` to the Hamiltonian. `K` must be Hermitian.
    pub fn with_drive(mut self, op: &OperatorMatrix, coeff: Coefficient) -> Result<Self> {
        if op.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: op.dim() });
        }
        let diag = op.diagonal().iter().map(|z| z.re).collect();
        self.drive = Some(Drive { op: op.clone(), diag, off: Csr::off_diagonal(op), coeff });
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hamiltonian_at(&self, t: f64) -> OperatorMatrix {
        match &self.drive {
            Some(d) => &self.hamiltonian + &d.op.scale_real((d.coeff)(t)),
            None => self.hamiltonian.clone(),
        }
    }

    /// Row-sum bound on `-iH - ½ Σ r J†J` at time t: the fastest coherent or
    /// dissipative scale, which sets the RK4 stability limit.
    pub fn omega_max(&self, t: f64) -> f64 {
        let c = self.drive.as_ref().map(|d| (d.coeff)(t)).unwrap_or(0.0);
        (0..self.dim)
            .map(|i| {
                let mut diag = self.diag[i];
                let mut off: f64 = self.off.vals[self.off.row_ptr[i]..self.off.row_ptr[i + 1]].iter().map(|v| v.norm()).sum();
                if let Some(d) = &self.drive {
                    diag += C64::new(0.0, -c * d.diag[i]);
                    off += d.off.vals[d.off.row_ptr[i]..d.off.row_ptr[i + 1]].iter().map(|v| v.norm() * c.abs()).sum::<f64>();
                }
                diag.norm() + off
            })
            .fold(0.0, f64::max)
    }

    /// `out = dρ/dt` at time t. `scratch` must hold `dim²` entries.
    fn rhs_into(&self, t: f64, rho: &[C64], out: &mut [C64], scratch: &mut [C64]) {
        let dim = self.dim;
        let c = self.drive.as_ref().map(|d| (d.coeff)(t)).unwrap_or(0.0);
        let m: Vec<C64> = match &self.drive {
            Some(d) => self.diag.iter().zip(&d.diag).map(|(m, k)| m + C64::new(0.0, -c * k)).collect(),
            None => self.diag.clone(),
        };
        for i in 0..dim {
            for j in i..dim {
                out[i * dim + j] = (m[i] + m[j].conj()) * rho[i * dim + j];
            }
        }
        let drive_off = self.drive.as_ref().filter(|d| !d.off.is_empty() && c != 0.0);
        if !self.off.is_empty() || drive_off.is_some() {
            scratch.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
            let phase = match drive_off {
                None => self.off.mul_add_real(rho, scratch, dim),
                Some(_) => None,
            };
            let phase = phase.unwrap_or_else(|| {
                self.off.mul_add(C64::new(1.0, 0.0), rho, scratch, dim);
                if let Some(d) = drive_off {
                    d.off.mul_add(C64::new(0.0, -c), rho, scratch, dim);
                }
                C64::new(1.0, 0.0)
            });
            for i in 0..dim {
                for j in i..dim {
                    out[i * dim + j] += phase * scratch[i * dim + j] + (phase * scratch[j * dim + i]).conj();
                }
            }
        }
        for (rate, kernel) in &self.jumps {
            kernel.apply(*rate, rho, out, scratch, dim);
        }
        for i in 0..dim {
            out[i * dim + i].im = 0.0;
            for j in i + 1..dim {
                out[j * dim + i] = out[i * dim + j].conj();
            }
        }
    }

    pub fn rhs(&self, t: f64, rho: &Array2<C64>) -> Array2<C64> {
        let rho = rho.as_standard_layout();
        let mut out = Array2::zeros((self.dim, self.dim));
        let mut scratch = vec![C64::new(0.0, 0.0); self.dim * self.dim];
        self.rhs_into(t, rho.as_slice().unwrap(), out.as_slice_mut().unwrap(), &mut scratch);
        out
    }

    /// Dense Liouvillian acting on row-major `vec(ρ)` at time t.
    pub fn liouvillian(&self, t: f64) -> Result<Array2<C64>> {
        let n = self.dim;
        if n > ORACLE_MAX_DIM {
            return Err(Error::TooLarge(n));
        }
        let mut l = Array2::<C64>::zeros((n * n, n * n));
        let i = C64::new(0.0, 1.0);
        let h = self.hamiltonian_at(t);
        // vec(AρB) = (A ⊗ Bᵀ) vec(ρ) for row-major vec
        for (r, c, v) in h.iter() {
            for k in 0..n {
                l[[r * n + k, c * n + k]] += -i * v;
                l[[k * n + c, k * n + r]] += i * v;
            }
        }
        for d in self.dissipators.iter().filter(|d| d.rate > 0.0) {
            let j = &d.jump_op;
            for (r1, c1, v1) in j.iter() {
                for (r2, c2, v2) in j.iter() {
                    l[[r1 * n + r2, c1 * n + c2]] += d.rate * v1 * v2.conj();
                }
            }
            let jdj = &j.adjoint() * j;
            for (r, c, v) in jdj.iter() {
                for k in 0..n {
                    l[[r * n + k, c * n + k]] -= 0.5 * d.rate * v;
                    l[[k * n + c, k * n + r]] -= 0.5 * d.rate * v;
                }
            }
        }
        Ok(l)
    }
}

pub fn lindblad_rhs(rho: &DensityMatrix, h: &OperatorMatrix, dissipators: &[Dissipator]) -> Result<Array2<C64>> {
    if rho.dim() != h.dim() {
        return Err(Error::DimensionMismatch { expected: h.dim(), found: rho.dim() });
    }
    Ok(Generator::new(h, dissipators)?.rhs(0.0, rho.matrix()))
}

/// Exact solution of the time-independent master equation via the dense
/// Liouvillian exponential.
pub fn expm_oracle(rho0: &DensityMatrix, h: &OperatorMatrix, dissipators: &[Dissipator], t: f64) -> Result<DensityMatrix> {
    let n = h.dim();
    if rho0.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, found: rho0.dim() });
    }
    let gen = Generator::new(h, dissipators)?;
    let l = gen.liouvillian(0.0)? * C64::new(t, 0.0);
    let v = Array1::from_iter(rho0.matrix().iter().copied());
    let out = expm_apply(&l, &v);
    let rho = Array2::from_shape_vec((n, n), out.to_vec()).expect("shape");
    Ok(DensityMatrix::from_matrix_unchecked(rho))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolveOptions {
    pub dt: f64,
    /// Observables are recorded every `sample_every` steps (and at the end).
    pub sample_every: usize,
    /// Full states are kept every `snapshot_every` samples, if set.
    pub snapshot_every: Option<usize>,
}

impl EvolveOptions {
    pub fn new(dt: f64) -> Self {
        Self { dt, sample_every: 1, snapshot_every: None }
    }

    pub fn sampled(dt: f64, sample_every: usize) -> Self {
        Self { dt, sample_every: sample_every.max(1), snapshot_every: None }
    }
}

/// Sampled observables along a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub names: Vec<String>,
    /// `series[k]` belongs to `names[k]`.
    pub series: Vec<Vec<f64>>,
    pub purity: Vec<f64>,
    pub trace: Vec<f64>,
    #[serde(skip)]
    pub snapshots: Vec<(f64, DensityMatrix)>,
    pub max_trace_drift: f64,
    pub max_hermiticity_error: f64,
}

impl Trajectory {
    pub fn series(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|k| self.series[k].as_slice())
    }

    /// Concatenates runs, dropping the duplicated joint sample.
    pub fn append(&mut self, other: &Trajectory) {
        if self.times.is_empty() {
            *self = other.clone();
            return;
        }
        let skip = usize::from(other.times.first() == self.times.last());
        self.times.extend_from_slice(&other.times[skip..]);
        for (mine, theirs) in self.series.iter_mut().zip(&other.series) {
            mine.extend_from_slice(&theirs[skip..]);
        }
        self.purity.extend_from_slice(&other.purity[skip..]);
        self.trace.extend_from_slice(&other.trace[skip..]);
        let last_snap = self.snapshots.last().map(|(t, _)| *t);
        self.snapshots.extend(other.snapshots.iter().filter(|(t, _)| Some(*t) != last_snap).cloned());
        self.max_trace_drift = self.max_trace_drift.max(other.max_trace_drift);
        self.max_hermiticity_error = self.max_hermiticity_error.max(other.max_hermiticity_error);
    }
}

fn hermiticity_error(rho: &Array2<C64>) -> f64 {
    let n = rho.nrows();
    let mut e: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            e = e.max((rho[[i, j]] - rho[[j, i]].conj()).norm());
        }
    }
    e
}

/// Fixed-step RK4 from `t0` to `t1`. The step is shrunk to divide the span
/// evenly. Returns the final state and the sampled trajectory.
pub fn rk4_evolve(
    rho0: &DensityMatrix,
    generator: &Generator,
    t0: f64,
    t1: f64,
    opts: &EvolveOptions,
    observables: &[(&str, &OperatorMatrix)],
) -> Result<(DensityMatrix, Trajectory)> {
    let dim = generator.dim();
    if rho0.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: rho0.dim() });
    }
    for (_, op) in observables {
        if op.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: op.dim() });
        }
    }
    if !(opts.dt > 0.0) || !(t1 >= t0) {
        return Err(Error::InvalidParameter(format!("need dt > 0 and t1 >= t0 (dt = {}, span [{t0}, {t1}])", opts.dt)));
    }
    let span = t1 - t0;
    let steps = ((span / opts.dt) - 1e-9).ceil().max(0.0) as usize;
    let dt = if steps == 0 { 0.0 } else { span / steps as f64 };
    let scale = generator.omega_max(t0).max(generator.omega_max(t1));
    if dt * scale > STEP_WARN {
        log::warn!("RK4 step dt = {dt} is coarse for generator scale {scale:.3} (dt * omega_max = {:.3})", dt * scale);
    }

    let mut traj = Trajectory {
        names: observables.iter().map(|(n, _)| n.to_string()).collect(),
        series: vec![Vec::new(); observables.len()],
        ..Default::default()
    };
    let mut y = rho0.matrix().as_standard_layout().to_owned();
    let mut k = [Array2::<C64>::zeros((dim, dim)), Array2::zeros((dim, dim)), Array2::zeros((dim, dim)), Array2::zeros((dim, dim))];
    let mut tmp = Array2::<C64>::zeros((dim, dim));
    let mut scratch = vec![C64::new(0.0, 0.0); dim * dim];
    let mut samples = 0usize;

    let record = |t: f64, y: &Array2<C64>, traj: &mut Trajectory, samples: &mut usize| -> Result<()> {
        let tr: f64 = y.diag().iter().map(|z| z.re).sum();
        if !tr.is_finite() {
            return Err(Error::NonFinite(t));
        }
        let drift = (tr - 1.0).abs();
        if drift > TRACE_DRIFT_FAIL {
            return Err(Error::TraceDrift { drift, t });
        }
        traj.max_trace_drift = traj.max_trace_drift.max(drift);
        traj.max_hermiticity_error = traj.max_hermiticity_error.max(hermiticity_error(y));
        traj.times.push(t);
        traj.trace.push(tr);
        traj.purity.push(y.iter().map(|z| z.norm_sqr()).sum());
        for (s, (_, op)) in traj.series.iter_mut().zip(observables) {
            s.push(expectation_dense(y, op).re);
        }
        if let Some(every) = opts.snapshot_every {
            if *samples % every.max(1) == 0 {
                traj.snapshots.push((t, DensityMatrix::from_matrix_unchecked(y.clone())));
            }
        }
        *samples += 1;
        Ok(())
    };

    record(t0, &y, &mut traj, &mut samples)?;
    let h = C64::new(dt, 0.0);
    for step in 0..steps {
        let t = t0 + step as f64 * dt;
        let ys = y.as_slice().unwrap();
        generator.rhs_into(t, ys, k[0].as_slice_mut().unwrap(), &mut scratch);
        Zip::from(&mut tmp).and(&y).and(&k[0]).for_each(|o, &a, &b| *o = a + b * h * 0.5);
        generator.rhs_into(t + 0.5 * dt, tmp.as_slice().unwrap(), k[1].as_slice_mut().unwrap(), &mut scratch);
        Zip::from(&mut tmp).and(&y).and(&k[1]).for_each(|o, &a, &b| *o = a + b * h * 0.5);
        generator.rhs_into(t + 0.5 * dt, tmp.as_slice().unwrap(), k[2].as_slice_mut().unwrap(), &mut scratch);
        Zip::from(&mut tmp).and(&y).and(&k[2]).for_each(|o, &a, &b| *o = a + b * h);
        generator.rhs_into(t + dt, tmp.as_slice().unwrap(), k[3].as_slice_mut().unwrap(), &mut scratch);
        let w = dt / 6.0;
        Zip::from(&mut y)
            .and(&k[0])
            .and(&k[1])
            .and(&k[2])
            .and(&k[3])
            .for_each(|y, &a, &b, &c, &d| *y += (a + (b + c) * 2.0 + d) * w);
        let done = step + 1;
        if done % opts.sample_every == 0 || done == steps {
            let t_now = if done == steps { t1 } else { t0 + done as f64 * dt };
            record(t_now, &y, &mut traj, &mut samples)?;
        }
    }
    let tr: f64 = y.diag().iter().map(|z| z.re).sum();
    if (tr - 1.0).abs() > 0.0 {
        log::debug!("renormalizing final state, trace drift {:e}", (tr - 1.0).abs());
        y.mapv_inplace(|z| z / tr);
    }
    Ok((DensityMatrix::from_matrix_unchecked(y), traj))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{annihilation_op, number_op, thermal_state, FockCutoff, TwoModeSpace};
    use crate::linalg::max_abs;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    /// Direct evaluation of `-i[H, ρ] + Σ r (JρJ† - ½{J†J, ρ})` with dense products.
    fn naive_rhs(rho: &Array2<C64>, h: &OperatorMatrix, ds: &[Dissipator]) -> Array2<C64> {
        let hd = h.to_dense();
        let mi = C64::new(0.0, -1.0);
        let mut out = (hd.dot(rho) - rho.dot(&hd)).mapv(|z| z * mi);
        for d in ds {
            let j = d.jump_op.to_dense();
            let jd = j.t().mapv(|z| z.conj());
            let jdj = jd.dot(&j);
            out = out + (j.dot(rho).dot(&jd) - (jdj.dot(rho) + rho.dot(&jdj)).mapv(|z| z * 0.5)).mapv(|z| z * d.rate);
        }
        out
    }

    fn random_state(dim: usize, seed: u64) -> DensityMatrix {
        // deterministic pseudo-random mixed state A A† / Tr
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let a = Array2::from_shape_fn((dim, dim), |_| C64::new(next(), next()));
        let m = a.dot(&a.t().mapv(|z| z.conj()));
        let tr: f64 = m.diag().iter().map(|z| z.re).sum();
        DensityMatrix::from_matrix(m.mapv(|z| z / tr)).unwrap()
    }

    fn full_model(n: usize, delta: f64, g: f64) -> (TwoModeOperators, OperatorMatrix, Vec<Dissipator>) {
        let ops = TwoModeOperators::new(TwoModeSpace::symmetric(n).unwrap());
        let p = SystemParams { omega_m: 1.0, delta, g, kappa: 0.3, gamma: 0.05, nbar_a: 0.2, nbar_b: 1.0, pump: None };
        let h = ops.hamiltonian(delta, g);
        let ds = standard_dissipators(&ops, &p).unwrap();
        (ops, h, ds)
    }

    #[test]
    fn zero_generator_gives_zero() {
        let rho = random_state(4, 1);
        let out = lindblad_rhs(&rho, &OperatorMatrix::zeros(4), &[]).unwrap();
        assert_eq!(max_abs(&out), 0.0);
    }

    #[test]
    fn single_photon_decay_rate() {
        let cut = FockCutoff::new(3).unwrap();
        let kappa = 0.7;
        let rho = DensityMatrix::basis(4, 1).unwrap();
        let d = Dissipator::new(annihilation_op(cut), kappa).unwrap();
        let out = lindblad_rhs(&rho, &OperatorMatrix::zeros(4), &[d]).unwrap();
        let dn = expectation_dense(&out, &number_op(cut));
        assert!((dn - c(-kappa)).norm() < 1e-15);
    }

    #[test]
    fn fast_rhs_matches_naive_dense_form() {
        let (ops, h, mut ds) = full_model(3, -2.0, 0.3);
        // one non-monomial jump to exercise the general kernel
        ds.push(Dissipator::new(&ops.a + &ops.b, 0.11).unwrap());
        let rho = random_state(h.dim(), 7);
        let fast = Generator::new(&h, &ds).unwrap().rhs(0.0, rho.matrix());
        let slow = naive_rhs(rho.matrix(), &h, &ds);
        assert!(max_abs(&(&fast - &slow)) < 1e-12);
        let tr: C64 = fast.diag().iter().sum();
        assert!(tr.norm() < 1e-12);
        assert!(hermiticity_error(&fast) < 1e-13);
    }

    #[test]
    fn driven_term_matches_explicit_hamiltonian() {
        let (ops, h0, ds) = full_model(3, 0.0, 0.2);
        let gen = Generator::new(&h0, &ds).unwrap().with_drive(&ops.n_a.scale_real(-1.0), Box::new(|t| -1.0 - t)).unwrap();
        let rho = random_state(h0.dim(), 3);
        let t = 0.7;
        let explicit = Generator::new(&ops.hamiltonian(-1.7, 0.2), &ds).unwrap().rhs(0.0, rho.matrix());
        assert!(max_abs(&(&gen.rhs(t, rho.matrix()) - &explicit)) < 1e-12);
        // non-diagonal drive
        let gen2 = Generator::new(&h0, &ds).unwrap().with_drive(&ops.coupling, Box::new(|t| t)).unwrap();
        let explicit2 = naive_rhs(rho.matrix(), &(&h0 + &ops.coupling.scale_real(t)), &ds);
        assert!(max_abs(&(&gen2.rhs(t, rho.matrix()) - &explicit2)) < 1e-12);
    }

    #[test]
    fn thermal_product_is_stationary_without_coupling() {
        let space = TwoModeSpace::symmetric(6).unwrap();
        let ops = TwoModeOperators::new(space);
        let p = SystemParams { omega_m: 1.0, delta: -3.0, g: 0.0, kappa: 0.03, gamma: 1e-3, nbar_a: 0.5, nbar_b: 2.0, pump: None };
        let rho = thermal_state(0.5, space.optical).unwrap().state.tensor(&thermal_state(2.0, space.mechanical).unwrap().state);
        let out = lindblad_rhs(&rho, &ops.hamiltonian(-3.0, 0.0), &standard_dissipators(&ops, &p).unwrap()).unwrap();
        assert!(max_abs(&out) < 1e-12, "{}", max_abs(&out));
    }

    #[test]
    fn eigenstate_projector_is_stationary() {
        let (ops, _, _) = full_model(3, -3.0, 0.0);
        let h = ops.hamiltonian(-3.0, 0.0);
        let rho = DensityMatrix::basis(h.dim(), 5).unwrap();
        let gen = Generator::new(&h, &[]).unwrap();
        let (end, _) = rk4_evolve(&rho, &gen, 0.0, 3.0, &EvolveOptions::new(1e-2), &[]).unwrap();
        assert!(max_abs(&(end.matrix() - rho.matrix())) < 1e-10);
    }

    #[test]
    fn photon_decay_is_exponential() {
        let space = TwoModeSpace::new(FockCutoff::new(8).unwrap(), FockCutoff::new(1).unwrap());
        let ops = TwoModeOperators::new(space);
        let kappa = 0.5;
        let rho = DensityMatrix::basis(space.dim(), space.index(2, 0)).unwrap();
        let gen = Generator::new(&ops.hamiltonian(-3.0, 0.0), &[Dissipator::new(ops.a.clone(), kappa).unwrap()]).unwrap();
        let (_, traj) = rk4_evolve(&rho, &gen, 0.0, 4.0, &EvolveOptions::sampled(1e-3, 100), &[("n_a", &ops.n_a)]).unwrap();
        for (t, n) in traj.times.iter().zip(traj.series("n_a").unwrap()) {
            let want = 2.0 * (-kappa * t).exp();
            assert!((n - want).abs() < 1e-6 * want, "t = {t}: {n} vs {want}");
        }
    }

    #[test]
    fn rk4_agrees_with_dense_exponential_at_fourth_order() {
        let (_, h, ds) = full_model(2, -1.5, 0.2);
        let rho = random_state(h.dim(), 11);
        let exact = expm_oracle(&rho, &h, &ds, 2.0).unwrap();
        let gen = Generator::new(&h, &ds).unwrap();
        let err = |dt: f64| {
            let (end, _) = rk4_evolve(&rho, &gen, 0.0, 2.0, &EvolveOptions::sampled(dt, 1000), &[]).unwrap();
            max_abs(&(end.matrix() - exact.matrix()))
        };
        let (e1, e2) = (err(0.1), err(0.05));
        let order = (e1 / e2).log2();
        assert!(order > 3.7 && order < 4.5, "observed order {order} ({e1:e} -> {e2:e})");
    }

    #[test]
    fn oracle_trivial_cases() {
        let (_, h, ds) = full_model(2, -1.5, 0.2);
        let rho = random_state(h.dim(), 5);
        let at0 = expm_oracle(&rho, &h, &ds, 0.0).unwrap();
        assert!(max_abs(&(at0.matrix() - rho.matrix())) < 1e-14);
        let zero = expm_oracle(&rho, &OperatorMatrix::zeros(h.dim()), &[], 5.0).unwrap();
        assert!(max_abs(&(zero.matrix() - rho.matrix())) < 1e-14);
        let big = OperatorMatrix::identity(ORACLE_MAX_DIM + 1);
        let rho_big = DensityMatrix::basis(ORACLE_MAX_DIM + 1, 0).unwrap();
        assert!(matches!(expm_oracle(&rho_big, &big, &[], 1.0), Err(Error::TooLarge(_))));
    }

    #[test]
    fn coarse_step_fails_loudly() {
        let (_, h, ds) = full_model(3, -3.0, 0.2);
        let rho = random_state(h.dim(), 2);
        let gen = Generator::new(&h, &ds).unwrap();
        let res = rk4_evolve(&rho, &gen, 0.0, 50.0, &EvolveOptions::new(1.0), &[]);
        assert!(matches!(res, Err(Error::TraceDrift { .. }) | Err(Error::NonFinite(_))), "{res:?}");
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let rho = DensityMatrix::basis(3, 0).unwrap();
        assert!(lindblad_rhs(&rho, &OperatorMatrix::zeros(4), &[]).is_err());
        assert!(Dissipator::new(OperatorMatrix::zeros(2), -1.0).is_err());
    }
}
