//! Fixed-step RK4 propagation of the Schrödinger and Lindblad equations.
//!
//! Both propagators run on uniform grids with conservation diagnostics
//! recorded as they go: norm or trace drift and Hermiticity defect at every
//! step, positivity of the density matrix every [`EIGEN_CHECK_INTERVAL`]
//! steps. A run aborts as soon as a drift crosses its abort threshold, so a
//! completed trajectory is always a physically meaningful one.
//!
//! The Hamiltonian `H(t) = e^{iεt} G₊ + e^{-iεt} G₋` is applied through the
//! nonzero entries of the constant generators `G±`, collected once per run.
//! Storage stays dense everywhere; this only short-circuits multiplications
//! by structural zeros, which dominate at these dimensions.

use ndarray as nd;
use num_complex::Complex64 as C64;

use crate::model::{self, MSParams};
use crate::ops::{self, CMat, CVec, HilbertSpec, StateVector};
use crate::{Error, Result};

/// Maximum allowed `dt · max‖H(t)‖` for the MS propagators.
pub const STEP_NORM_LIMIT: f64 = 0.05;
/// Run aborts when `|tr ρ - 1|` exceeds this.
pub const TRACE_ABORT_TOL: f64 = 1e-6;
/// Run aborts when `‖ρ - ρ†‖_F` exceeds this.
pub const HERMITICITY_ABORT_TOL: f64 = 1e-6;
/// Run aborts when the smallest eigenvalue of ρ falls below this.
pub const POSITIVITY_ABORT_TOL: f64 = -1e-6;
/// Density-matrix eigenvalues are checked every this many steps.
pub const EIGEN_CHECK_INTERVAL: usize = 32;
/// Run aborts when a pure-state norm drifts further than this from 1.
pub const NORM_ABORT_TOL: f64 = 1e-6;

/// Uniform time grid: `steps` RK4 steps, `steps + 1` samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    t1: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t1: f64, steps: usize) -> Result<Self> {
        if !(t0.is_finite() && t1.is_finite()) || t1 <= t0 {
            return Err(Error::Parameter(format!(
                "time grid needs finite t1 > t0, got [{t0}, {t1}]"
            )));
        }
        if steps == 0 {
            return Err(Error::Parameter("time grid needs at least one step".into()));
        }
        Ok(Self { t0, t1, steps })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn n_samples(&self) -> usize {
        self.steps + 1
    }

    pub fn dt(&self) -> f64 {
        (self.t1 - self.t0) / self.steps as f64
    }

    pub fn time_at(&self, sample: usize) -> f64 {
        self.t0 + sample as f64 * self.dt()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.time_at(i)).collect()
    }
}

/// Conservation diagnostics accumulated over a propagation run.
#[derive(Clone, Copy, Debug, Default)]
pub struct PropagationDiagnostics {
    /// Pure states: max `|‖ψ‖ - 1|`. Density: max `|tr ρ - 1|`.
    pub max_trace_error: f64,
    /// Density only: max `‖ρ - ρ†‖_F`.
    pub max_hermiticity_error: f64,
    /// Density only: most negative eigenvalue seen at checked samples.
    pub min_eigenvalue: f64,
}

/// Stored states of a propagation run.
#[derive(Clone, Debug)]
pub enum TrajectoryStates {
    Pure(Vec<CVec>),
    Density(Vec<CMat>),
}

/// Time-indexed states on a fixed Hilbert space, with the diagnostics of
/// the run that produced them.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub spec: HilbertSpec,
    pub times: Vec<f64>,
    pub states: TrajectoryStates,
    pub diagnostics: PropagationDiagnostics,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn is_pure(&self) -> bool {
        matches!(self.states, TrajectoryStates::Pure(_))
    }

    pub fn pure_states(&self) -> Result<&[CVec]> {
        match &self.states {
            TrajectoryStates::Pure(v) => Ok(v),
            TrajectoryStates::Density(_) => {
                Err(Error::Shape("expected a pure-state trajectory".into()))
            }
        }
    }

    pub fn density_states(&self) -> Result<&[CMat]> {
        match &self.states {
            TrajectoryStates::Density(v) => Ok(v),
            TrajectoryStates::Pure(_) => {
                Err(Error::Shape("expected a density-matrix trajectory".into()))
            }
        }
    }

    /// Density-matrix view of each sample (pure states are promoted to
    /// projectors).
    pub fn to_density(&self) -> Trajectory {
        let states = match &self.states {
            TrajectoryStates::Density(v) => TrajectoryStates::Density(v.clone()),
            TrajectoryStates::Pure(v) => TrajectoryStates::Density(
                v.iter()
                    .map(|psi| {
                        StateVector::new(self.spec.clone(), psi.clone())
                            .expect("trajectory state length matches its spec")
                            .to_density()
                    })
                    .collect(),
            ),
        };
        Trajectory {
            spec: self.spec.clone(),
            times: self.times.clone(),
            states,
            diagnostics: self.diagnostics,
        }
    }

    /// Partial-traces every sample down to the kept factors.
    pub fn reduced(&self, keep: &[usize]) -> Result<Trajectory> {
        let dense = self.to_density();
        let full_states = match &dense.states {
            TrajectoryStates::Density(v) => v,
            TrajectoryStates::Pure(_) => unreachable!(),
        };
        let mut reduced_states = Vec::with_capacity(full_states.len());
        let mut reduced_spec = None;
        for rho in full_states {
            let (r, spec) = ops::partial_trace(rho, keep, &self.spec)?;
            reduced_states.push(r);
            reduced_spec = Some(spec);
        }
        Ok(Trajectory {
            spec: reduced_spec.expect("non-empty trajectory"),
            times: self.times.clone(),
            states: TrajectoryStates::Density(reduced_states),
            diagnostics: self.diagnostics,
        })
    }
}

/// Decoherence channel families of the gate model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    /// `σ₋` on each qubit (or one qubit if a target is set).
    QubitDecay,
    /// `σz` on each qubit (or one qubit if a target is set).
    QubitDephasing,
    /// `a` on the motional mode.
    MotionalHeating,
    /// `a†a` on the motional mode.
    MotionalDephasing,
    /// The single joint operator `σx⊗I + I⊗σz` on the qubit pair.
    NonLocal,
}

/// One Lindblad channel: a kind, a rate, and for the per-qubit kinds an
/// optional restriction to a single qubit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseChannel {
    pub kind: NoiseKind,
    /// Rate γ in rad/s, common to every jump operator of the channel.
    pub gamma: f64,
    /// `Some(q)` limits a qubit channel to qubit `q`; `None` means both.
    pub target: Option<usize>,
}

impl NoiseChannel {
    pub fn new(kind: NoiseKind, gamma: f64) -> Self {
        Self { kind, gamma, target: None }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::Parameter(format!(
                "channel rate must be finite and >= 0, got {}",
                self.gamma
            )));
        }
        match (self.kind, self.target) {
            (_, None) => Ok(()),
            (NoiseKind::QubitDecay | NoiseKind::QubitDephasing, Some(q)) if q < 2 => Ok(()),
            (NoiseKind::QubitDecay | NoiseKind::QubitDephasing, Some(q)) => Err(Error::Parameter(
                format!("qubit target must be 0 or 1, got {q}"),
            )),
            (kind, Some(_)) => Err(Error::Parameter(format!(
                "channel {kind:?} does not take a qubit target"
            ))),
        }
    }

    /// Jump operators on the full `[2, 2, n_fock]` space, *not* scaled by γ.
    pub fn lindblad_operators(&self, spec: &HilbertSpec) -> Result<Vec<CMat>> {
        self.validate()?;
        if spec.dims().len() != 3 || spec.dim_of(0) != 2 || spec.dim_of(1) != 2 {
            return Err(Error::Shape(
                "noise channels are defined on a [2, 2, n_fock] space".into(),
            ));
        }
        let qubits: Vec<usize> = match self.target {
            Some(q) => vec![q],
            None => vec![0, 1],
        };
        let ops_list = match self.kind {
            NoiseKind::QubitDecay => qubits
                .iter()
                .map(|&q| ops::embed(&ops::sigma_m(), q, spec))
                .collect::<Result<Vec<_>>>()?,
            NoiseKind::QubitDephasing => qubits
                .iter()
                .map(|&q| ops::embed(&ops::sigma_z(), q, spec))
                .collect::<Result<Vec<_>>>()?,
            NoiseKind::MotionalHeating => {
                let (a, _, _) = ops::boson_ops(spec.dim_of(2))?;
                vec![ops::embed(&a, 2, spec)?]
            }
            NoiseKind::MotionalDephasing => {
                let (_, _, n) = ops::boson_ops(spec.dim_of(2))?;
                vec![ops::embed(&n, 2, spec)?]
            }
            NoiseKind::NonLocal => {
                let j = ops::embed(&ops::sigma_x(), 0, spec)? + ops::embed(&ops::sigma_z(), 1, spec)?;
                vec![j]
            }
        };
        Ok(ops_list)
    }
}

// ---------------------------------------------------------------------------
// Sparse application of constant operators.

/// Nonzero entries of a dense matrix, for entry-wise application.
struct Coo {
    dim: usize,
    entries: Vec<(usize, usize, C64)>,
}

impl Coo {
    fn from_dense(m: &CMat) -> Self {
        let mut entries = Vec::new();
        for ((r, c), &v) in m.indexed_iter() {
            if v != C64::new(0.0, 0.0) {
                entries.push((r, c, v));
            }
        }
        Coo { dim: m.nrows(), entries }
    }

    /// `out += coeff · M x`
    fn apply_vec(&self, x: &CVec, out: &mut CVec, coeff: C64) {
        for &(r, c, v) in &self.entries {
            out[r] += coeff * v * x[c];
        }
    }

    /// `out += coeff · M X`
    fn apply_left(&self, x: &CMat, out: &mut CMat, coeff: C64) {
        let n = self.dim;
        let xs = x.as_slice().expect("row-major");
        let os = out.as_slice_mut().expect("row-major");
        for &(r, c, v) in &self.entries {
            let cv = coeff * v;
            let src = &xs[c * n..(c + 1) * n];
            let dst = &mut os[r * n..(r + 1) * n];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += cv * s;
            }
        }
    }

    /// `out += coeff · X M`
    fn apply_right(&self, x: &CMat, out: &mut CMat, coeff: C64) {
        let n = self.dim;
        let xs = x.as_slice().expect("row-major");
        let os = out.as_slice_mut().expect("row-major");
        for &(r, c, v) in &self.entries {
            let cv = coeff * v;
            // out[:, c] += cv * x[:, r]
            let mut i_src = r;
            let mut i_dst = c;
            for _ in 0..n {
                os[i_dst] += cv * xs[i_src];
                i_src += n;
                i_dst += n;
            }
        }
    }

    /// `out += coeff · X M†`
    fn apply_right_adjoint(&self, x: &CMat, out: &mut CMat, coeff: C64) {
        let n = self.dim;
        let xs = x.as_slice().expect("row-major");
        let os = out.as_slice_mut().expect("row-major");
        for &(r, c, v) in &self.entries {
            let cv = coeff * v.conj();
            // M† has entry (c, r): out[:, r] += cv * x[:, c]
            let mut i_src = c;
            let mut i_dst = r;
            for _ in 0..n {
                os[i_dst] += cv * xs[i_src];
                i_src += n;
                i_dst += n;
            }
        }
    }
}

/// `dst += c · src` on matching flat layouts.
fn add_scaled_mat(dst: &mut CMat, src: &CMat, c: f64) {
    let d = dst.as_slice_mut().expect("row-major");
    let s = src.as_slice().expect("row-major");
    for (x, y) in d.iter_mut().zip(s) {
        *x += y * c;
    }
}

/// `dst = base + c · k`
fn stage_mat(dst: &mut CMat, base: &CMat, k: &CMat, c: f64) {
    let d = dst.as_slice_mut().expect("row-major");
    let b = base.as_slice().expect("row-major");
    let kk = k.as_slice().expect("row-major");
    for ((x, y), z) in d.iter_mut().zip(b).zip(kk) {
        *x = y + z * c;
    }
}

fn add_scaled_vec(dst: &mut CVec, src: &CVec, c: f64) {
    for (x, y) in dst.iter_mut().zip(src.iter()) {
        *x += y * c;
    }
}

fn stage_vec(dst: &mut CVec, base: &CVec, k: &CVec, c: f64) {
    for ((x, y), z) in dst.iter_mut().zip(base.iter()).zip(k.iter()) {
        *x = y + z * c;
    }
}

// ---------------------------------------------------------------------------
// Generic RK4 drivers with diagnostics.

/// RK4 for a state vector under `dψ/dt = rhs(t, ψ)`. The observer sees every
/// sample, including the initial one. Aborts when the norm drifts beyond
/// [`NORM_ABORT_TOL`].
pub(crate) fn run_state_rk4<R, F>(
    mut rhs: R,
    psi0: CVec,
    grid: &TimeGrid,
    mut observe: F,
) -> Result<PropagationDiagnostics>
where
    R: FnMut(f64, &CVec, &mut CVec),
    F: FnMut(usize, f64, &CVec) -> Result<()>,
{
    let n = psi0.len();
    let dt = grid.dt();
    let mut psi = psi0;
    let mut k1 = CVec::zeros(n);
    let mut k2 = CVec::zeros(n);
    let mut k3 = CVec::zeros(n);
    let mut k4 = CVec::zeros(n);
    let mut stage = CVec::zeros(n);
    let mut diag = PropagationDiagnostics::default();

    observe(0, grid.time_at(0), &psi)?;
    for step in 0..grid.steps() {
        let t = grid.time_at(step);
        k1.fill(C64::new(0.0, 0.0));
        rhs(t, &psi, &mut k1);
        stage_vec(&mut stage, &psi, &k1, 0.5 * dt);
        k2.fill(C64::new(0.0, 0.0));
        rhs(t + 0.5 * dt, &stage, &mut k2);
        stage_vec(&mut stage, &psi, &k2, 0.5 * dt);
        k3.fill(C64::new(0.0, 0.0));
        rhs(t + 0.5 * dt, &stage, &mut k3);
        stage_vec(&mut stage, &psi, &k3, dt);
        k4.fill(C64::new(0.0, 0.0));
        rhs(t + dt, &stage, &mut k4);
        add_scaled_vec(&mut psi, &k1, dt / 6.0);
        add_scaled_vec(&mut psi, &k2, dt / 3.0);
        add_scaled_vec(&mut psi, &k3, dt / 3.0);
        add_scaled_vec(&mut psi, &k4, dt / 6.0);

        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let drift = (norm - 1.0).abs();
        diag.max_trace_error = diag.max_trace_error.max(drift);
        if drift > NORM_ABORT_TOL {
            return Err(Error::StateIntegrity(format!(
                "norm drift {drift:.3e} at t = {:.6e} (step {})",
                grid.time_at(step + 1),
                step + 1
            )));
        }
        observe(step + 1, grid.time_at(step + 1), &psi)?;
    }
    Ok(diag)
}

/// RK4 for a density matrix under `dρ/dt = rhs(t, ρ)`, with trace and
/// Hermiticity tracked every step and positivity checked every
/// [`EIGEN_CHECK_INTERVAL`] steps and at the final sample.
pub(crate) fn run_density_rk4<R, F>(
    mut rhs: R,
    rho0: CMat,
    grid: &TimeGrid,
    mut observe: F,
) -> Result<PropagationDiagnostics>
where
    R: FnMut(f64, &CMat, &mut CMat),
    F: FnMut(usize, f64, &CMat) -> Result<()>,
{
    let n = rho0.nrows();
    let dt = grid.dt();
    let mut rho = rho0;
    let mut k1 = CMat::zeros((n, n));
    let mut k2 = CMat::zeros((n, n));
    let mut k3 = CMat::zeros((n, n));
    let mut k4 = CMat::zeros((n, n));
    let mut stage = CMat::zeros((n, n));
    let mut diag = PropagationDiagnostics {
        min_eigenvalue: f64::INFINITY,
        ..Default::default()
    };

    let check_positivity = |rho: &CMat, t: f64, diag: &mut PropagationDiagnostics| -> Result<()> {
        let herm = (rho + &ops::dag(rho)).mapv(|z| z * 0.5);
        let min = ops::min_eigenvalue_bound(&herm)?;
        diag.min_eigenvalue = diag.min_eigenvalue.min(min);
        if min < POSITIVITY_ABORT_TOL {
            return Err(Error::StateIntegrity(format!(
                "positivity violated: min eigenvalue {min:.3e} at t = {t:.6e}"
            )));
        }
        Ok(())
    };

    check_positivity(&rho, grid.time_at(0), &mut diag)?;
    observe(0, grid.time_at(0), &rho)?;
    for step in 0..grid.steps() {
        let t = grid.time_at(step);
        k1.fill(C64::new(0.0, 0.0));
        rhs(t, &rho, &mut k1);
        stage_mat(&mut stage, &rho, &k1, 0.5 * dt);
        k2.fill(C64::new(0.0, 0.0));
        rhs(t + 0.5 * dt, &stage, &mut k2);
        stage_mat(&mut stage, &rho, &k2, 0.5 * dt);
        k3.fill(C64::new(0.0, 0.0));
        rhs(t + 0.5 * dt, &stage, &mut k3);
        stage_mat(&mut stage, &rho, &k3, dt);
        k4.fill(C64::new(0.0, 0.0));
        rhs(t + dt, &stage, &mut k4);
        add_scaled_mat(&mut rho, &k1, dt / 6.0);
        add_scaled_mat(&mut rho, &k2, dt / 3.0);
        add_scaled_mat(&mut rho, &k3, dt / 3.0);
        add_scaled_mat(&mut rho, &k4, dt / 6.0);

        let t_next = grid.time_at(step + 1);
        let trace_err = (ops::trace(&rho) - C64::new(1.0, 0.0)).norm();
        diag.max_trace_error = diag.max_trace_error.max(trace_err);
        if trace_err > TRACE_ABORT_TOL {
            return Err(Error::StateIntegrity(format!(
                "trace drift {trace_err:.3e} at t = {t_next:.6e}"
            )));
        }
        let herm_err = ops::frob_norm(&(&rho - &ops::dag(&rho)));
        diag.max_hermiticity_error = diag.max_hermiticity_error.max(herm_err);
        if herm_err > HERMITICITY_ABORT_TOL {
            return Err(Error::StateIntegrity(format!(
                "hermiticity defect {herm_err:.3e} at t = {t_next:.6e}"
            )));
        }
        let last = step + 1 == grid.steps();
        if (step + 1) % EIGEN_CHECK_INTERVAL == 0 || last {
            check_positivity(&rho, t_next, &mut diag)?;
        }
        observe(step + 1, t_next, &rho)?;
    }
    Ok(diag)
}

// ---------------------------------------------------------------------------
// MS-specific right-hand sides.

fn step_guard(p: &MSParams, grid: &TimeGrid) -> Result<()> {
    let h_norm = model::ms_hamiltonian_norm(p)?;
    let product = grid.dt() * h_norm;
    if product > STEP_NORM_LIMIT {
        return Err(Error::Resolution(format!(
            "dt*‖H‖ = {product:.3e} exceeds {STEP_NORM_LIMIT}; use at least {} steps",
            ((grid.t1() - grid.t0()) * h_norm / STEP_NORM_LIMIT).ceil() as usize
        )));
    }
    Ok(())
}

/// Schrödinger right-hand side `-i H(t) ψ` as a reusable closure.
pub(crate) fn ms_state_rhs(p: &MSParams) -> Result<impl FnMut(f64, &CVec, &mut CVec)> {
    let (g_plus, g_minus) = model::ms_generators(p)?;
    let gp = Coo::from_dense(&g_plus);
    let gm = Coo::from_dense(&g_minus);
    let eps = p.epsilon();
    Ok(move |t: f64, psi: &CVec, out: &mut CVec| {
        let phase = C64::from_polar(1.0, eps * t);
        let m_i = C64::new(0.0, -1.0);
        gp.apply_vec(psi, out, m_i * phase);
        gm.apply_vec(psi, out, m_i * phase.conj());
    })
}

/// Lindblad right-hand side `-i[H(t), ρ] + Σ γ (LρL† - ½{L†L, ρ})` as a
/// reusable closure over the channel list.
pub(crate) fn ms_density_rhs(
    p: &MSParams,
    channels: &[NoiseChannel],
) -> Result<impl FnMut(f64, &CMat, &mut CMat)> {
    let (g_plus, g_minus) = model::ms_generators(p)?;
    let gp = Coo::from_dense(&g_plus);
    let gm = Coo::from_dense(&g_minus);
    let eps = p.epsilon();
    let spec = p.space();
    let dim = spec.total_dim();

    // (γ, L, L†L) per jump operator.
    let mut jumps: Vec<(f64, Coo, Coo)> = Vec::new();
    for ch in channels {
        for l in ch.lindblad_operators(&spec)? {
            let ldl = ops::dag(&l).dot(&l);
            jumps.push((ch.gamma, Coo::from_dense(&l), Coo::from_dense(&ldl)));
        }
    }

    let mut scratch = CMat::zeros((dim, dim));
    Ok(move |t: f64, rho: &CMat, out: &mut CMat| {
        let phase = C64::from_polar(1.0, eps * t);
        let m_i = C64::new(0.0, -1.0);
        let p_i = C64::new(0.0, 1.0);
        // -i (Hρ - ρH)
        gp.apply_left(rho, out, m_i * phase);
        gm.apply_left(rho, out, m_i * phase.conj());
        gp.apply_right(rho, out, p_i * phase);
        gm.apply_right(rho, out, p_i * phase.conj());
        for (gamma, l, ldl) in &jumps {
            if *gamma == 0.0 {
                continue;
            }
            // γ L ρ L†
            scratch.fill(C64::new(0.0, 0.0));
            l.apply_left(rho, &mut scratch, C64::new(1.0, 0.0));
            l.apply_right_adjoint(&scratch, out, C64::new(*gamma, 0.0));
            // -γ/2 {L†L, ρ}
            ldl.apply_left(rho, out, C64::new(-0.5 * gamma, 0.0));
            ldl.apply_right(rho, out, C64::new(-0.5 * gamma, 0.0));
        }
    })
}

// ---------------------------------------------------------------------------
// Public propagators.

/// Propagates `|ψ(t)⟩` under the MS Hamiltonian, storing every sample.
pub fn propagate_schrodinger(
    p: &MSParams,
    psi0: &StateVector,
    grid: &TimeGrid,
) -> Result<Trajectory> {
    p.validate()?;
    if psi0.spec != p.space() {
        return Err(Error::Shape(format!(
            "initial state lives on {:?}, parameters define {:?}",
            psi0.spec.dims(),
            p.space().dims()
        )));
    }
    if (psi0.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter("initial state must be normalized".into()));
    }
    step_guard(p, grid)?;

    let rhs = ms_state_rhs(p)?;
    let mut states = Vec::with_capacity(grid.n_samples());
    let diagnostics = run_state_rk4(rhs, psi0.amplitudes.clone(), grid, |_, _, psi| {
        states.push(psi.clone());
        Ok(())
    })?;
    Ok(Trajectory {
        spec: p.space(),
        times: grid.times(),
        states: TrajectoryStates::Pure(states),
        diagnostics,
    })
}

/// Propagates `ρ(t)` under the MS Lindblad equation, storing every sample.
/// With an empty channel list this is the von Neumann equation.
pub fn propagate_lindblad(
    p: &MSParams,
    rho0: &CMat,
    channels: &[NoiseChannel],
    grid: &TimeGrid,
) -> Result<Trajectory> {
    p.validate()?;
    let dim = p.space().total_dim();
    if rho0.nrows() != dim || rho0.ncols() != dim {
        return Err(Error::Shape(format!(
            "initial density matrix is {}x{}, space dimension is {dim}",
            rho0.nrows(),
            rho0.ncols()
        )));
    }
    let d = ops::density_diagnostics(rho0)?;
    if d.trace_error > 1e-9 || d.hermiticity_error > 1e-10 || d.min_eigenvalue < -1e-9 {
        return Err(Error::Parameter(format!(
            "initial density matrix invalid: trace err {:.2e}, herm err {:.2e}, min eig {:.2e}",
            d.trace_error, d.hermiticity_error, d.min_eigenvalue
        )));
    }
    for ch in channels {
        ch.validate()?;
    }
    step_guard(p, grid)?;

    let rhs = ms_density_rhs(p, channels)?;
    let mut states = Vec::with_capacity(grid.n_samples());
    let diagnostics = run_density_rk4(rhs, rho0.clone(), grid, |_, _, rho| {
        states.push(rho.clone());
        Ok(())
    })?;
    Ok(Trajectory {
        spec: p.space(),
        times: grid.times(),
        states: TrajectoryStates::Density(states),
        diagnostics,
    })
}

/// Streaming Lindblad run: like [`propagate_lindblad`] but hands each sample
/// to the observer instead of storing the trajectory. The observer sees
/// `(sample index, time, rho)` for every grid sample including `t0`.
pub fn propagate_lindblad_observed<F>(
    p: &MSParams,
    rho0: &CMat,
    channels: &[NoiseChannel],
    grid: &TimeGrid,
    observe: F,
) -> Result<PropagationDiagnostics>
where
    F: FnMut(usize, f64, &CMat) -> Result<()>,
{
    p.validate()?;
    for ch in channels {
        ch.validate()?;
    }
    step_guard(p, grid)?;
    let rhs = ms_density_rhs(p, channels)?;
    run_density_rk4(rhs, rho0.clone(), grid, observe)
}

/// Expectation-value series `⟨O⟩(t)` of a Hermitian operator.
pub fn observable_series(traj: &Trajectory, op: &CMat) -> Result<Vec<f64>> {
    let dim = traj.spec.total_dim();
    if op.nrows() != dim || op.ncols() != dim {
        return Err(Error::Shape(format!(
            "operator is {}x{}, trajectory dimension is {dim}",
            op.nrows(),
            op.ncols()
        )));
    }
    let scale = ops::frob_norm(op).max(1.0);
    if ops::frob_norm(&(op - &ops::dag(op))) > 1e-10 * scale {
        return Err(Error::Parameter("observable must be Hermitian".into()));
    }
    let mut out = Vec::with_capacity(traj.len());
    match &traj.states {
        TrajectoryStates::Pure(states) => {
            for psi in states {
                let mut acc = C64::new(0.0, 0.0);
                for ((i, j), &v) in op.indexed_iter() {
                    if v != C64::new(0.0, 0.0) {
                        acc += psi[i].conj() * v * psi[j];
                    }
                }
                out.push(acc.re);
            }
        }
        TrajectoryStates::Density(states) => {
            for rho in states {
                // tr(Oρ) = Σ_ij O_ij ρ_ji
                let mut acc = C64::new(0.0, 0.0);
                for ((i, j), &v) in op.indexed_iter() {
                    if v != C64::new(0.0, 0.0) {
                        acc += v * rho[[j, i]];
                    }
                }
                out.push(acc.re);
            }
        }
    }
    Ok(out)
}

/// Per-sample populations of the four qubit configurations, mode traced
/// out: columns `P00, P01, P10, P11`.
pub fn qubit_populations(traj: &Trajectory) -> Result<nd::Array2<f64>> {
    if traj.spec.dims().len() != 3 || traj.spec.dim_of(0) != 2 || traj.spec.dim_of(1) != 2 {
        return Err(Error::Shape(
            "qubit populations need a [2, 2, n_fock] trajectory".into(),
        ));
    }
    let n_fock = traj.spec.dim_of(2);
    let mut out = nd::Array2::<f64>::zeros((traj.len(), 4));
    for (s, sample) in (0..traj.len()).enumerate() {
        for q1 in 0..2 {
            for q2 in 0..2 {
                let mut pop = 0.0;
                for n in 0..n_fock {
                    let idx = traj.spec.index_of(&[q1, q2, n]);
                    pop += match &traj.states {
                        TrajectoryStates::Pure(v) => v[sample][idx].norm_sqr(),
                        TrajectoryStates::Density(v) => v[sample][[idx, idx]].re,
                    };
                }
                out[[s, 2 * q1 + q2]] = pop;
            }
        }
    }
    Ok(out)
}
