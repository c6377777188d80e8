//! Geometric phases along state trajectories.
//!
//! Pure states use the Pancharatnam decomposition: the total phase
//! `φ_global = Arg⟨ψ(0)|ψ(t)⟩`, tracked continuously, minus the dynamical
//! transport sum `φ_dyn = Σ arg⟨ψ_i|ψ_{i+1}⟩`. A second estimator rebuilds
//! `φ_dyn` from the trapezoid rule on `Im⟨ψ|ψ̇⟩` and the two must agree to
//! [`GP_ESTIMATOR_AGREE_TOL`], otherwise the grid is treated as unresolved.
//!
//! Mixed states use the interferometric phase
//! `φ_g = Arg Σ_k √(λ_k(0) λ_k(t)) ⟨Ψ_k(0)|Ψ̃_k(t)⟩` over eigenvector
//! branches `Ψ̃_k` carried in the parallel-transport gauge
//! (`⟨Ψ̃_k(t_i)|Ψ̃_k(t_{i+1})⟩` real and non-negative). Branches are followed
//! by maximal overlap; degenerate clusters are aligned by projecting the
//! previous branch vectors into the cluster subspace.
//!
//! Phase winding is performed on rays rather than vectors: an increment at
//! distance [`RAY_FLIP_TOL`] from ±π is a sign flip of the overlap, not half
//! a winding turn, and contributes zero. Increments between π/2 and the flip
//! band are refused as unresolvable. Samples where the defining overlap
//! drops below [`OVERLAP_FLAG_TOL`] are flagged, and the phase is bridged
//! across them by the same rules.

use num_complex::Complex64 as C64;

use crate::dynamics::{
    propagate_lindblad_observed, NoiseChannel, PropagationDiagnostics, TimeGrid, Trajectory,
};
use crate::model::MSParams;
use crate::ops::{self, CMat, CVec};
use crate::{Error, Result};

/// Overlaps with modulus below this are flagged as phase-undefined.
pub const OVERLAP_FLAG_TOL: f64 = 1e-6;
/// Phase increments within this distance of ±π are ray flips.
pub const RAY_FLIP_TOL: f64 = 1e-3;
/// Largest per-step increment accepted as ordinary winding.
pub const WINDING_ACCEPT_MAX: f64 = std::f64::consts::FRAC_PI_2;
/// The two pure-state estimators must agree to this (radians).
pub const GP_ESTIMATOR_AGREE_TOL: f64 = 1e-4;
/// Eigenvalues closer than this form a degenerate cluster.
pub const DEGENERACY_TOL: f64 = 1e-9;
/// Branches with initial weight below this are excluded from the mixed sum.
pub const WEIGHT_TOL: f64 = 1e-10;
/// Minimum per-step branch continuity overlap.
pub const BRANCH_CONTINUITY_MIN: f64 = 0.9;

/// Geometric, global, and dynamical phase series along a trajectory, with
/// `phi_g[i] = phi_global[i] - phi_dyn[i]` exactly.
///
/// For mixed-state traces the interferometric functional removes the
/// dynamical phase branch-wise, so `phi_dyn` is identically zero there and
/// `phi_global` coincides with `phi_g`.
#[derive(Clone, Debug)]
pub struct GPTrace {
    pub times: Vec<f64>,
    pub phi_g: Vec<f64>,
    pub phi_global: Vec<f64>,
    pub phi_dyn: Vec<f64>,
    /// True where the defining overlap was below [`OVERLAP_FLAG_TOL`]; the
    /// phase there is interpolated between the neighboring good samples.
    pub flagged: Vec<bool>,
}

impl GPTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Removes 2π jumps from a principal-value phase series.
pub fn unwrap_phase(series: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let mut offset = 0.0;
    for (i, &v) in series.iter().enumerate() {
        if i > 0 {
            let prev = series[i - 1];
            let mut d = v - prev;
            while d > std::f64::consts::PI {
                d -= std::f64::consts::TAU;
                offset -= std::f64::consts::TAU;
            }
            while d < -std::f64::consts::PI {
                d += std::f64::consts::TAU;
                offset += std::f64::consts::TAU;
            }
        }
        out.push(v + offset);
    }
    out
}

// ---------------------------------------------------------------------------
// Ray-space phase winding.

fn classify_increment(delta: f64, from: usize, to: usize) -> Result<f64> {
    let a = delta.abs();
    if a <= WINDING_ACCEPT_MAX {
        Ok(delta)
    } else if a >= std::f64::consts::PI - RAY_FLIP_TOL {
        // Sign flip of the overlap: same ray, no winding.
        Ok(delta - std::f64::consts::PI.copysign(delta))
    } else {
        Err(Error::Resolution(format!(
            "phase increment {delta:.4} rad between samples {from} and {to} is neither \
             winding (|δ| ≤ π/2) nor a ray flip (|δ| ≈ π); refine the grid"
        )))
    }
}

/// Incremental continuous-phase tracker over a complex overlap series.
struct PhaseTracker {
    phi: Vec<f64>,
    flags: Vec<bool>,
    last_good: Option<(usize, C64)>,
    pending: Vec<usize>,
}

impl PhaseTracker {
    fn new() -> Self {
        Self {
            phi: Vec::new(),
            flags: Vec::new(),
            last_good: None,
            pending: Vec::new(),
        }
    }

    fn push(&mut self, w: C64) -> Result<()> {
        let idx = self.phi.len();
        if w.norm() < OVERLAP_FLAG_TOL {
            self.flags.push(true);
            let placeholder = if idx == 0 { 0.0 } else { self.phi[idx - 1] };
            self.phi.push(placeholder);
            self.pending.push(idx);
            return Ok(());
        }
        self.flags.push(false);
        match self.last_good {
            None => {
                let phi0 = w.arg();
                // Any leading flagged samples sit on an undefined ray; give
                // them the first defined phase.
                for &i in &self.pending {
                    self.phi[i] = phi0;
                }
                self.pending.clear();
                self.phi.push(phi0);
            }
            Some((k, wk)) => {
                let delta = classify_increment((w / wk).arg(), k, idx)?;
                let base = self.phi[k];
                for &i in &self.pending {
                    let frac = (i - k) as f64 / (idx - k) as f64;
                    self.phi[i] = base + delta * frac;
                }
                self.pending.clear();
                self.phi.push(base + delta);
            }
        }
        self.last_good = Some((idx, w));
        Ok(())
    }

    fn finish(self) -> (Vec<f64>, Vec<bool>) {
        // Trailing flagged samples keep the last defined phase.
        (self.phi, self.flags)
    }
}

// ---------------------------------------------------------------------------
// Pure states.

pub(crate) fn check_uniform_times(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Err(Error::Parameter(
            "geometric phase needs at least two samples".into(),
        ));
    }
    let dt = times[1] - times[0];
    if dt <= 0.0 {
        return Err(Error::Parameter("times must be strictly increasing".into()));
    }
    for w in times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt {
            return Err(Error::Parameter(
                "geometric phase estimators require a uniform time grid".into(),
            ));
        }
    }
    Ok(dt)
}

fn vdot(a: &CVec, b: &CVec) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Pancharatnam geometric phase along a normalized pure-state trajectory.
pub fn gp_pure(traj: &Trajectory) -> Result<GPTrace> {
    let states = traj.pure_states()?;
    let dt = check_uniform_times(&traj.times)?;
    if states.len() < 3 {
        return Err(Error::Parameter(
            "the derivative estimator needs at least three samples".into(),
        ));
    }
    for (i, psi) in states.iter().enumerate() {
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Parameter(format!(
                "pure-state sample {i} has norm {norm}, expected 1"
            )));
        }
    }

    // Global phase: continuous winding of ⟨ψ(0)|ψ(t)⟩.
    let mut tracker = PhaseTracker::new();
    for psi in states {
        tracker.push(vdot(&states[0], psi))?;
    }
    let (phi_global, flagged) = tracker.finish();

    // Dynamical phase, primary estimator: transport sum.
    let n = states.len();
    let mut phi_dyn = Vec::with_capacity(n);
    phi_dyn.push(0.0);
    for i in 0..n - 1 {
        let step = vdot(&states[i], &states[i + 1]);
        if step.norm() < OVERLAP_FLAG_TOL {
            return Err(Error::Resolution(format!(
                "consecutive samples {i}, {} are nearly orthogonal; refine the grid",
                i + 1
            )));
        }
        phi_dyn.push(phi_dyn[i] + step.arg());
    }

    // Cross-check estimator: trapezoid of Im⟨ψ|ψ̇⟩ with centered (one-sided
    // at the ends) differences sharing the same winding convention.
    let mut rate = Vec::with_capacity(n);
    for i in 0..n {
        let dpsi: CVec = if i == 0 {
            let mut d = CVec::zeros(states[0].len());
            for k in 0..d.len() {
                d[k] = (-3.0 * states[0][k] + 4.0 * states[1][k] - states[2][k]) / (2.0 * dt);
            }
            d
        } else if i == n - 1 {
            let mut d = CVec::zeros(states[0].len());
            for k in 0..d.len() {
                d[k] = (3.0 * states[n - 1][k] - 4.0 * states[n - 2][k] + states[n - 3][k])
                    / (2.0 * dt);
            }
            d
        } else {
            let mut d = CVec::zeros(states[0].len());
            for k in 0..d.len() {
                d[k] = (states[i + 1][k] - states[i - 1][k]) / (2.0 * dt);
            }
            d
        };
        rate.push(vdot(&states[i], &dpsi).im);
    }
    let mut phi_dyn_int = Vec::with_capacity(n);
    phi_dyn_int.push(0.0);
    for i in 0..n - 1 {
        phi_dyn_int.push(phi_dyn_int[i] + 0.5 * dt * (rate[i] + rate[i + 1]));
    }
    let disagreement = phi_dyn
        .iter()
        .zip(&phi_dyn_int)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    if disagreement > GP_ESTIMATOR_AGREE_TOL {
        return Err(Error::Resolution(format!(
            "dynamical-phase estimators disagree by {disagreement:.3e} rad; refine the grid"
        )));
    }

    let phi_g: Vec<f64> = phi_global
        .iter()
        .zip(&phi_dyn)
        .map(|(g, d)| g - d)
        .collect();
    Ok(GPTrace {
        times: traj.times.clone(),
        phi_g,
        phi_global,
        phi_dyn,
        flagged,
    })
}

// ---------------------------------------------------------------------------
// Mixed states.

struct Branch {
    v0: CVec,
    lambda0: f64,
    v_prev: CVec,
}

/// Streaming accumulator for the mixed-state interferometric phase. Feed it
/// every density-matrix sample in order, then call `finish`.
pub struct MixedGpAccumulator {
    times: Vec<f64>,
    branches: Vec<Branch>,
    tracker: PhaseTracker,
}

fn hermitian_part(rho: &CMat) -> CMat {
    (rho + &ops::dag(rho)).mapv(|z| z * 0.5)
}

/// Ascending eigenvalue runs closer than [`DEGENERACY_TOL`] to each other.
fn clusters(values: &ndarray::Array1<f64>) -> Vec<(usize, usize)> {
    let n = values.len();
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..n {
        if values[i] - values[i - 1] > DEGENERACY_TOL {
            out.push((start, i));
            start = i;
        }
    }
    out.push((start, n));
    out
}

impl MixedGpAccumulator {
    pub fn new(t0: f64, rho0: &CMat) -> Result<Self> {
        let (values, vectors) = ops::eigh(&hermitian_part(rho0))?;
        let mut branches = Vec::new();
        for k in 0..values.len() {
            let lambda0 = values[k].max(0.0);
            if lambda0 < WEIGHT_TOL {
                continue;
            }
            let v = vectors.column(k).to_owned();
            branches.push(Branch {
                v0: v.clone(),
                lambda0,
                v_prev: v,
            });
        }
        if branches.is_empty() {
            return Err(Error::Parameter(
                "initial state has no branch with weight above threshold".into(),
            ));
        }
        let w0: f64 = branches.iter().map(|b| b.lambda0).sum();
        let mut tracker = PhaseTracker::new();
        tracker.push(C64::new(w0, 0.0))?;
        Ok(Self {
            times: vec![t0],
            branches,
            tracker,
        })
    }

    pub fn push(&mut self, t: f64, rho: &CMat) -> Result<()> {
        let (values, vectors) = ops::eigh(&hermitian_part(rho))?;
        let n = values.len();
        let cl = clusters(&values);
        let cluster_of = {
            let mut map = vec![0usize; n];
            for (ci, &(a, b)) in cl.iter().enumerate() {
                for item in map.iter_mut().take(b).skip(a) {
                    *item = ci;
                }
            }
            map
        };
        let sample_idx = self.times.len();

        // First pass: match every branch to a cluster by maximal overlap and
        // project its previous vector into that cluster's subspace.
        struct Update {
            cluster: usize,
            lambda: f64,
            v_new: CVec,
        }
        let mut updates: Vec<Update> = Vec::with_capacity(self.branches.len());
        for branch in &self.branches {
            let mut overlaps = Vec::with_capacity(n);
            for j in 0..n {
                let col = vectors.column(j);
                let o: C64 = col
                    .iter()
                    .zip(branch.v_prev.iter())
                    .map(|(w, v)| w.conj() * v)
                    .sum();
                overlaps.push(o);
            }
            let best = (0..n)
                .max_by(|&a, &b| overlaps[a].norm().partial_cmp(&overlaps[b].norm()).unwrap())
                .expect("nonempty spectrum");
            let ci = cluster_of[best];
            let (a, b) = cl[ci];
            let mut v_new = CVec::zeros(branch.v_prev.len());
            for j in a..b {
                let col = vectors.column(j);
                for (x, w) in v_new.iter_mut().zip(col.iter()) {
                    *x += w * overlaps[j];
                }
            }
            updates.push(Update {
                cluster: ci,
                lambda: values[best].max(0.0),
                v_new,
            });
        }

        // Second pass: branches sharing a cluster are orthonormalized in
        // branch order; everyone is normalized and returned to the
        // parallel-transport gauge. The projection norm of the (unit)
        // previous vector is the continuity overlap.
        for k in 0..updates.len() {
            for m in 0..k {
                if updates[m].cluster == updates[k].cluster {
                    let (head, tail) = updates.split_at_mut(k);
                    let vm = &head[m].v_new;
                    let coeff = vdot(vm, &tail[0].v_new);
                    for (x, y) in tail[0].v_new.iter_mut().zip(vm.iter()) {
                        *x -= coeff * y;
                    }
                }
            }
            let norm = updates[k]
                .v_new
                .iter()
                .map(|z| z.norm_sqr())
                .sum::<f64>()
                .sqrt();
            if norm < BRANCH_CONTINUITY_MIN {
                return Err(Error::Resolution(format!(
                    "branch {k} continuity overlap {norm:.3} < {BRANCH_CONTINUITY_MIN} at \
                     sample {sample_idx}; refine the grid"
                )));
            }
            // Transport gauge: make ⟨v_prev|v_new⟩ real and positive.
            let p = vdot(&self.branches[k].v_prev, &updates[k].v_new);
            if p.norm() < 1e-12 {
                return Err(Error::Resolution(format!(
                    "branch {k} transport gauge undefined at sample {sample_idx}"
                )));
            }
            let scale = (p / p.norm()).conj() / norm;
            for x in updates[k].v_new.iter_mut() {
                *x *= scale;
            }
        }

        let mut w = C64::new(0.0, 0.0);
        for (branch, upd) in self.branches.iter_mut().zip(updates) {
            let weight = (branch.lambda0 * upd.lambda).sqrt();
            w += vdot(&branch.v0, &upd.v_new) * weight;
            branch.v_prev = upd.v_new;
        }
        self.tracker.push(w)?;
        self.times.push(t);
        Ok(())
    }

    pub fn finish(self) -> GPTrace {
        let (phi, flagged) = self.tracker.finish();
        let n = phi.len();
        GPTrace {
            times: self.times,
            phi_g: phi.clone(),
            phi_global: phi,
            phi_dyn: vec![0.0; n],
            flagged,
        }
    }
}

/// Interferometric geometric phase along a density-matrix trajectory (pure
/// trajectories are promoted to projectors first).
pub fn gp_mixed(traj: &Trajectory) -> Result<GPTrace> {
    check_uniform_times(&traj.times)?;
    let dense;
    let traj = if traj.is_pure() {
        dense = traj.to_density();
        &dense
    } else {
        traj
    };
    let states = traj.density_states()?;
    let mut acc = MixedGpAccumulator::new(traj.times[0], &states[0])?;
    for (i, rho) in states.iter().enumerate().skip(1) {
        acc.push(traj.times[i], rho)?;
    }
    Ok(acc.finish())
}

/// Geometric phase of one subsystem: partial-traces every sample down to
/// `subsystem` and runs the mixed-state estimator on the result.
pub fn gp_subsystem(traj: &Trajectory, subsystem: usize) -> Result<GPTrace> {
    let reduced = traj.reduced(&[subsystem])?;
    gp_mixed(&reduced)
}

/// Mixed-state geometric phase of a Lindblad run, computed sample by sample
/// without storing the trajectory. `keep = None` uses the full state;
/// `keep = Some(factors)` partial-traces each sample first. Returns the
/// trace together with the run's conservation diagnostics.
pub fn gp_lindblad_streaming(
    p: &MSParams,
    rho0: &CMat,
    channels: &[NoiseChannel],
    grid: &TimeGrid,
    keep: Option<&[usize]>,
) -> Result<(GPTrace, PropagationDiagnostics)> {
    let spec = p.space();
    let mut acc: Option<MixedGpAccumulator> = None;
    let diagnostics = propagate_lindblad_observed(p, rho0, channels, grid, |_, t, rho| {
        let target = match keep {
            None => rho.clone(),
            Some(factors) => ops::partial_trace(rho, factors, &spec)?.0,
        };
        match acc.as_mut() {
            None => {
                acc = Some(MixedGpAccumulator::new(t, &target)?);
            }
            Some(a) => a.push(t, &target)?,
        }
        Ok(())
    })?;
    let acc = acc.expect("grid has at least one sample");
    Ok((acc.finish(), diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Trajectory, TrajectoryStates};
    use crate::ops::HilbertSpec;
    use crate::testutil::*;

    fn pure_traj(spec: HilbertSpec, times: Vec<f64>, states: Vec<CVec>) -> Trajectory {
        Trajectory {
            spec,
            times,
            states: TrajectoryStates::Pure(states),
            diagnostics: Default::default(),
        }
    }

    /// Exact spin-precession states on a cone: H = (ω/2)σz,
    /// ψ(t) = cos(θ/2) e^{-iωt/2}|0⟩ + sin(θ/2) e^{+iωt/2}|1⟩.
    fn precession_states(theta: f64, omega: f64, times: &[f64]) -> Vec<CVec> {
        times
            .iter()
            .map(|&t| {
                let mut v = CVec::zeros(2);
                v[0] = C64::from_polar((0.5 * theta).cos(), -0.5 * omega * t);
                v[1] = C64::from_polar((0.5 * theta).sin(), 0.5 * omega * t);
                v
            })
            .collect()
    }

    fn linspace(t0: f64, t1: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| t0 + (t1 - t0) * i as f64 / (n - 1) as f64)
            .collect()
    }

    #[test]
    fn precession_phases_match_oracle() {
        // One full cycle on the θ = π/3 cone: solid angle π, so
        // φ_g = -π/2, with φ_global = -π and φ_dyn = -π/2.
        let theta = std::f64::consts::FRAC_PI_3;
        let omega = 1.0;
        let tau = std::f64::consts::TAU / omega;
        let times = linspace(0.0, tau, 2049);
        let states = precession_states(theta, omega, &times);
        let spec = HilbertSpec::new(vec![2]).unwrap();
        let trace = gp_pure(&pure_traj(spec, times, states)).unwrap();

        let last = trace.len() - 1;
        assert!((trace.phi_global[last] + std::f64::consts::PI).abs() < 1e-4);
        assert!((trace.phi_dyn[last] + std::f64::consts::FRAC_PI_2).abs() < 1e-4);
        assert!((trace.phi_g[last] + std::f64::consts::FRAC_PI_2).abs() < 1e-4);
        for i in 0..trace.len() {
            assert!((trace.phi_g[i] - (trace.phi_global[i] - trace.phi_dyn[i])).abs() < 1e-12);
            assert!(!trace.flagged[i]);
        }
    }

    #[test]
    fn gauge_invariance_of_geometric_phase() {
        let theta = std::f64::consts::FRAC_PI_3;
        let tau = std::f64::consts::TAU;
        let times = linspace(0.0, tau, 8193);
        let states = precession_states(theta, 1.0, &times);
        // Gauge transform: ψ → e^{iχ(t)}ψ with a smooth multiturn χ.
        let gauged: Vec<CVec> = states
            .iter()
            .zip(&times)
            .map(|(psi, &t)| {
                let chi = 1.7 * t + 0.8 * (2.0 * t).sin();
                psi.mapv(|z| z * C64::from_polar(1.0, chi))
            })
            .collect();
        let spec = HilbertSpec::new(vec![2]).unwrap();
        let a = gp_pure(&pure_traj(spec.clone(), times.clone(), states)).unwrap();
        let b = gp_pure(&pure_traj(spec, times, gauged)).unwrap();
        for i in 0..a.len() {
            assert!(
                (a.phi_g[i] - b.phi_g[i]).abs() < 1e-9,
                "sample {i}: {} vs {}",
                a.phi_g[i],
                b.phi_g[i]
            );
        }
        // The global phase itself is of course gauge dependent.
        let last = a.len() - 1;
        assert!((a.phi_global[last] - b.phi_global[last]).abs() > 1.0);
    }

    #[test]
    fn real_trajectory_through_orthogonality_has_zero_gp() {
        // ψ(s) = cos(s)ψ0 + sin(s)ψ⊥ sweeps through the orthogonal state at
        // s = π/2 and on to -ψ0. Both the flagged crossing and the sign flip
        // must contribute nothing.
        let n = 2001;
        let times = linspace(0.0, 1.0, n);
        let spec = HilbertSpec::new(vec![2]).unwrap();
        let states: Vec<CVec> = times
            .iter()
            .map(|&t| {
                let s = std::f64::consts::PI * t;
                let mut v = CVec::zeros(2);
                v[0] = C64::new(s.cos(), 0.0);
                v[1] = C64::new(s.sin(), 0.0);
                v
            })
            .collect();
        let trace = gp_pure(&pure_traj(spec, times, states)).unwrap();
        // The midpoint sample hits cos(π/2) ≈ 6e-17 exactly.
        assert!(trace.flagged[(n - 1) / 2]);
        for i in 0..trace.len() {
            assert!(trace.phi_g[i].abs() < 1e-9, "sample {i}: {}", trace.phi_g[i]);
            assert!(trace.phi_global[i].abs() < 1e-9);
        }
    }

    #[test]
    fn weak_field_closed_form_has_zero_gp() {
        let mut p = crate::model::MSParams::wf_reference();
        p.eta = 0.01;
        p.phi_s = 0.3;
        let tilde = p.effective_rabi().unwrap().abs();
        let period = std::f64::consts::TAU / tilde;
        // Even and odd sample counts place the population crossing exactly
        // on and off a grid point.
        for n in [1025usize, 1024] {
            let times = linspace(0.0, period, n);
            let states: Vec<CVec> = times
                .iter()
                .map(|&t| crate::model::wf_state_analytic(&p, t).unwrap().amplitudes)
                .collect();
            let spec = HilbertSpec::new(vec![2, 2]).unwrap();
            let trace = gp_pure(&pure_traj(spec, times, states)).unwrap();
            for i in 0..trace.len() {
                assert!(
                    trace.phi_g[i].abs() < 1e-9,
                    "n = {n}, sample {i}: {}",
                    trace.phi_g[i]
                );
            }
        }
    }

    #[test]
    fn under_resolved_winding_is_refused() {
        // 2 rad per step: too fast for winding, too far from π for a flip.
        let n = 16;
        let times = linspace(0.0, 1.0, n);
        let spec = HilbertSpec::new(vec![2]).unwrap();
        let states: Vec<CVec> = (0..n)
            .map(|i| {
                let mut v = CVec::zeros(2);
                v[0] = C64::from_polar(1.0, 2.0 * i as f64);
                v
            })
            .collect();
        let err = gp_pure(&pure_traj(spec, times, states));
        assert!(matches!(err, Err(Error::Resolution(_))));
    }

    #[test]
    fn mixed_rank1_matches_pure_estimator() {
        let theta = std::f64::consts::FRAC_PI_3;
        let tau = std::f64::consts::TAU;
        let times = linspace(0.0, tau, 1025);
        let states = precession_states(theta, 1.0, &times);
        let spec = HilbertSpec::new(vec![2]).unwrap();
        let traj = pure_traj(spec, times, states);
        let pure = gp_pure(&traj).unwrap();
        let mixed = gp_mixed(&traj).unwrap();
        for i in 0..pure.len() {
            assert!(
                (pure.phi_g[i] - mixed.phi_g[i]).abs() < 1e-8,
                "sample {i}: {} vs {}",
                pure.phi_g[i],
                mixed.phi_g[i]
            );
        }
    }

    #[test]
    fn static_maximally_mixed_has_zero_gp() {
        let spec = HilbertSpec::new(vec![2, 2]).unwrap();
        let rho = crate::ops::identity(4).mapv(|z| z * 0.25);
        let times = linspace(0.0, 1.0, 65);
        let states = vec![rho; 65];
        let traj = Trajectory {
            spec,
            times,
            states: TrajectoryStates::Density(states),
            diagnostics: Default::default(),
        };
        let trace = gp_mixed(&traj).unwrap();
        for v in &trace.phi_g {
            assert!(v.abs() < 1e-10);
        }
    }

    #[test]
    fn dephasing_rank_growth_keeps_zero_gp() {
        // |+x⟩ under pure dephasing: ρ(t) = ½(I + e^{-2γt}σx). The second
        // branch grows from exactly zero weight and must stay excluded.
        let times = linspace(0.0, 5.0, 513);
        let states: Vec<CMat> = times
            .iter()
            .map(|&t| {
                let r = (-0.4 * t).exp();
                let mut rho = CMat::zeros((2, 2));
                rho[[0, 0]] = C64::new(0.5, 0.0);
                rho[[1, 1]] = C64::new(0.5, 0.0);
                rho[[0, 1]] = C64::new(0.5 * r, 0.0);
                rho[[1, 0]] = C64::new(0.5 * r, 0.0);
                rho
            })
            .collect();
        let traj = Trajectory {
            spec: HilbertSpec::new(vec![2]).unwrap(),
            times,
            states: TrajectoryStates::Density(states),
            diagnostics: Default::default(),
        };
        let trace = gp_mixed(&traj).unwrap();
        for v in &trace.phi_g {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn mixed_precession_matches_interferometric_oracle() {
        // ρ0 = ½(I + r n̂·σ) on cone angle θ precessing about z. After one
        // cycle each branch closes its ray, and the weighted sum gives
        // φ_g = -π + atan2(r sin(π cos θ), cos(π cos θ)).
        let r = 0.5;
        let cos_theta: f64 = 0.3;
        let theta = cos_theta.acos();
        let omega = 1.0;
        let tau = std::f64::consts::TAU / omega;
        let times = linspace(0.0, tau, 4097);
        let states: Vec<CMat> = times
            .iter()
            .map(|&t| {
                // Bloch vector r(sinθ cos ωt, sinθ sin ωt, cosθ) for
                // H = (ω/2)σz: ⟨σ±⟩ rotates as e^{±iωt}.
                let bx = r * theta.sin() * (omega * t).cos();
                let by = r * theta.sin() * (omega * t).sin();
                let bz = r * cos_theta;
                let mut rho = CMat::zeros((2, 2));
                rho[[0, 0]] = C64::new(0.5 * (1.0 + bz), 0.0);
                rho[[1, 1]] = C64::new(0.5 * (1.0 - bz), 0.0);
                rho[[0, 1]] = C64::new(0.5 * bx, -0.5 * by);
                rho[[1, 0]] = C64::new(0.5 * bx, 0.5 * by);
                rho
            })
            .collect();
        let traj = Trajectory {
            spec: HilbertSpec::new(vec![2]).unwrap(),
            times,
            states: TrajectoryStates::Density(states),
            diagnostics: Default::default(),
        };
        let trace = gp_mixed(&traj).unwrap();
        let want = -std::f64::consts::PI
            + (r * (std::f64::consts::PI * cos_theta).sin())
                .atan2((std::f64::consts::PI * cos_theta).cos());
        let got = trace.phi_g[trace.len() - 1];
        assert!((got - want).abs() < 1e-4, "got {got}, want {want}");
    }

    #[test]
    fn branch_continuity_error_on_coarse_grid() {
        // Equator precession sampled 5 times per cycle: per-step branch
        // overlap cos(π/5) ≈ 0.81 < 0.9.
        let times = linspace(0.0, std::f64::consts::TAU, 6);
        let states = precession_states(std::f64::consts::FRAC_PI_2, 1.0, &times);
        let spec = HilbertSpec::new(vec![2]).unwrap();
        let traj = pure_traj(spec, times, states).to_density();
        let err = gp_mixed(&traj);
        assert!(matches!(err, Err(Error::Resolution(_))));
    }

    #[test]
    fn subsystem_gp_of_product_trajectory() {
        let theta = std::f64::consts::FRAC_PI_3;
        let tau = std::f64::consts::TAU;
        let times = linspace(0.0, tau, 1025);
        let q1 = precession_states(theta, 1.0, &times);
        let spec = HilbertSpec::new(vec![2, 2]).unwrap();
        let fixed = rand_unit_state(2, 3);
        let states: Vec<CVec> = q1
            .iter()
            .map(|a| {
                let mut v = CVec::zeros(4);
                for i in 0..2 {
                    for j in 0..2 {
                        v[2 * i + j] = a[i] * fixed[j];
                    }
                }
                v
            })
            .collect();
        let traj = pure_traj(spec, times.clone(), states);

        let sub0 = gp_subsystem(&traj, 0).unwrap();
        let q1_spec = HilbertSpec::new(vec![2]).unwrap();
        let pure1 = gp_pure(&pure_traj(q1_spec, times, q1)).unwrap();
        let last = sub0.len() - 1;
        assert!((sub0.phi_g[last] - pure1.phi_g[last]).abs() < 1e-6);

        let sub1 = gp_subsystem(&traj, 1).unwrap();
        for v in &sub1.phi_g {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn unwrap_restores_continuous_ramp() {
        let n = 400;
        let cont: Vec<f64> = (0..n).map(|i| 0.07 * i as f64 - 3.0).collect();
        let wrapped: Vec<f64> = cont
            .iter()
            .map(|&x| {
                let mut y = x % std::f64::consts::TAU;
                if y > std::f64::consts::PI {
                    y -= std::f64::consts::TAU;
                }
                if y <= -std::f64::consts::PI {
                    y += std::f64::consts::TAU;
                }
                y
            })
            .collect();
        let unwrapped = unwrap_phase(&wrapped);
        for i in 0..n {
            let d = unwrapped[i] - cont[i];
            // Same up to one shared 2π offset fixed by the first sample.
            let d0 = unwrapped[0] - cont[0];
            assert!((d - d0).abs() < 1e-10);
        }
    }
}
