//! Entanglement, x-state diagnostics, geometric-phase deviation metrics,
//! noise-strength calibration, and the |00⟩-coefficient slope series.
//!
//! Negativity follows the partial-transpose convention: `raw_sum` is the
//! (non-positive) sum of negative eigenvalues of `ρ^{T₂}`, and the
//! normalized `e = 2|raw_sum|` equals 1 for a maximally entangled two-qubit
//! state. Entanglement loss is `ΔE = 1 - E(T)` at the gate time, and
//! `calibrate_gamma` inverts `γ ↦ ΔE(γ)` by bisection so that noise
//! strengths can be specified by their entanglement cost instead of a rate.

use num_complex::Complex64 as C64;

use crate::dynamics::{
    propagate_lindblad_observed, NoiseChannel, NoiseKind, TimeGrid, Trajectory, TrajectoryStates,
};
use crate::gp::{check_uniform_times, GPTrace};
use crate::model::{ground_state, MSParams};
use crate::ops::{self, CMat, HilbertSpec};
use crate::{Error, Result};

/// Default tolerance for [`calibrate_gamma`].
pub const CALIBRATION_TOL: f64 = 1e-3;
/// Entries outside the x-pattern larger than this break x-structure.
pub const X_STATE_TOL: f64 = 1e-8;

/// Negativity of a two-qubit state in the signed raw convention plus the
/// normalized value used for `ΔE`.
#[derive(Clone, Copy, Debug)]
pub struct NegativityReading {
    /// Sum of the negative eigenvalues of the partial transpose; in
    /// `[-1/2, 0]` for two qubits.
    pub raw_sum: f64,
    /// `|raw_sum|`.
    pub magnitude: f64,
    /// `2 |raw_sum|`, equal to 1 for a Bell state.
    pub e: f64,
}

/// Result of the x-state pattern check.
#[derive(Clone, Copy, Debug)]
pub struct XStateReport {
    pub is_x: bool,
    /// Largest modulus among the eight entries outside diagonal and
    /// anti-diagonal.
    pub max_violation: f64,
}

fn check_two_qubit_density(rho: &CMat) -> Result<()> {
    if rho.shape() != [4, 4] {
        return Err(Error::Shape(format!(
            "expected a 4x4 two-qubit density matrix, got {:?}",
            rho.shape()
        )));
    }
    let d = ops::density_diagnostics(rho)?;
    if d.trace_error > 1e-6 || d.hermiticity_error > 1e-8 || d.min_eigenvalue < -1e-6 {
        return Err(Error::Parameter(format!(
            "not a density matrix: |tr-1| = {:.2e}, herm = {:.2e}, min eig = {:.2e}",
            d.trace_error, d.hermiticity_error, d.min_eigenvalue
        )));
    }
    Ok(())
}

/// Negativity of a 4x4 two-qubit density matrix (any motional mode must be
/// traced out by the caller). The partial transpose acts on qubit 2.
pub fn negativity(rho: &CMat) -> Result<NegativityReading> {
    check_two_qubit_density(rho)?;
    let spec = HilbertSpec::new(vec![2, 2])?;
    let pt = ops::partial_transpose(rho, 1, &spec)?;
    let (values, _) = ops::eigh(&pt)?;
    let raw_sum: f64 = values.iter().filter(|&&v| v < 0.0).sum();
    Ok(NegativityReading {
        raw_sum,
        magnitude: raw_sum.abs(),
        e: 2.0 * raw_sum.abs(),
    })
}

/// Checks the x-state pattern: nonzero entries only on the diagonal and
/// anti-diagonal of the 4x4 computational-basis matrix.
pub fn is_x_state(rho: &CMat, tol: f64) -> Result<XStateReport> {
    if rho.shape() != [4, 4] {
        return Err(Error::Shape(format!(
            "expected a 4x4 matrix, got {:?}",
            rho.shape()
        )));
    }
    let mut max_violation = 0.0f64;
    for i in 0..4 {
        for j in 0..4 {
            if i == j || i + j == 3 {
                continue;
            }
            max_violation = max_violation.max(rho[[i, j]].norm());
        }
    }
    Ok(XStateReport {
        is_x: max_violation <= tol,
        max_violation,
    })
}

/// Pointwise GP deviation `Δφ_g(t) = φ_g^unitary(t) - φ_g^noisy(t)`.
/// The two traces must share an identical time grid.
pub fn delta_gp(gp_unitary: &GPTrace, gp_noisy: &GPTrace) -> Result<Vec<f64>> {
    if gp_unitary.times.len() != gp_noisy.times.len()
        || gp_unitary
            .times
            .iter()
            .zip(&gp_noisy.times)
            .any(|(a, b)| a != b)
    {
        return Err(Error::Parameter(
            "GP traces are on different time grids".into(),
        ));
    }
    Ok(gp_unitary
        .phi_g
        .iter()
        .zip(&gp_noisy.phi_g)
        .map(|(u, n)| u - n)
        .collect())
}

/// Index of the largest |value|; empty input is a parameter error.
pub fn argmax_abs(series: &[f64]) -> Result<usize> {
    series
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.abs().partial_cmp(&b.abs()).unwrap())
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Parameter("empty series".into()))
}

fn qubit_state_at(traj: &Trajectory, sample: usize) -> Result<CMat> {
    let full = match &traj.states {
        TrajectoryStates::Pure(v) => {
            let psi = &v[sample];
            let mut rho = CMat::zeros((psi.len(), psi.len()));
            for i in 0..psi.len() {
                for j in 0..psi.len() {
                    rho[[i, j]] = psi[i] * psi[j].conj();
                }
            }
            rho
        }
        TrajectoryStates::Density(v) => v[sample].clone(),
    };
    if traj.spec.n_factors() == 2 {
        return Ok(full);
    }
    let (reduced, _) = ops::partial_trace(&full, &[0, 1], &traj.spec)?;
    Ok(reduced)
}

/// Negativity of the mode-traced two-qubit state at every sample.
pub fn negativity_series(traj: &Trajectory) -> Result<Vec<NegativityReading>> {
    (0..traj.times.len())
        .map(|i| negativity(&qubit_state_at(traj, i)?))
        .collect()
}

/// Entanglement loss `ΔE = 1 - E` at the trajectory sample nearest the gate
/// time `T` of `p`, with the motional mode traced out.
pub fn entanglement_loss(traj: &Trajectory, p: &MSParams) -> Result<f64> {
    let t_gate = p.gate_time()?;
    let n = traj.times.len();
    if n == 0 || traj.times[0] > t_gate || traj.times[n - 1] < t_gate {
        return Err(Error::Parameter(format!(
            "trajectory [{}, {}] does not span the gate time {t_gate}",
            traj.times.first().copied().unwrap_or(f64::NAN),
            traj.times.last().copied().unwrap_or(f64::NAN)
        )));
    }
    let nearest = (0..n)
        .min_by(|&a, &b| {
            (traj.times[a] - t_gate)
                .abs()
                .partial_cmp(&(traj.times[b] - t_gate).abs())
                .unwrap()
        })
        .unwrap();
    let rho = qubit_state_at(traj, nearest)?;
    Ok(1.0 - negativity(&rho)?.e)
}

/// Entanglement loss of a Lindblad run over `[0, T]` from `|00⟩⊗|0⟩`,
/// keeping only the final sample. This is the calibration probe.
pub fn entanglement_loss_lindblad(
    p: &MSParams,
    channels: &[NoiseChannel],
    steps: usize,
) -> Result<f64> {
    let t_gate = p.gate_time()?;
    let grid = TimeGrid::new(0.0, t_gate, steps)?;
    let rho0 = ground_state(p).to_density();
    let spec = p.space();
    let mut final_qubits: Option<CMat> = None;
    propagate_lindblad_observed(p, &rho0, channels, &grid, |i, _, rho| {
        if i == grid.steps() {
            final_qubits = Some(ops::partial_trace(rho, &[0, 1], &spec)?.0);
        }
        Ok(())
    })?;
    let rho = final_qubits.expect("observer saw the final sample");
    Ok(1.0 - negativity(&rho)?.e)
}

/// Finds the rate `γ` at which `kind` (applied symmetrically, no target)
/// produces entanglement loss `target` at the gate time, to within `tol`,
/// by doubling an upper bracket and bisecting. Deterministic.
pub fn calibrate_gamma(
    p: &MSParams,
    kind: NoiseKind,
    target: f64,
    tol: f64,
    steps: usize,
) -> Result<f64> {
    if target == 0.0 {
        return Ok(0.0);
    }
    if !(0.0..0.9).contains(&target) {
        return Err(Error::Parameter(format!(
            "target entanglement loss must lie in (0, 0.9), got {target}"
        )));
    }
    if tol <= 0.0 {
        return Err(Error::Parameter("calibration tol must be positive".into()));
    }
    let probe = |gamma: f64| -> Result<f64> {
        let channel = NoiseChannel::new(kind, gamma);
        entanglement_loss_lindblad(p, std::slice::from_ref(&channel), steps)
    };

    let mut lo = 0.0f64;
    let mut hi = 0.01 / p.gate_time()?;
    let mut loss_hi = probe(hi)?;
    let mut doublings = 0;
    while loss_hi < target {
        let next = hi * 2.0;
        let loss_next = probe(next)?;
        if loss_next < loss_hi - tol {
            return Err(Error::Calibration(format!(
                "entanglement loss is not monotone near gamma = {next:.3e} \
                 ({loss_next:.4} < {loss_hi:.4})"
            )));
        }
        lo = hi;
        hi = next;
        loss_hi = loss_next;
        doublings += 1;
        if doublings > 60 {
            return Err(Error::Calibration(format!(
                "target loss {target} unreachable; got {loss_hi:.4} at gamma = {hi:.3e}"
            )));
        }
    }

    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let loss = probe(mid)?;
        if (loss - target).abs() <= tol {
            return Ok(mid);
        }
        if loss < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) < 1e-12 * hi {
            break;
        }
    }
    Err(Error::Calibration(format!(
        "bisection failed to reach loss {target} within tol {tol}"
    )))
}

/// Imaginary part of the time derivative of the `|00⟩⊗|0⟩` coefficient
/// along a pure trajectory: centered differences, one-sided at the ends.
pub fn slope_series(traj: &Trajectory) -> Result<Vec<f64>> {
    let states = traj.pure_states()?;
    let dt = check_uniform_times(&traj.times)?;
    if states.len() < 3 {
        return Err(Error::Parameter(
            "the slope series needs at least three samples".into(),
        ));
    }
    let idx = traj.spec.index_of(&vec![0; traj.spec.n_factors()]);
    let c: Vec<C64> = states.iter().map(|psi| psi[idx]).collect();
    let n = c.len();
    let mut out = Vec::with_capacity(n);
    out.push(((-3.0 * c[0] + 4.0 * c[1] - c[2]) / (2.0 * dt)).im);
    for i in 1..n - 1 {
        out.push(((c[i + 1] - c[i - 1]) / (2.0 * dt)).im);
    }
    out.push(((3.0 * c[n - 1] - 4.0 * c[n - 2] + c[n - 3]) / (2.0 * dt)).im);
    Ok(out)
}

/// Running trapezoid integral of a uniformly sampled series, starting at 0.
pub fn trapezoid_cumulative(series: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..series.len() {
        acc += 0.5 * dt * (series[i - 1] + series[i]);
        out.push(acc);
    }
    out
}
