//! Single-qubit geometric phase under noise, computed in one streaming pass
//! per channel. Local channels keep the two-qubit state in x form and the
//! subsystem GP pinned at zero; the non-local channel sigma_x (x) 1 + 1 (x)
//! sigma_z breaks the x structure.

use ms_gpa::analysis::{calibrate_gamma, is_x_state, CALIBRATION_TOL, X_STATE_TOL};
use ms_gpa::dynamics::{propagate_lindblad_observed, NoiseChannel, NoiseKind, TimeGrid};
use ms_gpa::gp::MixedGpAccumulator;
use ms_gpa::model::{ground_state, MSParams};
use ms_gpa::ops::partial_trace;

fn main() -> ms_gpa::Result<()> {
    let p = MSParams::sf_reference();
    let t_gate = p.gate_time()?;
    let grid = TimeGrid::new(0.0, 3.0 * t_gate, 2049)?;
    let spec = p.space();
    let rho0 = ground_state(&p).to_density();

    for kind in [NoiseKind::QubitDephasing, NoiseKind::NonLocal] {
        let gamma = calibrate_gamma(&p, kind, 0.1, CALIBRATION_TOL, 512)?;
        let channel = NoiseChannel::new(kind, gamma);
        let mut acc: Option<MixedGpAccumulator> = None;
        let mut max_violation = 0.0f64;
        propagate_lindblad_observed(&p, &rho0, &[channel], &grid, |_, t, rho| {
            let (qubits, _) = partial_trace(rho, &[0, 1], &spec)?;
            let x = is_x_state(&qubits, X_STATE_TOL)?;
            max_violation = max_violation.max(x.max_violation);
            let (qubit2, _) = partial_trace(rho, &[1], &spec)?;
            match acc.as_mut() {
                None => acc = Some(MixedGpAccumulator::new(t, &qubit2)?),
                Some(a) => a.push(t, &qubit2)?,
            }
            Ok(())
        })?;
        let gp = acc.unwrap().finish();
        let max_gp = gp.phi_g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        println!(
            "{kind:?}: max x-violation {max_violation:.2e}, max |subsystem phi_g| {max_gp:.2e} rad"
        );
    }
    Ok(())
}
