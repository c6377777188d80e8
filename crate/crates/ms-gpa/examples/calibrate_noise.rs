//! Calibrate per-channel Lindblad rates so every channel produces the same
//! entanglement loss Delta E at the gate time. Matched loss is what makes
//! the GP-deviation curves of different channels comparable.

use ms_gpa::analysis::{calibrate_gamma, CALIBRATION_TOL};
use ms_gpa::dynamics::NoiseKind;
use ms_gpa::model::MSParams;

fn main() -> ms_gpa::Result<()> {
    let p = MSParams::sf_reference();
    let kinds = [
        NoiseKind::QubitDecay,
        NoiseKind::QubitDephasing,
        NoiseKind::MotionalHeating,
        NoiseKind::MotionalDephasing,
        NoiseKind::NonLocal,
    ];
    for delta_e in [0.05, 0.1, 0.2] {
        println!("Delta E = {delta_e}:");
        for kind in kinds {
            let gamma = calibrate_gamma(&p, kind, delta_e, CALIBRATION_TOL, 512)?;
            println!("  {kind:?}: gamma = {gamma:.1} 1/s");
        }
    }
    Ok(())
}
