//! Pancharatnam geometric phase of the strong-field trajectory over three
//! gate times, with the sign flips of d phi_g / dt located numerically
//! (they sit at T and 3T, where the motional loop closes).

use ms_gpa::dynamics::{propagate_schrodinger, TimeGrid};
use ms_gpa::gp::gp_pure;
use ms_gpa::model::{ground_state, MSParams};

fn main() -> ms_gpa::Result<()> {
    let p = MSParams::sf_reference();
    let t_gate = p.gate_time()?;
    // Extend slightly past 3T so the flip there is visible on both sides.
    let grid = TimeGrid::new(0.0, 3.1 * t_gate, 3100)?;
    let traj = propagate_schrodinger(&p, &ground_state(&p), &grid)?;
    let gp = gp_pure(&traj)?;

    for (label, idx) in [("T", 1000), ("2T", 2000), ("3T", 3000)] {
        println!(
            "phi_g({label}) = {:+.6}  (global {:+.6}, dynamical {:+.6})",
            gp.phi_g[idx], gp.phi_global[idx], gp.phi_dyn[idx]
        );
    }

    // Sign flips of the derivative, ignoring the numerically-zero plateau.
    let dt = grid.dt();
    let deriv: Vec<f64> = (1..gp.len())
        .map(|i| (gp.phi_g[i] - gp.phi_g[i - 1]) / dt)
        .collect();
    let floor = 1e-5 * deriv.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut last = 0.0f64;
    for (i, d) in deriv.iter().enumerate() {
        if d.abs() <= floor {
            continue;
        }
        if last != 0.0 && d.signum() != last {
            println!("slope flip at t = {:.4} T", gp.times[i + 1] / t_gate);
        }
        last = d.signum();
    }
    Ok(())
}
