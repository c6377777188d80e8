//! Entanglement negativity of the two qubits over three gate times of the
//! strong-field MS interaction: maximal at T and 3T, back to zero at 2T
//! where the gate phase beta = pi/4 disentangles the pair.

use ms_gpa::analysis::negativity_series;
use ms_gpa::dynamics::{propagate_schrodinger, TimeGrid};
use ms_gpa::model::{ground_state, MSParams};

fn main() -> ms_gpa::Result<()> {
    let p = MSParams::sf_reference();
    let t_gate = p.gate_time()?;
    let steps = 4098;
    let grid = TimeGrid::new(0.0, 3.0 * t_gate, steps)?;
    let traj = propagate_schrodinger(&p, &ground_state(&p), &grid)?;

    let series = negativity_series(&traj)?;
    for (label, idx) in [("T", steps / 3), ("2T", 2 * steps / 3), ("3T", steps)] {
        println!("E({label}) = {:.6}", series[idx].e);
    }
    let peak = series
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.e.total_cmp(&b.1.e))
        .unwrap();
    println!(
        "peak E = {:.6} at t = {:.3} T",
        peak.1.e,
        grid.time_at(peak.0) / t_gate
    );
    Ok(())
}
