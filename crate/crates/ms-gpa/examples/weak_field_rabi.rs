//! Weak-field Rabi flopping |00> <-> |11> over one effective Rabi period
//! 2 pi / |Omega_eff|, compared per sample against the closed-form
//! two-level solution that drops the motional sideband.

use std::f64::consts::TAU;

use ms_gpa::dynamics::{propagate_schrodinger, qubit_populations, TimeGrid};
use ms_gpa::model::{ground_state, wf_state_analytic, MSParams};

fn main() -> ms_gpa::Result<()> {
    // eta = 0.04 keeps eta*omega <= 0.05|epsilon|, where the closed form holds.
    let mut p = MSParams::wf_reference();
    p.eta = 0.04;
    let period = TAU / p.effective_rabi()?.abs();
    let grid = TimeGrid::new(0.0, period, 32768)?;
    let traj = propagate_schrodinger(&p, &ground_state(&p), &grid)?;

    let pops = qubit_populations(&traj)?;
    let mut max_gap = 0.0f64;
    for i in 0..=grid.steps() {
        let analytic = wf_state_analytic(&p, grid.time_at(i))?;
        let p11 = analytic.amplitudes[3].norm_sqr();
        max_gap = max_gap.max((pops[[i, 3]] - p11).abs());
    }
    let mid = grid.steps() / 2;
    println!(
        "P11 at half period: {:.6} (closed form 1); at full period: {:.2e} (closed form 0)",
        pops[[mid, 3]],
        pops[[grid.steps(), 3]]
    );
    println!("max |P11 - closed form| over the period: {max_gap:.2e}");
    Ok(())
}
