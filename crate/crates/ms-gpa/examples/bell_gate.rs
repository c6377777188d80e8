//! Drive the strong-field MS gate from |00, n=0> for one gate time T and
//! check the output against the ideal Bell state (|00> + i e^{2i phi_s} |11>)/sqrt(2).

use ms_gpa::dynamics::{propagate_schrodinger, qubit_populations, TimeGrid};
use ms_gpa::model::{ground_state, MSParams};
use ms_gpa::Complex64 as C64;

fn main() -> ms_gpa::Result<()> {
    let p = MSParams::sf_reference();
    let t_gate = p.gate_time()?;
    let grid = TimeGrid::new(0.0, t_gate, 1536)?;
    let traj = propagate_schrodinger(&p, &ground_state(&p), &grid)?;

    let pops = qubit_populations(&traj)?;
    let last = pops.nrows() - 1;
    println!(
        "populations at T: P00 {:.6}  P01 {:.2e}  P10 {:.2e}  P11 {:.6}",
        pops[[last, 0]],
        pops[[last, 1]],
        pops[[last, 2]],
        pops[[last, 3]]
    );

    // Trace out the motional mode; at T the displacement loop closes, so the
    // qubits are left in a pure Bell state.
    let reduced = traj.reduced(&[0, 1])?;
    let rho = &reduced.density_states()?[grid.steps()];
    let half = C64::new(0.5f64.sqrt(), 0.0);
    let bell = [
        half,
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
        C64::new(0.0, 1.0) * C64::from_polar(1.0, 2.0 * p.phi_s) * half,
    ];
    let mut fid = C64::new(0.0, 0.0);
    for a in 0..4 {
        for b in 0..4 {
            fid += bell[a].conj() * rho[[a, b]] * bell[b];
        }
    }
    println!("Bell fidelity at T: {:.9}", fid.re);
    Ok(())
}
