//! Mølmer–Sørensen gate model: parameters, collective spin operators, the
//! interaction-picture Hamiltonian, and its exact closed-form propagator.
//!
//! Conventions (ħ = 1): qubit basis `|0⟩, |1⟩` with `σz|0⟩ = +|0⟩`, raising
//! operator `σ₊ = |0⟩⟨1|`. The two-qubit collective operators are
//! `S± = σ±⊗I + I⊗σ±` and `S = S₋ e^{iφs} − S₊ e^{−iφs}` (anti-Hermitian).
//! The bichromatic drive in the interaction picture reads
//!
//! ```text
//! H(t) = i (ηΩ/2) S (a e^{i(εt+φm)} + a† e^{-i(εt+φm)}),   ε = δ − ν,
//! ```
//!
//! whose propagator closes under the Lie algebra as
//! `U(t) = exp(S(αa + α*a†) + iβS²)` with
//! `α(t) = (ηΩ/ε) e^{iεt/2} sin(εt/2) e^{iφm}` and
//! `β(t) = (ηΩ/2ε)² (εt − sin εt)`.

use num_complex::Complex64 as C64;
use std::f64::consts::TAU;

use crate::ops::{self, CMat, HilbertSpec, StateVector};
use crate::{Error, Result};

/// Physical parameters of the gate. Angular frequencies in rad/s.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MSParams {
    /// Lamb-Dicke parameter.
    pub eta: f64,
    /// Carrier Rabi frequency Ω.
    pub omega: f64,
    /// Motional mode frequency ν.
    pub nu: f64,
    /// Laser detuning δ from the carrier; the sideband detuning is ε = δ − ν.
    pub delta: f64,
    /// Spin phase φs of the bichromatic beat.
    pub phi_s: f64,
    /// Motional phase φm.
    pub phi_m: f64,
    /// Fock-space truncation of the motional mode.
    pub n_fock: usize,
}

/// Coarse operating regime of a parameter set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    /// `ηΩ ≤ 0.05 |ε|`: far-detuned, motion only virtually excited.
    WeakField,
    /// `ε = 2ηΩ` (relative tolerance 1e-6): one phase-space loop per `2π/ε`.
    StrongField,
    /// Anything else.
    Custom,
}

impl MSParams {
    /// Strong-field reference point: `ε = 2ηΩ`, so the motional trajectory
    /// closes once per gate time `T = 2π/ε` and `β(T) = π/8`.
    pub fn sf_reference() -> Self {
        let eta = 0.028;
        let omega = TAU * 270.0e3;
        let nu = TAU * 2.03e6;
        Self {
            eta,
            omega,
            nu,
            delta: nu + 2.0 * eta * omega,
            phi_s: 0.0,
            phi_m: 0.0,
            n_fock: 16,
        }
    }

    /// Weak-field reference point: drive red-detuned 10% below the sideband
    /// (ε = −0.1ν). Note this sits outside the strict `WeakField` validity
    /// gate (ηΩ = 0.1|ε|), so the closed-form weak-field state is not
    /// available for it; the full dynamics of course are.
    pub fn wf_reference() -> Self {
        let nu = TAU * 2.03e6;
        Self {
            eta: 0.1,
            omega: 0.1 * nu,
            nu,
            delta: 0.9 * nu,
            phi_s: 0.0,
            phi_m: 0.0,
            n_fock: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.eta, self.omega, self.nu, self.delta, self.phi_s, self.phi_m]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Parameter("MSParams fields must be finite".into()));
        }
        if self.eta <= 0.0 || self.omega <= 0.0 || self.nu <= 0.0 {
            return Err(Error::Parameter(
                "eta, omega, nu must be strictly positive".into(),
            ));
        }
        if self.n_fock < 2 {
            return Err(Error::Parameter(format!(
                "n_fock must be >= 2, got {}",
                self.n_fock
            )));
        }
        Ok(())
    }

    /// Sideband detuning `ε = δ − ν`.
    pub fn epsilon(&self) -> f64 {
        self.delta - self.nu
    }

    /// Signed effective two-photon Rabi frequency `Ω̃ = (ηΩ)²/ε`.
    pub fn effective_rabi(&self) -> Result<f64> {
        let eps = self.epsilon();
        if eps == 0.0 {
            return Err(Error::Parameter(
                "epsilon = 0: resonant carrier is not modeled".into(),
            ));
        }
        Ok((self.eta * self.omega).powi(2) / eps)
    }

    /// Loop-closure time `T = 2π/|ε|` of the motional phase-space orbit.
    pub fn gate_time(&self) -> Result<f64> {
        let eps = self.epsilon();
        if eps == 0.0 {
            return Err(Error::Parameter(
                "epsilon = 0: no finite loop-closure time".into(),
            ));
        }
        Ok(TAU / eps.abs())
    }

    pub fn regime(&self) -> Regime {
        let eps = self.epsilon();
        if eps == 0.0 {
            return Regime::Custom;
        }
        if self.eta * self.omega <= 0.05 * eps.abs() {
            return Regime::WeakField;
        }
        if (eps / (2.0 * self.eta * self.omega) - 1.0).abs() <= 1e-6 {
            return Regime::StrongField;
        }
        Regime::Custom
    }

    /// The `[2, 2, n_fock]` product space of this parameter set.
    pub fn space(&self) -> HilbertSpec {
        HilbertSpec::ms(self.n_fock)
    }
}

/// Collective two-qubit spin operators on the `[2, 2]` subspace.
pub struct SpinOps {
    /// `S₊ = σ₊⊗I + I⊗σ₊`
    pub s_plus: CMat,
    /// `S₋ = σ₋⊗I + I⊗σ₋`
    pub s_minus: CMat,
    /// `S = S₋ e^{iφs} − S₊ e^{-iφs}` (anti-Hermitian, eigenvalues 0, 0, ±2i)
    pub s: CMat,
}

pub fn spin_ops(phi_s: f64) -> SpinOps {
    let id = ops::identity(2);
    let s_plus = ops::kron(&ops::sigma_p(), &id) + ops::kron(&id, &ops::sigma_p());
    let s_minus = ops::kron(&ops::sigma_m(), &id) + ops::kron(&id, &ops::sigma_m());
    let ep = C64::from_polar(1.0, phi_s);
    let s = s_minus.mapv(|z| z * ep) - s_plus.mapv(|z| z * ep.conj());
    SpinOps { s_plus, s_minus, s }
}

/// Constant generators `G±` with `H(t) = e^{iεt} G₊ + e^{-iεt} G₋`.
///
/// `G₊ = i(ηΩ/2) e^{iφm} S⊗a` and `G₋ = G₊†` evaluated on the full
/// `[2, 2, n_fock]` space. Splitting the time dependence into two fixed
/// matrices is what the propagators build their inner loops on.
pub fn ms_generators(p: &MSParams) -> Result<(CMat, CMat)> {
    p.validate()?;
    let (a, adag, _) = ops::boson_ops(p.n_fock)?;
    let s = spin_ops(p.phi_s).s;
    let coeff = C64::new(0.0, 0.5 * p.eta * p.omega) * C64::from_polar(1.0, p.phi_m);
    let g_plus = ops::kron(&s, &a).mapv(|z| z * coeff);
    // S is anti-Hermitian, so (i c S⊗a)† = i c̄ S⊗a†.
    let g_minus = ops::kron(&s, &adag).mapv(|z| z * C64::new(0.0, 0.5 * p.eta * p.omega) * C64::from_polar(1.0, -p.phi_m));
    Ok((g_plus, g_minus))
}

/// Interaction-picture Hamiltonian at time `t` on the full space.
pub fn ms_hamiltonian(p: &MSParams, t: f64) -> Result<CMat> {
    let (g_plus, g_minus) = ms_generators(p)?;
    let eps = p.epsilon();
    let cp = C64::from_polar(1.0, eps * t);
    Ok(g_plus.mapv(|z| z * cp) + g_minus.mapv(|z| z * cp.conj()))
}

/// Exact spectral norm of `H(t)` (time-independent): `(ηΩ/2)·2·x_max` with
/// `x_max` the largest eigenvalue of the truncated quadrature `a + a†`.
pub fn ms_hamiltonian_norm(p: &MSParams) -> Result<f64> {
    p.validate()?;
    let (a, adag, _) = ops::boson_ops(p.n_fock)?;
    let x = a + adag;
    let (values, _) = ops::eigh(&x)?;
    let x_max = values.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    Ok(p.eta * p.omega * x_max)
}

/// Displacement amplitude `α(t) = (ηΩ/ε) e^{iεt/2} sin(εt/2) e^{iφm}`.
pub fn alpha(p: &MSParams, t: f64) -> Result<C64> {
    p.validate()?;
    let eps = p.epsilon();
    if eps == 0.0 {
        return Err(Error::Parameter(
            "epsilon = 0: resonant carrier is not modeled".into(),
        ));
    }
    let half = 0.5 * eps * t;
    let amp = (p.eta * p.omega / eps) * half.sin();
    Ok(C64::from_polar(1.0, half) * amp * C64::from_polar(1.0, p.phi_m))
}

/// Spin-squeezing angle `β(t) = (ηΩ/2ε)² (εt − sin εt)`.
pub fn beta(p: &MSParams, t: f64) -> Result<f64> {
    p.validate()?;
    let eps = p.epsilon();
    if eps == 0.0 {
        return Err(Error::Parameter(
            "epsilon = 0: resonant carrier is not modeled".into(),
        ));
    }
    let c = (0.5 * p.eta * p.omega / eps).powi(2);
    Ok(c * (eps * t - (eps * t).sin()))
}

/// Exact propagator `U(t) = exp(S(αa + α*a†) + iβS²)` on the full space.
pub fn ms_unitary_analytic(p: &MSParams, t: f64) -> Result<CMat> {
    let al = alpha(p, t)?;
    let be = beta(p, t)?;
    let (a, adag, _) = ops::boson_ops(p.n_fock)?;
    let s = spin_ops(p.phi_s).s;
    let s2 = s.dot(&s);
    let id_mode = ops::identity(p.n_fock);
    let disp = a.mapv(|z| z * al) + adag.mapv(|z| z * al.conj());
    let exponent = ops::kron(&s, &disp) + ops::kron(&s2, &id_mode).mapv(|z| z * C64::new(0.0, be));
    ops::expm(&exponent)
}

/// Closed-form weak-field state `cos(θ)|00⟩ − i e^{-2iφs} sin(θ)|11⟩` with
/// `θ = |Ω̃| t / 2`, on the qubit pair only (the mode stays in its ground
/// state to leading order). Requires `Regime::WeakField`.
pub fn wf_state_analytic(p: &MSParams, t: f64) -> Result<StateVector> {
    p.validate()?;
    if p.regime() != Regime::WeakField {
        return Err(Error::Parameter(
            "weak-field closed form requires eta*omega <= 0.05 |epsilon|".into(),
        ));
    }
    let theta = 0.5 * p.effective_rabi()?.abs() * t;
    let spec = HilbertSpec::new(vec![2, 2])?;
    let mut psi = StateVector::basis(spec.clone(), &[0, 0]);
    psi.amplitudes[spec.index_of(&[0, 0])] = C64::new(theta.cos(), 0.0);
    psi.amplitudes[spec.index_of(&[1, 1])] =
        C64::new(0.0, -theta.sin()) * C64::from_polar(1.0, -2.0 * p.phi_s);
    Ok(psi)
}

/// `|00⟩ ⊗ |n=0⟩`, the standard initial state of every scenario.
pub fn ground_state(p: &MSParams) -> StateVector {
    StateVector::basis(p.space(), &[0, 0, 0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{dag, eigh, embed, identity, kron, sigma_m, sigma_p, CVec};
    use crate::testutil::*;

    #[test]
    fn reference_parameter_regimes() {
        assert_eq!(MSParams::sf_reference().regime(), Regime::StrongField);
        // The weak-field reference sits at ηΩ = 0.1|ε|, outside the strict
        // validity gate for the closed-form state.
        assert_eq!(MSParams::wf_reference().regime(), Regime::Custom);

        let mut compliant = MSParams::wf_reference();
        compliant.eta = 0.01;
        assert_eq!(compliant.regime(), Regime::WeakField);

        // The gate is inclusive at the boundary.
        let mut boundary = MSParams::wf_reference();
        boundary.omega = 0.05 * boundary.epsilon().abs() / boundary.eta;
        assert_eq!(boundary.regime(), Regime::WeakField);
    }

    #[test]
    fn effective_rabi_signed_value() {
        let p = MSParams::wf_reference();
        let tilde = p.effective_rabi().unwrap();
        // ε = -0.1ν, ηΩ = 0.01ν, so Ω̃ = -1e-3 ν.
        assert!((tilde / p.nu + 1e-3).abs() < 1e-12, "tilde = {tilde}");
        let mut res = p;
        res.delta = res.nu;
        assert!(res.effective_rabi().is_err());
    }

    #[test]
    fn spin_operator_structure() {
        let so = spin_ops(0.37);
        // S† = -S.
        assert!(max_abs_diff(&dag(&so.s), &so.s.mapv(|z| -z)) < 1e-15);
        // iS is Hermitian with eigenvalues {-2, 0, 0, +2}.
        let is = so.s.mapv(|z| z * C64::new(0.0, 1.0));
        let (values, _) = eigh(&is).unwrap();
        let expect = [-2.0, 0.0, 0.0, 2.0];
        for (v, e) in values.iter().zip(expect) {
            assert!((v - e).abs() < 1e-12);
        }
    }

    #[test]
    fn s_squared_on_ground_pinned_phase() {
        // S²|00⟩ = -2|00⟩ + 2 e^{2iφs}|11⟩ fixes the raising/lowering and
        // phase conventions at once.
        let phi_s = 0.37;
        let so = spin_ops(phi_s);
        let mut e00 = CVec::zeros(4);
        e00[0] = C64::new(1.0, 0.0);
        let got = so.s.dot(&so.s.dot(&e00));
        let mut expect = CVec::zeros(4);
        expect[0] = C64::new(-2.0, 0.0);
        expect[3] = C64::from_polar(2.0, 2.0 * phi_s);
        assert!(max_abs_diff_vec(&got, &expect) < 1e-14);
    }

    #[test]
    fn hamiltonian_matches_independent_construction() {
        // Oracle: assemble H(t) from single-qubit embeddings, never touching
        // the kron-of-collective-operators path used by the implementation.
        let mut p = MSParams::sf_reference();
        p.phi_s = 0.21;
        p.phi_m = -0.4;
        p.n_fock = 5;
        let spec = p.space();
        let t = 3.3e-6;

        let sp_full = embed(&sigma_p(), 0, &spec).unwrap() + embed(&sigma_p(), 1, &spec).unwrap();
        let sm_full = embed(&sigma_m(), 0, &spec).unwrap() + embed(&sigma_m(), 1, &spec).unwrap();
        let es = C64::from_polar(1.0, p.phi_s);
        let s_full = sm_full.mapv(|z| z * es) - sp_full.mapv(|z| z * es.conj());
        let (a, adagm, _) = crate::ops::boson_ops(p.n_fock).unwrap();
        let phase = C64::from_polar(1.0, p.epsilon() * t + p.phi_m);
        let mode = embed(&a, 2, &spec).unwrap().mapv(|z| z * phase)
            + embed(&adagm, 2, &spec).unwrap().mapv(|z| z * phase.conj());
        let oracle = s_full
            .dot(&mode)
            .mapv(|z| z * C64::new(0.0, 0.5 * p.eta * p.omega));

        let h = ms_hamiltonian(&p, t).unwrap();
        assert!(max_abs_diff(&h, &oracle) < 1e-12 * p.eta * p.omega);
        assert!(max_abs_diff(&h, &dag(&h)) < 1e-12 * p.eta * p.omega);
    }

    #[test]
    fn hamiltonian_norm_is_exact() {
        let p = MSParams::sf_reference();
        let bound = ms_hamiltonian_norm(&p).unwrap();
        let h = ms_hamiltonian(&p, 1.7e-6).unwrap();
        let (values, _) = eigh(&h).unwrap();
        let actual = values.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!((actual - bound).abs() < 1e-9 * bound);
    }

    #[test]
    fn alpha_closes_loops_and_beta_accumulates() {
        let p = MSParams::sf_reference();
        let t_gate = p.gate_time().unwrap();
        for k in 1..=3 {
            let a = alpha(&p, k as f64 * t_gate).unwrap();
            assert!(a.norm() < 1e-12, "alpha({k}T) = {a}");
        }
        // β(T) = π/8 when ε = 2ηΩ.
        let b = beta(&p, t_gate).unwrap();
        assert!((b - std::f64::consts::PI / 8.0).abs() < 1e-12);
        // β grows monotonically for ε > 0.
        let mut prev = 0.0;
        for i in 1..200 {
            let b = beta(&p, i as f64 * t_gate / 50.0).unwrap();
            assert!(b >= prev - 1e-15);
            prev = b;
        }
    }

    #[test]
    fn alpha_beta_derivatives_match_closed_form() {
        // α̇ = (ηΩ/2) e^{i(εt+φm)}, β̇ = ((ηΩ)²/2ε) sin²(εt/2), via central
        // finite differences of the implementations.
        let mut p = MSParams::sf_reference();
        p.phi_m = 0.83;
        let t_gate = p.gate_time().unwrap();
        let h = 1e-5 * t_gate;
        for &frac in &[0.13, 0.35, 0.5, 0.77, 1.4, 2.6] {
            let t = frac * t_gate;
            let da = (alpha(&p, t + h).unwrap() - alpha(&p, t - h).unwrap()) / (2.0 * h);
            let da_exact = C64::from_polar(0.5 * p.eta * p.omega, p.epsilon() * t + p.phi_m);
            assert!((da - da_exact).norm() < 1e-6 * da_exact.norm(), "t = {frac}T");

            let db = (beta(&p, t + h).unwrap() - beta(&p, t - h).unwrap()) / (2.0 * h);
            let db_exact =
                (p.eta * p.omega).powi(2) / (2.0 * p.epsilon()) * (0.5 * p.epsilon() * t).sin().powi(2);
            assert!((db - db_exact).abs() < 1e-6 * (p.eta * p.omega).powi(2) / p.epsilon());
        }
    }

    #[test]
    fn unitary_is_unitary_and_starts_at_identity() {
        let mut p = MSParams::sf_reference();
        p.n_fock = 8;
        let dim = p.space().total_dim();
        assert!(max_abs_diff(&ms_unitary_analytic(&p, 0.0).unwrap(), &identity(dim)) < 1e-13);
        let t_gate = p.gate_time().unwrap();
        for &frac in &[0.3, 1.0, 2.4] {
            let u = ms_unitary_analytic(&p, frac * t_gate).unwrap();
            assert!(max_abs_diff(&dag(&u).dot(&u), &identity(dim)) < 1e-11);
        }
    }

    #[test]
    fn unitary_solves_schrodinger_equation() {
        // Central difference of U(t)|ψ⟩ against -iH(t)U(t)|ψ⟩ for low-Fock
        // initial states. This welds the closed form, the Hamiltonian, and
        // every sign convention together. Columns near the Fock cutoff are
        // excluded: the closed form relies on [a,a†] = 1, which truncation
        // breaks at the top level.
        let mut p = MSParams::sf_reference();
        p.phi_s = 0.19;
        p.phi_m = -0.57;
        p.n_fock = 20;
        let spec = p.space();
        let t_gate = p.gate_time().unwrap();
        let h = 1e-9;
        let mut initial_states: Vec<CVec> = Vec::new();
        for multi in [[0, 0, 0], [1, 0, 1], [0, 1, 2], [1, 1, 0]] {
            initial_states.push(StateVector::basis(spec.clone(), &multi).amplitudes);
        }
        for &frac in &[0.22, 0.71, 1.33] {
            let t = frac * t_gate;
            let du = (ms_unitary_analytic(&p, t + h).unwrap()
                - ms_unitary_analytic(&p, t - h).unwrap())
            .mapv(|z| z / (2.0 * h));
            let rhs = ms_hamiltonian(&p, t)
                .unwrap()
                .dot(&ms_unitary_analytic(&p, t).unwrap())
                .mapv(|z| z * C64::new(0.0, -1.0));
            let scale = ms_hamiltonian_norm(&p).unwrap();
            for psi in &initial_states {
                let diff = max_abs_diff_vec(&du.dot(psi), &rhs.dot(psi));
                assert!(diff < 1e-6 * scale, "frac = {frac}, diff = {}", diff / scale);
            }
        }
    }

    #[test]
    fn unitary_factorizes_at_loop_closure() {
        let p = MSParams::sf_reference();
        let t_gate = p.gate_time().unwrap();
        for k in 1..=3 {
            let t = k as f64 * t_gate;
            let u = ms_unitary_analytic(&p, t).unwrap();
            let s = spin_ops(p.phi_s).s;
            let s2 = s.dot(&s);
            let qubit_factor =
                crate::ops::expm(&s2.mapv(|z| z * C64::new(0.0, beta(&p, t).unwrap()))).unwrap();
            let factored = kron(&qubit_factor, &identity(p.n_fock));
            assert!(max_abs_diff(&u, &factored) < 1e-8, "k = {k}");
        }
    }

    #[test]
    fn sf_gate_creates_bell_state() {
        for &phi_s in &[0.0, 0.3] {
            let mut p = MSParams::sf_reference();
            p.phi_s = phi_s;
            let t_gate = p.gate_time().unwrap();
            let u = ms_unitary_analytic(&p, t_gate).unwrap();
            let psi0 = ground_state(&p);
            let out = u.dot(&psi0.amplitudes);

            // Expected: e^{-iπ/4} (|00⟩ + i e^{2iφs}|11⟩)/√2 with the mode
            // back in |0⟩.
            let spec = p.space();
            let mut expect = CVec::zeros(spec.total_dim());
            let global = C64::from_polar(1.0, -std::f64::consts::FRAC_PI_4);
            let s = std::f64::consts::FRAC_1_SQRT_2;
            expect[spec.index_of(&[0, 0, 0])] = global * s;
            expect[spec.index_of(&[1, 1, 0])] =
                global * C64::new(0.0, s) * C64::from_polar(1.0, 2.0 * phi_s);
            assert!(
                max_abs_diff_vec(&out, &expect) < 1e-8,
                "phi_s = {phi_s}, diff = {}",
                max_abs_diff_vec(&out, &expect)
            );
        }
    }

    #[test]
    fn wf_state_gate_and_values() {
        assert!(wf_state_analytic(&MSParams::wf_reference(), 1e-6).is_err());

        let mut p = MSParams::wf_reference();
        p.eta = 0.01;
        let tilde = p.effective_rabi().unwrap().abs();
        // Half Rabi period: all population in |11⟩ with amplitude -i e^{-2iφs}.
        p.phi_s = 0.42;
        let t_pi = std::f64::consts::PI / tilde;
        let psi = wf_state_analytic(&p, t_pi).unwrap();
        assert!((psi.norm() - 1.0).abs() < 1e-12);
        let expect = C64::new(0.0, -1.0) * C64::from_polar(1.0, -2.0 * p.phi_s);
        assert!((psi.amplitudes[3] - expect).norm() < 1e-12);
        assert!(psi.amplitudes[0].norm() < 1e-12);

        // Populations follow cos²/sin² of |Ω̃|t/2.
        for &frac in &[0.1, 0.33, 0.8] {
            let t = frac * 2.0 * std::f64::consts::PI / tilde;
            let psi = wf_state_analytic(&p, t).unwrap();
            let p00 = psi.amplitudes[0].norm_sqr();
            assert!((p00 - (0.5 * tilde * t).cos().powi(2)).abs() < 1e-12);
        }
    }
}
