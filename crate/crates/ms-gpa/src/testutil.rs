//! Deterministic pseudo-random fixtures shared by the unit tests.

use crate::ops::{dag, trace, CMat, CVec};
use num_complex::Complex64 as C64;

/// Minimal LCG, good enough for reproducible test fixtures.
pub fn lcg_step(state: &mut u64) -> f64 {
    *state = state
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    ((*state >> 11) as f64) / (1u64 << 53) as f64
}

/// Uniform in (-1, 1).
pub fn sym_f64(state: &mut u64) -> f64 {
    2.0 * lcg_step(state) - 1.0
}

pub fn rand_cmat(rows: usize, cols: usize, seed: u64) -> CMat {
    let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
    let mut m = CMat::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            m[[i, j]] = C64::new(sym_f64(&mut state), sym_f64(&mut state));
        }
    }
    m
}

pub fn rand_hermitian(n: usize, seed: u64) -> CMat {
    let a = rand_cmat(n, n, seed);
    (&a + &dag(&a)).mapv(|z| z * 0.5)
}

/// Random full-rank density matrix: B B† normalized to unit trace.
pub fn rand_density(n: usize, seed: u64) -> CMat {
    let b = rand_cmat(n, n, seed);
    let rho = b.dot(&dag(&b));
    let t = trace(&rho).re;
    rho.mapv(|z| z / t)
}

pub fn rand_unit_state(n: usize, seed: u64) -> CVec {
    let mut state = seed.wrapping_mul(0x2545f4914f6cdd1d).wrapping_add(7);
    let mut v = CVec::zeros(n);
    for i in 0..n {
        v[i] = C64::new(sym_f64(&mut state), sym_f64(&mut state));
    }
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.mapv(|z| z / norm)
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

pub fn max_abs_diff_vec(a: &CVec, b: &CVec) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}
