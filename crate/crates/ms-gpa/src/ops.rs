//! Dense complex linear algebra and Hilbert-space bookkeeping.
//!
//! Everything operates on row-major `ndarray` arrays of `Complex64`. The
//! Hermitian eigensolve is backed by `nalgebra`'s pure-Rust tridiagonal QR
//! and wrapped here with a fixed ordering and phase convention so that all
//! downstream results are deterministic.

use ndarray as nd;
use num_complex::Complex64 as C64;

use crate::{Error, Result};

/// Dense complex matrix, row-major.
pub type CMat = nd::Array2<C64>;
/// Dense complex vector.
pub type CVec = nd::Array1<C64>;

/// Ordered list of subsystem dimensions defining a tensor-product space.
///
/// Flat indices are row-major: for dims `[d0, d1, d2]` the multi-index
/// `(i0, i1, i2)` maps to `(i0*d1 + i1)*d2 + i2`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HilbertSpec {
    dims: Vec<usize>,
}

impl HilbertSpec {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Shape("HilbertSpec needs at least one factor".into()));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape("HilbertSpec factor dimensions must be >= 1".into()));
        }
        Ok(Self { dims })
    }

    /// Two qubits followed by one truncated motional mode: `[2, 2, n_fock]`.
    pub fn ms(n_fock: usize) -> Self {
        Self { dims: vec![2, 2, n_fock] }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn n_factors(&self) -> usize {
        self.dims.len()
    }

    pub fn dim_of(&self, slot: usize) -> usize {
        self.dims[slot]
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().product()
    }

    /// Flat index of a multi-index, row-major.
    pub fn index_of(&self, multi: &[usize]) -> usize {
        assert_eq!(multi.len(), self.dims.len(), "multi-index arity mismatch");
        let mut flat = 0;
        for (i, (&m, &d)) in multi.iter().zip(&self.dims).enumerate() {
            assert!(m < d, "index {m} out of range for factor {i} (dim {d})");
            flat = flat * d + m;
        }
        flat
    }

    /// Multi-index of a flat index, row-major.
    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        assert!(flat < self.total_dim(), "flat index out of range");
        let mut multi = vec![0; self.dims.len()];
        for (slot, &d) in self.dims.iter().enumerate().rev() {
            multi[slot] = flat % d;
            flat /= d;
        }
        multi
    }
}

/// Pure state: amplitudes over a `HilbertSpec`, flat-indexed row-major.
#[derive(Clone, Debug)]
pub struct StateVector {
    pub spec: HilbertSpec,
    pub amplitudes: CVec,
}

impl StateVector {
    pub fn new(spec: HilbertSpec, amplitudes: CVec) -> Result<Self> {
        if amplitudes.len() != spec.total_dim() {
            return Err(Error::Shape(format!(
                "amplitude length {} does not match space dimension {}",
                amplitudes.len(),
                spec.total_dim()
            )));
        }
        Ok(Self { spec, amplitudes })
    }

    /// Computational basis state `|multi⟩`.
    pub fn basis(spec: HilbertSpec, multi: &[usize]) -> Self {
        let mut amplitudes = CVec::zeros(spec.total_dim());
        amplitudes[spec.index_of(multi)] = C64::new(1.0, 0.0);
        Self { spec, amplitudes }
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Rescales to unit norm. Zero vectors are a numerical error.
    pub fn normalize(&mut self) -> Result<()> {
        let n = self.norm();
        if n < 1e-300 {
            return Err(Error::Numerical("cannot normalize zero state".into()));
        }
        self.amplitudes.mapv_inplace(|z| z / n);
        Ok(())
    }

    /// Inner product `⟨self|other⟩` (conjugate-linear in `self`).
    pub fn overlap(&self, other: &Self) -> C64 {
        assert_eq!(self.spec, other.spec, "overlap between different spaces");
        self.amplitudes
            .iter()
            .zip(other.amplitudes.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Pure-state fidelity `|⟨self|other⟩|²`.
    pub fn fidelity(&self, other: &Self) -> f64 {
        self.overlap(other).norm_sqr()
    }

    /// Projector `|ψ⟩⟨ψ|`.
    pub fn to_density(&self) -> CMat {
        let d = self.amplitudes.len();
        let mut rho = CMat::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                rho[[i, j]] = self.amplitudes[i] * self.amplitudes[j].conj();
            }
        }
        rho
    }
}

/// n-by-n identity.
pub fn identity(n: usize) -> CMat {
    CMat::eye(n)
}

/// Conjugate transpose.
pub fn dag(m: &CMat) -> CMat {
    m.t().mapv(|z| z.conj())
}

pub fn trace(m: &CMat) -> C64 {
    m.diag().sum()
}

pub fn frob_norm(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Maximum absolute column sum (the induced 1-norm).
pub fn one_norm(m: &CMat) -> f64 {
    let mut best = 0.0f64;
    for j in 0..m.ncols() {
        let s: f64 = m.column(j).iter().map(|z| z.norm()).sum();
        best = best.max(s);
    }
    best
}

pub fn sigma_x() -> CMat {
    nd::array![
        [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
        [C64::new(1.0, 0.0), C64::new(0.0, 0.0)]
    ]
}

pub fn sigma_y() -> CMat {
    nd::array![
        [C64::new(0.0, 0.0), C64::new(0.0, -1.0)],
        [C64::new(0.0, 1.0), C64::new(0.0, 0.0)]
    ]
}

/// `σz = diag(+1, -1)`: the computational `|0⟩` carries σz = +1.
pub fn sigma_z() -> CMat {
    nd::array![
        [C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
        [C64::new(0.0, 0.0), C64::new(-1.0, 0.0)]
    ]
}

/// Raising operator `σ₊ = (σx + iσy)/2 = |0⟩⟨1|` (raises the σz eigenvalue).
pub fn sigma_p() -> CMat {
    nd::array![
        [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
        [C64::new(0.0, 0.0), C64::new(0.0, 0.0)]
    ]
}

/// Lowering operator `σ₋ = σ₊†`.
pub fn sigma_m() -> CMat {
    nd::array![
        [C64::new(0.0, 0.0), C64::new(0.0, 0.0)],
        [C64::new(1.0, 0.0), C64::new(0.0, 0.0)]
    ]
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    nd::linalg::kron(a, b)
}

/// Truncated boson operators `(a, a†, n)` on an `n_fock`-level mode.
///
/// `a|n⟩ = √n |n-1⟩`; the commutator `[a, a†]` equals 1 on the first
/// `n_fock - 1` diagonal entries and `-(n_fock - 1)` on the last, the
/// unavoidable truncation artifact.
pub fn boson_ops(n_fock: usize) -> Result<(CMat, CMat, CMat)> {
    if n_fock < 2 {
        return Err(Error::Parameter(format!("n_fock must be >= 2, got {n_fock}")));
    }
    let mut a = CMat::zeros((n_fock, n_fock));
    let mut num = CMat::zeros((n_fock, n_fock));
    for n in 1..n_fock {
        a[[n - 1, n]] = C64::new((n as f64).sqrt(), 0.0);
    }
    for n in 0..n_fock {
        num[[n, n]] = C64::new(n as f64, 0.0);
    }
    let adag = dag(&a);
    Ok((a, adag, num))
}

/// Places `op` on factor `slot` of `spec`, identity elsewhere.
pub fn embed(op: &CMat, slot: usize, spec: &HilbertSpec) -> Result<CMat> {
    if slot >= spec.n_factors() {
        return Err(Error::Shape(format!(
            "slot {slot} out of range for {} factors",
            spec.n_factors()
        )));
    }
    if op.nrows() != op.ncols() || op.nrows() != spec.dim_of(slot) {
        return Err(Error::Shape(format!(
            "operator shape {}x{} does not fit factor {slot} (dim {})",
            op.nrows(),
            op.ncols(),
            spec.dim_of(slot)
        )));
    }
    let mut out = identity(1);
    for (k, &d) in spec.dims().iter().enumerate() {
        if k == slot {
            out = kron(&out, op);
        } else {
            out = kron(&out, &identity(d));
        }
    }
    Ok(out)
}

/// Solves `A X = B` by LU with partial pivoting. `A` must be square.
fn solve_dense(a: CMat, b: CMat) -> Result<CMat> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::Shape("solve_dense: incompatible shapes".into()));
    }
    let nb = b.ncols();
    let mut lu = a;
    let mut x = b;
    for k in 0..n {
        let mut p = k;
        let mut best = lu[[k, k]].norm();
        for i in k + 1..n {
            let v = lu[[i, k]].norm();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best < 1e-300 {
            return Err(Error::Numerical("solve_dense: singular matrix".into()));
        }
        if p != k {
            for j in 0..n {
                lu.swap((k, j), (p, j));
            }
            for j in 0..nb {
                x.swap((k, j), (p, j));
            }
        }
        let piv = lu[[k, k]];
        for i in k + 1..n {
            let f = lu[[i, k]] / piv;
            lu[[i, k]] = f;
            for j in k + 1..n {
                let t = f * lu[[k, j]];
                lu[[i, j]] -= t;
            }
            for j in 0..nb {
                let t = f * x[[k, j]];
                x[[i, j]] -= t;
            }
        }
    }
    for j in 0..nb {
        for i in (0..n).rev() {
            let mut s = x[[i, j]];
            for k in i + 1..n {
                s -= lu[[i, k]] * x[[k, j]];
            }
            x[[i, j]] = s / lu[[i, i]];
        }
    }
    Ok(x)
}

// Diagonal Pade approximant tables for the matrix exponential
// (numerator coefficients b_k, highest degree last entry b_0 first).
const PADE_B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE_B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE_B7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE_B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE_B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
// 1-norm thresholds below which the corresponding degree meets f64 accuracy.
const PADE_THETA: [(usize, f64); 5] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
    (13, 5.371920351148152e0),
];

fn scaled_eye(n: usize, c: f64) -> CMat {
    identity(n).mapv_into(|z| z * c)
}

/// Matrix exponential by diagonal Pade approximation with scaling and
/// squaring (degree chosen from the 1-norm, Higham-style thresholds).
pub fn expm(m: &CMat) -> Result<CMat> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Shape("expm requires a square matrix".into()));
    }
    let norm = one_norm(m);
    let theta13 = PADE_THETA[4].1;
    let s = if norm > theta13 {
        (norm / theta13).log2().ceil().max(0.0) as u32
    } else {
        0
    };
    let a = if s > 0 {
        m.mapv(|z| z / (2f64.powi(s as i32)))
    } else {
        m.clone()
    };
    let scaled_norm = norm / 2f64.powi(s as i32);

    let mut degree = 13;
    for &(d, theta) in &PADE_THETA {
        if scaled_norm <= theta {
            degree = d;
            break;
        }
    }

    let a2 = a.dot(&a);
    let (u, v) = if degree <= 9 {
        let b: &[f64] = match degree {
            3 => &PADE_B3,
            5 => &PADE_B5,
            7 => &PADE_B7,
            _ => &PADE_B9,
        };
        // Even powers a^0, a^2, a^4, ... up to a^(degree-1).
        let mut powers: Vec<CMat> = vec![identity(n), a2.clone()];
        while powers.len() < (degree + 1) / 2 {
            let next = powers.last().unwrap().dot(&a2);
            powers.push(next);
        }
        let mut u_inner = CMat::zeros((n, n));
        let mut v = CMat::zeros((n, n));
        for (k, pow) in powers.iter().enumerate() {
            u_inner = u_inner + pow.mapv(|z| z * b[2 * k + 1]);
            v = v + pow.mapv(|z| z * b[2 * k]);
        }
        (a.dot(&u_inner), v)
    } else {
        let b = &PADE_B13;
        let a4 = a2.dot(&a2);
        let a6 = a2.dot(&a4);
        let u_hi = a2.mapv(|z| z * b[9]) + a4.mapv(|z| z * b[11]) + a6.mapv(|z| z * b[13]);
        let u_lo = scaled_eye(n, b[1]) + a2.mapv(|z| z * b[3]) + a4.mapv(|z| z * b[5]) + a6.mapv(|z| z * b[7]);
        let u = a.dot(&(a6.dot(&u_hi) + u_lo));
        let v_hi = a2.mapv(|z| z * b[8]) + a4.mapv(|z| z * b[10]) + a6.mapv(|z| z * b[12]);
        let v = a6.dot(&v_hi) + scaled_eye(n, b[0]) + a2.mapv(|z| z * b[2]) + a4.mapv(|z| z * b[4]) + a6.mapv(|z| z * b[6]);
        (u, v)
    };

    let mut f = solve_dense(&v - &u, &v + &u)?;
    for _ in 0..s {
        f = f.dot(&f);
    }
    Ok(f)
}

/// Traces out every factor not listed in `keep` (ascending, no duplicates).
/// Returns the reduced matrix together with its `HilbertSpec`.
pub fn partial_trace(rho: &CMat, keep: &[usize], spec: &HilbertSpec) -> Result<(CMat, HilbertSpec)> {
    let d = spec.total_dim();
    if rho.nrows() != d || rho.ncols() != d {
        return Err(Error::Shape(format!(
            "density matrix is {}x{}, space dimension is {d}",
            rho.nrows(),
            rho.ncols()
        )));
    }
    if keep.is_empty() {
        return Err(Error::Shape("partial_trace must keep at least one factor".into()));
    }
    if keep.windows(2).any(|w| w[0] >= w[1]) || *keep.last().unwrap() >= spec.n_factors() {
        return Err(Error::Shape(
            "keep list must be strictly ascending and within range".into(),
        ));
    }
    let traced: Vec<usize> = (0..spec.n_factors()).filter(|s| !keep.contains(s)).collect();
    let keep_dims: Vec<usize> = keep.iter().map(|&s| spec.dim_of(s)).collect();
    let traced_dims: Vec<usize> = traced.iter().map(|&s| spec.dim_of(s)).collect();
    let dk: usize = keep_dims.iter().product();
    let dt: usize = traced_dims.iter().product();
    let keep_spec = HilbertSpec::new(keep_dims.clone())?;
    let traced_spec = HilbertSpec::new(if traced_dims.is_empty() {
        vec![1]
    } else {
        traced_dims
    })?;

    let mut out = CMat::zeros((dk, dk));
    let mut full_row = vec![0usize; spec.n_factors()];
    let mut full_col = vec![0usize; spec.n_factors()];
    for r in 0..dk {
        let rk = keep_spec.multi_index(r);
        for c in 0..dk {
            let ck = keep_spec.multi_index(c);
            let mut acc = C64::new(0.0, 0.0);
            for t in 0..dt {
                let tm = traced_spec.multi_index(t);
                for (slot_pos, &slot) in keep.iter().enumerate() {
                    full_row[slot] = rk[slot_pos];
                    full_col[slot] = ck[slot_pos];
                }
                for (slot_pos, &slot) in traced.iter().enumerate() {
                    full_row[slot] = tm[slot_pos];
                    full_col[slot] = tm[slot_pos];
                }
                acc += rho[[spec.index_of(&full_row), spec.index_of(&full_col)]];
            }
            out[[r, c]] = acc;
        }
    }
    Ok((out, keep_spec))
}

/// Transposes the indices of one factor only.
pub fn partial_transpose(rho: &CMat, subsystem: usize, spec: &HilbertSpec) -> Result<CMat> {
    let d = spec.total_dim();
    if rho.nrows() != d || rho.ncols() != d {
        return Err(Error::Shape(format!(
            "density matrix is {}x{}, space dimension is {d}",
            rho.nrows(),
            rho.ncols()
        )));
    }
    if subsystem >= spec.n_factors() {
        return Err(Error::Shape(format!(
            "subsystem {subsystem} out of range for {} factors",
            spec.n_factors()
        )));
    }
    let mut out = CMat::zeros((d, d));
    for r in 0..d {
        let mut rm = spec.multi_index(r);
        for c in 0..d {
            let mut cm = spec.multi_index(c);
            std::mem::swap(&mut rm[subsystem], &mut cm[subsystem]);
            out[[spec.index_of(&rm), spec.index_of(&cm)]] = rho[[r, c]];
            // restore for the next column
            std::mem::swap(&mut rm[subsystem], &mut cm[subsystem]);
        }
    }
    Ok(out)
}

/// Per-column residuals `‖m v_j − λ_j v_j‖₂` of a candidate decomposition.
fn eigh_residuals(m: &CMat, values: &[f64], vectors: &CMat) -> Vec<f64> {
    let n = m.nrows();
    let mv = m.dot(vectors);
    (0..n)
        .map(|col| {
            (0..n)
                .map(|i| (mv[[i, col]] - vectors[[i, col]] * values[col]).norm_sqr())
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Tiered residual certificate: eigenpairs carrying weight must be tight,
/// the near-null cluster (whose basis is gauge anyway) may be loose.
fn eigh_certified(m: &CMat, values: &[f64], vectors: &CMat, scale: f64) -> bool {
    eigh_residuals(m, values, vectors)
        .iter()
        .zip(values)
        .all(|(&r, &v)| {
            let tol = if v.abs() >= 1e-6 * scale { 1e-9 } else { 1e-5 };
            r <= tol * scale
        })
}

/// Cyclic complex Hermitian Jacobi on `b0 = v0† m v0`, rotating `v0` along.
/// Unconditionally convergent, so it repairs decompositions the QR solver
/// botches on clustered spectra. `v0` must be unitary; the off-diagonal
/// norm of the rotated matrix bounds the final residual.
fn jacobi_hermitian(m: &CMat, v0: CMat, scale: f64) -> Result<(Vec<f64>, CMat)> {
    let n = m.nrows();
    let mut v = v0;
    let mut b = dag(&v).dot(&m.dot(&v));
    // keep b exactly Hermitian; updates below preserve the structure
    for p in 0..n {
        b[[p, p]] = C64::new(b[[p, p]].re, 0.0);
        for q in p + 1..n {
            let h = 0.5 * (b[[p, q]] + b[[q, p]].conj());
            b[[p, q]] = h;
            b[[q, p]] = h.conj();
        }
    }
    let target = 1e-13 * scale;
    let skip = 1e-15 * scale;
    for _sweep in 0..40 {
        let off = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| 2.0 * b[[p, q]].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= target {
            let values: Vec<f64> = (0..n).map(|i| b[[i, i]].re).collect();
            return Ok((values, v));
        }
        for p in 0..n {
            for q in p + 1..n {
                let h = b[[p, q]];
                let habs = h.norm();
                if habs <= skip {
                    continue;
                }
                // phase factor making the pivot real, then a real rotation
                let u = h.conj() / habs;
                let tau = (b[[q, q]].re - b[[p, p]].re) / (2.0 * habs);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let app = b[[p, p]].re - t * habs;
                let aqq = b[[q, q]].re + t * habs;
                for i in 0..n {
                    if i == p || i == q {
                        continue;
                    }
                    let bip = b[[i, p]];
                    let biq = b[[i, q]];
                    let nip = bip * c - biq * (u * s);
                    let niq = bip * s + biq * (u * c);
                    b[[i, p]] = nip;
                    b[[p, i]] = nip.conj();
                    b[[i, q]] = niq;
                    b[[q, i]] = niq.conj();
                }
                b[[p, p]] = C64::new(app, 0.0);
                b[[q, q]] = C64::new(aqq, 0.0);
                b[[p, q]] = C64::new(0.0, 0.0);
                b[[q, p]] = C64::new(0.0, 0.0);
                for i in 0..n {
                    let vip = v[[i, p]];
                    let viq = v[[i, q]];
                    v[[i, p]] = vip * c - viq * (u * s);
                    v[[i, q]] = vip * s + viq * (u * c);
                }
            }
        }
    }
    Err(Error::Numerical(format!(
        "jacobi eigensolver did not converge in 40 sweeps (scale {scale:.3e})"
    )))
}

/// Hermitian eigendecomposition with a deterministic output convention:
/// eigenvalues ascending (stable on ties), eigenvectors orthonormal in the
/// matching column order, each phased so its largest-modulus entry is real
/// and positive. Decompositions failing the tiered residual certificate
/// (the QR iteration degrades on the clustered spectra of decohered
/// density matrices) are refined by a Jacobi pass before returning.
pub fn eigh(m: &CMat) -> Result<(nd::Array1<f64>, CMat)> {
    use nalgebra as na;
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Shape("eigh requires a square matrix".into()));
    }
    let scale = frob_norm(m).max(1.0);
    let herm_defect = frob_norm(&(m - &dag(m)));
    if herm_defect > 1e-10 * scale {
        return Err(Error::Numerical(format!(
            "eigh input not Hermitian: defect {herm_defect:.3e} (scale {scale:.3e})"
        )));
    }
    let dm = na::DMatrix::from_fn(n, n, |i, j| m[[i, j]]);
    let se = dm.symmetric_eigen();
    let mut raw_values: Vec<f64> = (0..n).map(|i| se.eigenvalues[i]).collect();
    let mut raw_vectors = CMat::from_shape_fn((n, n), |(i, j)| se.eigenvectors[(i, j)]);

    if !eigh_certified(m, &raw_values, &raw_vectors, scale) {
        // Householder accumulation keeps the basis unitary even when the
        // pairing breaks down, so it warm-starts the Jacobi pass; fall back
        // to the identity if that assumption ever fails.
        let gram = frob_norm(&(dag(&raw_vectors).dot(&raw_vectors) - identity(n)));
        let v0 = if gram <= 1e-10 * (n as f64).sqrt() {
            raw_vectors
        } else {
            identity(n)
        };
        let (jv, jw) = jacobi_hermitian(m, v0, scale)?;
        raw_values = jv;
        raw_vectors = jw;
        if !eigh_certified(m, &raw_values, &raw_vectors, scale) {
            let worst = eigh_residuals(m, &raw_values, &raw_vectors)
                .into_iter()
                .fold(0.0f64, f64::max);
            return Err(Error::Numerical(format!(
                "eigh residual {worst:.3e} exceeds tolerance after refinement \
                 (scale {scale:.3e})"
            )));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| raw_values[a].partial_cmp(&raw_values[b]).unwrap());

    let mut values = nd::Array1::<f64>::zeros(n);
    let mut vectors = CMat::zeros((n, n));
    for (col, &src) in order.iter().enumerate() {
        values[col] = raw_values[src];
        // Phase fix: rotate so the largest-modulus entry is real positive.
        let mut imax = 0;
        let mut best = -1.0f64;
        for i in 0..n {
            let v = raw_vectors[[i, src]].norm();
            if v > best {
                best = v;
                imax = i;
            }
        }
        let pivot = raw_vectors[[imax, src]];
        let phase = if pivot.norm() > 0.0 {
            pivot.conj() / pivot.norm()
        } else {
            C64::new(1.0, 0.0)
        };
        for i in 0..n {
            vectors[[i, col]] = raw_vectors[[i, src]] * phase;
        }
    }

    let gram_defect = frob_norm(&(dag(&vectors).dot(&vectors) - identity(n)));
    if gram_defect > 1e-8 * (n as f64).sqrt() {
        return Err(Error::Numerical(format!(
            "eigh vectors not orthonormal: defect {gram_defect:.3e}"
        )));
    }
    Ok((values, vectors))
}

/// True when `m - shift·I` admits a Cholesky factorization, i.e. is
/// positive definite up to roundoff. Early-exits on the first
/// non-positive pivot.
fn cholesky_succeeds(m: &CMat, shift: f64) -> bool {
    let n = m.nrows();
    let mut l = m.clone();
    for j in 0..n {
        l[[j, j]] -= C64::new(shift, 0.0);
    }
    for j in 0..n {
        let mut d = l[[j, j]].re;
        for k in 0..j {
            d -= l[[j, k]].norm_sqr();
        }
        if d <= 0.0 {
            return false;
        }
        let root = d.sqrt();
        l[[j, j]] = C64::new(root, 0.0);
        for i in j + 1..n {
            let mut s = l[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]].conj();
            }
            l[[i, j]] = s / root;
        }
    }
    true
}

/// Smallest eigenvalue of a Hermitian matrix, located by bisection on
/// shifted Cholesky factorizations. Backward stable and immune to the
/// eigenvalue clustering that degrades [`eigh`], so use this wherever a
/// certified bound matters (positivity checks).
pub fn min_eigenvalue_bound(m: &CMat) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::Shape(format!(
            "min_eigenvalue_bound needs a square matrix, got {:?}",
            m.shape()
        )));
    }
    let scale = one_norm(m);
    let defect = frob_norm(&(m - &dag(m)));
    if defect > 1e-8 * (1.0 + scale) {
        return Err(Error::Numerical(format!(
            "min_eigenvalue_bound needs a Hermitian input, defect {defect:.3e}"
        )));
    }
    if scale == 0.0 {
        return Ok(0.0);
    }
    // The 1-norm bounds the spectral radius, so λ_min ∈ [-scale, scale].
    // cholesky_succeeds(m, c) is monotone in c with its transition at
    // λ_min; fixed-count bisection keeps the result deterministic.
    let mut lo = -scale;
    let mut hi = scale;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if cholesky_succeeds(m, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * scale {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Conservation-law diagnostics for a density matrix.
#[derive(Clone, Copy, Debug)]
pub struct DensityDiagnostics {
    /// `|tr ρ - 1|`
    pub trace_error: f64,
    /// `‖ρ - ρ†‖_F`
    pub hermiticity_error: f64,
    /// Smallest eigenvalue of the Hermitian part.
    pub min_eigenvalue: f64,
}

/// Measures trace, Hermiticity, and positivity of `rho`. The eigenvalue
/// check runs on the Hermitian part `(ρ + ρ†)/2` so it stays meaningful
/// even when the Hermiticity defect is nonzero.
pub fn density_diagnostics(rho: &CMat) -> Result<DensityDiagnostics> {
    let trace_error = (trace(rho) - C64::new(1.0, 0.0)).norm();
    let hermiticity_error = frob_norm(&(rho - &dag(rho)));
    let herm_part = (rho + &dag(rho)).mapv(|z| z * 0.5);
    let min_eigenvalue = min_eigenvalue_bound(&herm_part)?;
    Ok(DensityDiagnostics {
        trace_error,
        hermiticity_error,
        min_eigenvalue,
    })
}
