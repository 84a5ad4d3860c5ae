//! Dense matrices, the SoftMin operator, spectral norms and seeded randomness.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};

/// Dense row-major matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return arg_err(format!(
                "matrix data has length {}, expected {rows}x{cols}={}",
                data.len(),
                rows * cols
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return arg_err(format!("matrix entry {pos} is not finite ({})", data[pos]));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        if rows.is_empty() {
            return arg_err("matrix needs at least one row");
        }
        let cols = rows[0].as_ref().len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return arg_err(format!("row {i} has length {}, expected {cols}", r.len()));
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Matrix, scale: f64) {
        assert_eq!(self.shape(), other.shape(), "add_scaled shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `y = self · x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        self.row_iter().map(|r| dot(r, x)).collect()
    }

    /// `y = selfᵀ · x`.
    pub fn mul_vec_transposed(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows);
        let mut y = vec![0.0; self.cols];
        for (r, &xi) in self.row_iter().zip(x) {
            for (yj, &rj) in y.iter_mut().zip(r) {
                *yj += rj * xi;
            }
        }
        y
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `−γ·log Σᵢ exp(−αᵢ/γ)`, evaluated as `m − γ·log Σᵢ exp(−(αᵢ−m)/γ)` with
/// `m = min α`. `γ = 0` returns the exact minimum. `+∞` entries contribute
/// nothing; an all-`+∞` input returns `+∞`.
pub fn softmin(values: &[f64], gamma: f64) -> Result<f64> {
    check_softmin_args(values, gamma)?;
    Ok(softmin_unchecked(values, gamma))
}

fn check_softmin_args(values: &[f64], gamma: f64) -> Result<()> {
    if values.is_empty() {
        return arg_err("softmin of an empty list");
    }
    if values.iter().any(|v| v.is_nan() || *v == f64::NEG_INFINITY) {
        return arg_err("softmin input contains NaN or -inf");
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return arg_err(format!("gamma must be finite and >= 0, got {gamma}"));
    }
    Ok(())
}

#[inline]
pub(crate) fn softmin_unchecked(values: &[f64], gamma: f64) -> f64 {
    let m = values.iter().copied().fold(f64::INFINITY, f64::min);
    if gamma == 0.0 || m == f64::INFINITY {
        return m;
    }
    let s: f64 = values.iter().map(|&v| (-(v - m) / gamma).exp()).sum();
    m - gamma * s.ln()
}

/// Gibbs weights `exp(−(αᵢ−m)/γ) / Σⱼ exp(−(αⱼ−m)/γ)`: the gradient of
/// [`softmin`] with respect to its inputs. Requires `γ > 0`.
pub fn softmin_weights(values: &[f64], gamma: f64) -> Result<Vec<f64>> {
    check_softmin_args(values, gamma)?;
    if gamma == 0.0 {
        return arg_err("softmin_weights needs gamma > 0 (hard min has no unique gradient)");
    }
    let mut out = vec![0.0; values.len()];
    softmin_weights_into(values, gamma, &mut out);
    Ok(out)
}

#[inline]
pub(crate) fn softmin_weights_into(values: &[f64], gamma: f64, out: &mut [f64]) {
    let m = values.iter().copied().fold(f64::INFINITY, f64::min);
    if m == f64::INFINITY {
        out.iter_mut().for_each(|w| *w = 0.0);
        return;
    }
    let mut s = 0.0;
    for (w, &v) in out.iter_mut().zip(values) {
        *w = (-(v - m) / gamma).exp();
        s += *w;
    }
    out.iter_mut().for_each(|w| *w /= s);
}

pub const SPECTRAL_DEFAULT_ITERATIONS: usize = 1000;
pub const SPECTRAL_DEFAULT_TOL: f64 = 1e-10;
const SPECTRAL_START_SEED: u64 = 0x5EED_0F_5BEC;

/// Largest singular value by power iteration on `mᵀm` from a fixed seeded
/// start vector. The returned value is `‖m·v‖` for a unit `v`, so it never
/// exceeds the true spectral norm.
pub fn spectral_norm(m: &Matrix, iterations: usize, tol: f64) -> Result<f64> {
    if m.is_empty() {
        return arg_err("spectral_norm of an empty matrix");
    }
    if !(tol > 0.0) {
        return arg_err(format!("tol must be positive, got {tol}"));
    }
    let mut rng = Rng::new(SPECTRAL_START_SEED);
    let mut v: Vec<f64> = (0..m.cols()).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let n = norm2(&v);
    v.iter_mut().for_each(|x| *x /= n);

    let mut sigma = norm2(&m.mul_vec(&v));
    for _ in 0..iterations.max(1) {
        let u = m.mul_vec(&v);
        let mut w = m.mul_vec_transposed(&u);
        let wn = norm2(&w);
        if wn == 0.0 {
            return Ok(0.0);
        }
        w.iter_mut().for_each(|x| *x /= wn);
        let next = norm2(&m.mul_vec(&w));
        v = w;
        let done = (next - sigma).abs() < tol;
        sigma = next;
        if done {
            break;
        }
    }
    if !sigma.is_finite() {
        return Err(Error::Numerical("spectral_norm diverged".into()));
    }
    Ok(sigma)
}

pub fn spectral_norm_default(m: &Matrix) -> Result<f64> {
    spectral_norm(m, SPECTRAL_DEFAULT_ITERATIONS, SPECTRAL_DEFAULT_TOL)
}

/// Seeded generator: ChaCha with 8 rounds (`rand_chacha::ChaCha8Rng`), a
/// counter-based stream cipher whose output depends only on the seed, so
/// streams are identical across platforms.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Independent sub-stream keyed by `(master_seed, key)`.
    pub fn derive(master_seed: u64, key: &str) -> Self {
        Self::new(derive_seed(master_seed, key))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Raw 64-bit draw, used to fork master seeds.
    pub fn next_seed(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        use rand::Rng as _;
        self.inner.sample(rand_distr::StandardNormal)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        use rand::Rng as _;
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }

    /// `k` distinct indices from `0..n`, in sampled order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, n, k).into_vec()
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// FNV-1a over the key followed by a SplitMix64 finalizer mixed with the
/// master seed.
pub fn derive_seed(master_seed: u64, key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(master_seed ^ splitmix64(h))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::numerics::Rng;

    #[test]
    fn softmin_examples() {
        assert_eq!(softmin(&[5.0], 0.7).unwrap(), 5.0);
        let v = softmin(&[0.0, 0.0], 0.1).unwrap();
        assert!((v + 0.1 * 2f64.ln()).abs() < 1e-15);
        assert!((v + 0.0693147).abs() < 1e-7);
        let v = softmin(&[1.0, 2.0, 3.0], 1e-6).unwrap();
        assert!((v - 1.0).abs() < 1e-5);
        assert_eq!(softmin(&[3.0, 1.0, 2.0], 0.0).unwrap(), 1.0);
    }

    #[test]
    fn softmin_errors() {
        assert!(softmin(&[], 0.1).is_err());
        assert!(softmin(&[1.0, f64::NAN], 0.1).is_err());
        assert!(softmin(&[1.0], -0.1).is_err());
        assert_eq!(softmin(&[f64::INFINITY, 2.0], 0.5).unwrap(), 2.0);
    }

    #[test]
    fn softmin_weights_examples() {
        assert_eq!(softmin_weights(&[0.0, 0.0], 0.5).unwrap(), vec![0.5, 0.5]);
        assert_eq!(softmin_weights(&[3.3], 0.2).unwrap(), vec![1.0]);
        let w = softmin_weights(&[0.0, 10.0], 0.1).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-6 && w[1].abs() < 1e-6);
        assert!(softmin_weights(&[1.0, 2.0], 0.0).is_err());
    }

    #[test]
    fn spectral_norm_examples() {
        let s = spectral_norm_default(&Matrix::identity(3)).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
        let d = Matrix::from_rows(&[[3.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!((spectral_norm_default(&d).unwrap() - 3.0).abs() < 1e-9);
        assert_eq!(spectral_norm_default(&Matrix::zeros(2, 3)).unwrap(), 0.0);
        assert!(spectral_norm_default(&Matrix::zeros(0, 0)).is_err());
    }

    /// One-sided Jacobi SVD: orthogonalize column pairs until convergence;
    /// singular values are the final column norms.
    fn jacobi_singular_values(m: &Matrix) -> Vec<f64> {
        let mut a = m.clone();
        let n = a.cols();
        for _sweep in 0..100 {
            let mut off = 0.0f64;
            for p in 0..n {
                for q in p + 1..n {
                    let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                    for i in 0..a.rows() {
                        alpha += a[(i, p)] * a[(i, p)];
                        beta += a[(i, q)] * a[(i, q)];
                        gamma += a[(i, p)] * a[(i, q)];
                    }
                    if gamma.abs() < 1e-300 {
                        continue;
                    }
                    off = off.max(gamma.abs() / (alpha * beta).sqrt());
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let t = if zeta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for i in 0..a.rows() {
                        let ap = a[(i, p)];
                        let aq = a[(i, q)];
                        a[(i, p)] = c * ap - s * aq;
                        a[(i, q)] = s * ap + c * aq;
                    }
                }
            }
            if off < 1e-15 {
                break;
            }
        }
        let mut sv: Vec<f64> = (0..n)
            .map(|j| (0..a.rows()).map(|i| a[(i, j)] * a[(i, j)]).sum::<f64>().sqrt())
            .collect();
        sv.sort_by(|x, y| y.total_cmp(x));
        sv
    }

    #[test]
    fn spectral_norm_matches_jacobi_svd() {
        let mut rng = Rng::new(11);
        for _ in 0..20 {
            let data: Vec<f64> = (0..20).map(|_| rng.normal()).collect();
            let m = Matrix::from_vec(4, 5, data).unwrap();
            let oracle = jacobi_singular_values(&m.transpose())[0];
            let est = spectral_norm_default(&m).unwrap();
            assert!((est - oracle).abs() < 1e-6, "est {est} oracle {oracle}");
        }
    }

    #[test]
    fn rng_streams_repeat() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..1000 {
            assert_eq!(rand::RngCore::next_u64(&mut a), rand::RngCore::next_u64(&mut b));
        }
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_ne!(derive_seed(1, "a"), derive_seed(2, "a"));
    }

    proptest! {
        #[test]
        fn softmin_lower_bounds_min(v in prop::collection::vec(-50.0f64..50.0, 1..8), g in 1e-4f64..10.0) {
            let m = v.iter().copied().fold(f64::INFINITY, f64::min);
            let s1 = softmin(&v, g).unwrap();
            let s2 = softmin(&v, g / 2.0).unwrap();
            prop_assert!(s1 <= m + 1e-12);
            prop_assert!(s1 <= s2 + 1e-12);
            prop_assert!(s2 <= m + 1e-12);
        }

        #[test]
        fn weights_sum_to_one(v in prop::collection::vec(-1e3f64..1e3, 1..10), g in 1e-3f64..5.0) {
            let w = softmin_weights(&v, g).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|x| *x >= 0.0));
        }

        #[test]
        fn weights_are_softmin_gradient(v in prop::collection::vec(-3.0f64..3.0, 1..6), g in 0.05f64..2.0) {
            let w = softmin_weights(&v, g).unwrap();
            let h = 1e-6;
            for i in 0..v.len() {
                let mut p = v.clone();
                let mut q = v.clone();
                p[i] += h;
                q[i] -= h;
                let fd = (softmin(&p, g).unwrap() - softmin(&q, g).unwrap()) / (2.0 * h);
                let denom = fd.abs().max(w[i].abs()).max(1e-3);
                prop_assert!((fd - w[i]).abs() / denom < 1e-6, "i={} fd={} w={}", i, fd, w[i]);
            }
        }

        #[test]
        fn spectral_norm_lower_bound_witness(
            data in prop::collection::vec(-2.0f64..2.0, 12),
            probe in prop::collection::vec(-1.0f64..1.0, 4),
        ) {
            let m = Matrix::from_vec(3, 4, data).unwrap();
            let s = spectral_norm_default(&m).unwrap();
            let pn = norm2(&probe);
            prop_assume!(pn > 1e-6);
            let ratio = norm2(&m.mul_vec(&probe)) / pn;
            prop_assert!(s + 1e-9 >= ratio, "s={} ratio={}", s, ratio);
        }
    }
}
