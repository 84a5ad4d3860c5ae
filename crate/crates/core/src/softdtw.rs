//! Soft dynamic time warping between prediction trajectories.
//!
//! The value is the forward recursion
//! `r(i,j) = D(i,j) + softmin_γ(r(i−1,j), r(i,j−1), r(i−1,j−1))` with
//! `r(0,0) = 0` and `+∞` borders, where `D` holds squared Euclidean distances
//! between rows. This equals SoftMin over the costs `⟨Π, D⟩` of every monotone
//! alignment path. At `γ = 0` it is classical DTW.
//!
//! The functions accept any pair of matrices with equal column counts (rows
//! are time steps); [`PredictionSequence`] is the validated row-stochastic
//! wrapper used at module boundaries.

use crate::error::{arg_err, Result};
use crate::numerics::{softmin_unchecked, softmin_weights_into, sq_dist, Matrix};

/// Tolerance on row sums for a row-stochastic trajectory.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// A `τ × C` trajectory of class-probability rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSequence(Matrix);

impl PredictionSequence {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() == 0 {
            return arg_err("prediction sequence needs at least one row");
        }
        if m.cols() < 2 {
            return arg_err(format!("prediction sequence needs >= 2 classes, got {}", m.cols()));
        }
        for (t, row) in m.row_iter().enumerate() {
            if row.iter().any(|v| *v < 0.0) {
                return arg_err(format!("row {t} has a negative entry"));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return arg_err(format!("row {t} sums to {s}, expected 1"));
            }
        }
        Ok(Self(m))
    }

    pub fn tau(&self) -> usize {
        self.0.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.0.cols()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

impl AsRef<Matrix> for PredictionSequence {
    fn as_ref(&self) -> &Matrix {
        &self.0
    }
}

/// `D[m][n] = ‖a_m − b_n‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(Matrix);

impl DistanceMatrix {
    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.0[(m, n)]
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }
}

/// Monotone unit-step path from `(0,0)` to `(τ−1, τ'−1)` (0-based indices).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentPath {
    steps: Vec<(usize, usize)>,
}

impl AlignmentPath {
    pub fn new(steps: Vec<(usize, usize)>, tau_a: usize, tau_b: usize) -> Result<Self> {
        if steps.first() != Some(&(0, 0)) {
            return arg_err("alignment path must start at (0,0)");
        }
        if steps.last() != Some(&(tau_a.wrapping_sub(1), tau_b.wrapping_sub(1))) {
            return arg_err("alignment path must end at (tau-1, tau'-1)");
        }
        for w in steps.windows(2) {
            let (di, dj) = (w[1].0.wrapping_sub(w[0].0), w[1].1.wrapping_sub(w[0].1));
            if !matches!((di, dj), (1, 0) | (0, 1) | (1, 1)) {
                return arg_err(format!("invalid step {:?} -> {:?}", w[0], w[1]));
            }
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[(usize, usize)] {
        &self.steps
    }

    /// `⟨Π, D⟩`.
    pub fn cost(&self, d: &DistanceMatrix) -> f64 {
        self.steps.iter().fold(0.0, |acc, &(i, j)| d.get(i, j) + acc)
    }
}

fn check_pair(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.cols() != b.cols() {
        return arg_err(format!(
            "class-count mismatch: {} vs {} columns",
            a.cols(),
            b.cols()
        ));
    }
    if a.rows() == 0 || b.rows() == 0 {
        return arg_err("soft-DTW needs non-empty sequences");
    }
    Ok(())
}

fn check_gamma(gamma: f64, allow_zero: bool) -> Result<()> {
    let ok = gamma.is_finite() && if allow_zero { gamma >= 0.0 } else { gamma > 0.0 };
    if !ok {
        let req = if allow_zero { ">= 0" } else { "> 0" };
        return arg_err(format!("gamma must be finite and {req}, got {gamma}"));
    }
    Ok(())
}

pub fn distance_matrix(a: &Matrix, b: &Matrix) -> Result<DistanceMatrix> {
    check_pair(a, b)?;
    Ok(DistanceMatrix(raw_distances(a, b)))
}

fn raw_distances(a: &Matrix, b: &Matrix) -> Matrix {
    let mut d = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        let ai = a.row(i);
        for j in 0..b.rows() {
            d[(i, j)] = sq_dist(ai, b.row(j));
        }
    }
    d
}

/// Forward table with a one-cell `+∞` border: `(τ+1) × (τ'+1)`, row-major.
struct Forward {
    r: Vec<f64>,
    width: usize,
}

impl Forward {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.r[i * self.width + j]
    }
}

fn forward(d: &Matrix, gamma: f64) -> Forward {
    let (n, m) = d.shape();
    let width = m + 1;
    let mut r = vec![f64::INFINITY; (n + 1) * width];
    r[0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let preds = [r[(i - 1) * width + j], r[i * width + j - 1], r[(i - 1) * width + j - 1]];
            r[i * width + j] = d[(i - 1, j - 1)] + softmin_unchecked(&preds, gamma);
        }
    }
    Forward { r, width }
}

/// Soft-DTW value; `γ = 0` gives classical DTW.
pub fn soft_dtw(a: &Matrix, b: &Matrix, gamma: f64) -> Result<f64> {
    check_pair(a, b)?;
    check_gamma(gamma, true)?;
    let d = raw_distances(a, b);
    let f = forward(&d, gamma);
    Ok(f.at(a.rows(), b.rows()))
}

/// Value, gradients and the expected-alignment (occupancy) matrix.
#[derive(Debug, Clone)]
pub struct SoftDtwGrad {
    pub value: f64,
    pub grad_a: Matrix,
    pub grad_b: Matrix,
    /// `E(i,j) = ∂value/∂D(i,j)`, the soft occupancy of cell `(i,j)`.
    pub occupancy: Matrix,
}

/// Soft-DTW with exact gradients with respect to both sequences. Requires
/// `γ > 0`.
pub fn soft_dtw_grad(a: &Matrix, b: &Matrix, gamma: f64) -> Result<SoftDtwGrad> {
    check_pair(a, b)?;
    check_gamma(gamma, false)?;
    let d = raw_distances(a, b);
    let f = forward(&d, gamma);
    let (n, m) = d.shape();
    let occupancy = occupancy_from_forward(&f, n, m, gamma);

    let c = a.cols();
    let mut grad_a = Matrix::zeros(n, c);
    let mut grad_b = Matrix::zeros(m, c);
    for i in 0..n {
        let ai = a.row(i);
        for j in 0..m {
            let e = occupancy[(i, j)];
            if e == 0.0 {
                continue;
            }
            let bj = b.row(j);
            for k in 0..c {
                let g = 2.0 * e * (ai[k] - bj[k]);
                grad_a[(i, k)] += g;
                grad_b[(j, k)] -= g;
            }
        }
    }
    Ok(SoftDtwGrad { value: f.at(n, m), grad_a, grad_b, occupancy })
}

/// Reverse pass: each cell hands its occupancy back to its three forward
/// predecessors in proportion to their SoftMin weights.
fn occupancy_from_forward(f: &Forward, n: usize, m: usize, gamma: f64) -> Matrix {
    // (n+1) x (m+1) with the border row/column absorbing zero mass
    let width = m + 1;
    let mut e = vec![0.0; (n + 1) * width];
    e[n * width + m] = 1.0;
    let mut w = [0.0; 3];
    for i in (1..=n).rev() {
        for j in (1..=m).rev() {
            let here = e[i * width + j];
            if here == 0.0 {
                continue;
            }
            let preds = [f.at(i - 1, j), f.at(i, j - 1), f.at(i - 1, j - 1)];
            softmin_weights_into(&preds, gamma, &mut w);
            e[(i - 1) * width + j] += here * w[0];
            e[i * width + j - 1] += here * w[1];
            e[(i - 1) * width + j - 1] += here * w[2];
        }
    }
    let mut out = Matrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            out[(i, j)] = e[(i + 1) * width + j + 1];
        }
    }
    out
}

/// Longest sequence [`dtw_bruteforce`] will enumerate.
pub const BRUTEFORCE_MAX_LEN: usize = 10;

/// Classical DTW by enumerating every alignment path. Test oracle.
pub fn dtw_bruteforce(a: &Matrix, b: &Matrix) -> Result<f64> {
    check_pair(a, b)?;
    if a.rows() > BRUTEFORCE_MAX_LEN || b.rows() > BRUTEFORCE_MAX_LEN {
        return arg_err(format!(
            "dtw_bruteforce limited to lengths <= {BRUTEFORCE_MAX_LEN}, got {} and {}",
            a.rows(),
            b.rows()
        ));
    }
    let d = raw_distances(a, b);
    let mut best = f64::INFINITY;
    // accumulate as D(k) + acc, matching the forward recursion's operand order
    fn walk(d: &Matrix, i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = d[(i, j)] + acc;
        let (n, m) = d.shape();
        if i + 1 == n && j + 1 == m {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        if i + 1 < n {
            walk(d, i + 1, j, acc, best);
        }
        if j + 1 < m {
            walk(d, i, j + 1, acc, best);
        }
        if i + 1 < n && j + 1 < m {
            walk(d, i + 1, j + 1, acc, best);
        }
    }
    walk(&d, 0, 0, 0.0, &mut best);
    Ok(best)
}

/// Enumerates all alignment paths for lengths `τ, τ'` (each ≤
/// [`BRUTEFORCE_MAX_LEN`]).
pub fn enumerate_paths(tau_a: usize, tau_b: usize) -> Result<Vec<AlignmentPath>> {
    if tau_a == 0 || tau_b == 0 || tau_a > BRUTEFORCE_MAX_LEN || tau_b > BRUTEFORCE_MAX_LEN {
        return arg_err(format!("cannot enumerate paths for lengths {tau_a}, {tau_b}"));
    }
    let mut out = Vec::new();
    let mut cur = vec![(0, 0)];
    fn rec(i: usize, j: usize, n: usize, m: usize, cur: &mut Vec<(usize, usize)>, out: &mut Vec<AlignmentPath>) {
        if i + 1 == n && j + 1 == m {
            out.push(AlignmentPath { steps: cur.clone() });
            return;
        }
        for (di, dj) in [(1, 0), (0, 1), (1, 1)] {
            let (ni, nj) = (i + di, j + dj);
            if ni < n && nj < m {
                cur.push((ni, nj));
                rec(ni, nj, n, m, cur, out);
                cur.pop();
            }
        }
    }
    rec(0, 0, tau_a, tau_b, &mut cur, &mut out);
    Ok(out)
}

/// `|P_{τ,τ'}|`, the Delannoy number `D(τ−1, τ'−1)`, as a float.
pub fn path_count(tau_a: usize, tau_b: usize) -> f64 {
    if tau_a == 0 || tau_b == 0 {
        return 0.0;
    }
    let (n, m) = (tau_a, tau_b);
    let mut t = vec![vec![0.0f64; m]; n];
    for i in 0..n {
        for j in 0..m {
            t[i][j] = if i == 0 || j == 0 {
                1.0
            } else {
                t[i - 1][j] + t[i][j - 1] + t[i - 1][j - 1]
            };
        }
    }
    t[n - 1][m - 1]
}
