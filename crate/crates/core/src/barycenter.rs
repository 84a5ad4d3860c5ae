//! Soft-DTW barycenters: class exemplars synthesized from support sets.
//!
//! The exemplar minimizes `Σₙ (wₙ/τₙ)·sdtw_γ(Φₙ, M)` over `τ̄ × C` matrices,
//! where `τ̄` is the rounded mean support length. Minimization is projected
//! gradient descent from the weighted mean of the linearly resampled supports.

use std::cmp::Ordering;

use crate::error::{arg_err, Error, Result};
use crate::numerics::Matrix;
use crate::softdtw::{soft_dtw, soft_dtw_grad, PredictionSequence};

/// Same-class support sequences with simplex weights.
#[derive(Debug, Clone)]
pub struct SupportSet {
    sequences: Vec<Matrix>,
    weights: Vec<f64>,
}

impl SupportSet {
    /// Equal weights `1/N`.
    pub fn uniform(sequences: Vec<Matrix>) -> Result<Self> {
        let n = sequences.len();
        Self::new(sequences, vec![1.0; n])
    }

    /// Weights are renormalized onto the simplex.
    pub fn new(sequences: Vec<Matrix>, weights: Vec<f64>) -> Result<Self> {
        if sequences.is_empty() {
            return arg_err("support set is empty");
        }
        if weights.len() != sequences.len() {
            return arg_err(format!(
                "{} weights for {} support sequences",
                weights.len(),
                sequences.len()
            ));
        }
        let c = sequences[0].cols();
        for (i, s) in sequences.iter().enumerate() {
            if s.rows() == 0 {
                return arg_err(format!("support sequence {i} is empty"));
            }
            if s.cols() != c {
                return arg_err(format!("support sequence {i} has {} columns, expected {c}", s.cols()));
            }
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return arg_err("support weights must be finite and nonnegative");
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return arg_err("support weights sum to zero");
        }
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(Self { sequences, weights })
    }

    pub fn from_predictions(seqs: Vec<PredictionSequence>) -> Result<Self> {
        Self::uniform(seqs.into_iter().map(PredictionSequence::into_matrix).collect())
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.sequences[0].cols()
    }

    pub fn sequences(&self) -> &[Matrix] {
        &self.sequences
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `round(mean τₙ)`, at least 1.
    pub fn mean_length(&self) -> usize {
        let total: usize = self.sequences.iter().map(Matrix::rows).sum();
        ((total as f64 / self.len() as f64).round() as usize).max(1)
    }

    /// Member indices in a canonical order that depends only on contents, so
    /// accumulations are independent of the caller's ordering.
    fn canonical_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&i, &j| {
            let (a, b) = (&self.sequences[i], &self.sequences[j]);
            a.rows()
                .cmp(&b.rows())
                .then_with(|| self.weights[i].total_cmp(&self.weights[j]))
                .then_with(|| {
                    a.as_slice()
                        .iter()
                        .zip(b.as_slice())
                        .map(|(x, y)| x.total_cmp(y))
                        .find(|o| *o != Ordering::Equal)
                        .unwrap_or(Ordering::Equal)
                })
        });
        idx
    }
}

/// A class prototype trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar {
    pub rows: Matrix,
    pub class: Option<usize>,
}

impl Exemplar {
    pub fn length(&self) -> usize {
        self.rows.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.rows.cols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    /// Rows are projected onto the probability simplex after every step.
    Simplex,
    /// Free `τ̄ × C` iterates.
    Unconstrained,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarycenterOptions {
    pub gamma: f64,
    pub steps: usize,
    pub step_size: f64,
    pub projection: Projection,
}

impl Default for BarycenterOptions {
    fn default() -> Self {
        Self { gamma: 0.1, steps: 200, step_size: 0.1, projection: Projection::Simplex }
    }
}

#[derive(Debug, Clone)]
pub struct BarycenterResult {
    pub exemplar: Exemplar,
    pub initial_objective: f64,
    pub final_objective: f64,
    /// Objective of every accepted iterate, starting with the initializer.
    pub trace: Vec<f64>,
}

/// Linear interpolation of rows at `new_length` evenly spaced positions,
/// each output row renormalized to sum to 1.
pub fn resample_linear(seq: &PredictionSequence, new_length: usize) -> Result<PredictionSequence> {
    if new_length == 0 {
        return arg_err("resample length must be >= 1");
    }
    PredictionSequence::new(resample_rows(seq.as_matrix(), new_length, true))
}

pub(crate) fn resample_rows(m: &Matrix, new_length: usize, renormalize: bool) -> Matrix {
    let tau = m.rows();
    let c = m.cols();
    let mut out = Matrix::zeros(new_length, c);
    for k in 0..new_length {
        let pos = if new_length == 1 {
            (tau - 1) as f64 / 2.0
        } else {
            k as f64 * (tau - 1) as f64 / (new_length - 1) as f64
        };
        let lo = (pos.floor() as usize).min(tau - 1);
        let hi = (lo + 1).min(tau - 1);
        let frac = pos - lo as f64;
        let row = out.row_mut(k);
        if frac == 0.0 || lo == hi {
            row.copy_from_slice(m.row(lo));
        } else {
            for (j, v) in row.iter_mut().enumerate() {
                let a = m[(lo, j)];
                *v = a + frac * (m[(hi, j)] - a);
            }
        }
        if renormalize {
            let s: f64 = row.iter().sum();
            if s > 0.0 && s != 1.0 {
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
    }
    out
}

/// Euclidean projection of `v` onto `{x ≥ 0, Σx = 1}` (sort and threshold).
pub fn project_simplex(v: &mut [f64]) {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter_mut().for_each(|x| *x = (*x - theta).max(0.0));
}

fn project_rows(m: &mut Matrix) {
    for i in 0..m.rows() {
        project_simplex(m.row_mut(i));
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return arg_err(format!("barycenter gamma must be finite and > 0, got {gamma}"));
    }
    Ok(())
}

/// `Σₙ (wₙ/τₙ)·sdtw_γ(Φₙ, M)`.
pub fn barycenter_objective(support: &SupportSet, m: &Matrix, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if m.cols() != support.num_classes() {
        return arg_err(format!(
            "exemplar has {} columns, support has {}",
            m.cols(),
            support.num_classes()
        ));
    }
    let mut total = 0.0;
    for i in support.canonical_order() {
        let s = &support.sequences[i];
        total += support.weights[i] / s.rows() as f64 * soft_dtw(s, m, gamma)?;
    }
    Ok(total)
}

fn objective_and_grad(support: &SupportSet, order: &[usize], m: &Matrix, gamma: f64) -> Result<(f64, Matrix)> {
    let mut value = 0.0;
    let mut grad = Matrix::zeros(m.rows(), m.cols());
    for &i in order {
        let s = &support.sequences[i];
        let scale = support.weights[i] / s.rows() as f64;
        let g = soft_dtw_grad(s, m, gamma)?;
        value += scale * g.value;
        grad.add_scaled(&g.grad_b, scale);
    }
    Ok((value, grad))
}

/// Projected gradient descent on the barycenter objective.
///
/// A step that fails to lower the objective is rejected and the step size
/// halved, so accepted iterates have a non-increasing objective and the
/// returned exemplar is the best one seen.
pub fn barycenter(support: &SupportSet, opts: &BarycenterOptions) -> Result<BarycenterResult> {
    check_gamma(opts.gamma)?;
    if opts.steps == 0 {
        return arg_err("barycenter needs steps >= 1");
    }
    if !(opts.step_size > 0.0 && opts.step_size.is_finite()) {
        return arg_err(format!("step_size must be > 0, got {}", opts.step_size));
    }
    let order = support.canonical_order();
    let len = support.mean_length();
    let c = support.num_classes();
    let simplex = opts.projection == Projection::Simplex;

    let mut m = Matrix::zeros(len, c);
    for &i in &order {
        let r = resample_rows(&support.sequences[i], len, simplex);
        m.add_scaled(&r, support.weights[i]);
    }
    if simplex {
        project_rows(&mut m);
    }

    let (mut obj, mut grad) = objective_and_grad(support, &order, &m, opts.gamma)?;
    if !obj.is_finite() {
        return Err(Error::Numerical("barycenter objective is not finite at initialization".into()));
    }
    let initial = obj;
    let mut trace = vec![obj];
    let mut eta = opts.step_size;
    for step in 0..opts.steps {
        if !grad.all_finite() {
            return Err(Error::Numerical(format!("non-finite barycenter gradient at step {step}")));
        }
        let mut cand = m.clone();
        cand.add_scaled(&grad, -eta);
        if simplex {
            project_rows(&mut cand);
        }
        let (cobj, cgrad) = objective_and_grad(support, &order, &cand, opts.gamma)?;
        if !cobj.is_finite() {
            return Err(Error::Numerical(format!("non-finite barycenter objective at step {step}")));
        }
        if cobj <= obj {
            m = cand;
            obj = cobj;
            grad = cgrad;
            trace.push(obj);
        } else {
            eta *= 0.5;
        }
    }
    Ok(BarycenterResult {
        exemplar: Exemplar { rows: m, class: None },
        initial_objective: initial,
        final_objective: obj,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn ps(rows: &[&[f64]]) -> PredictionSequence {
        PredictionSequence::new(Matrix::from_rows(rows).unwrap()).unwrap()
    }

    fn random_stochastic(rng: &mut Rng, tau: usize, c: usize) -> Matrix {
        let mut out = Matrix::zeros(tau, c);
        for t in 0..tau {
            let row: Vec<f64> = (0..c).map(|_| rng.uniform() + 0.05).collect();
            let s: f64 = row.iter().sum();
            for k in 0..c {
                out[(t, k)] = row[k] / s;
            }
        }
        out
    }

    #[test]
    fn resample_examples() {
        let s = ps(&[&[0.2, 0.8], &[0.6, 0.4], &[0.9, 0.1]]);
        let r = resample_linear(&s, 3).unwrap();
        assert!(r.as_matrix().max_abs_diff(s.as_matrix()) < 1e-15);
        let c = ps(&[&[0.3, 0.7], &[0.3, 0.7]]);
        let r = resample_linear(&c, 5).unwrap();
        for t in 0..5 {
            assert!((r.as_matrix()[(t, 0)] - 0.3).abs() < 1e-15);
        }
        let r = resample_linear(&ps(&[&[1.0, 0.0], &[0.0, 1.0]]), 3).unwrap();
        assert_eq!(r.as_matrix().row(1), &[0.5, 0.5]);
        assert!(resample_linear(&c, 0).is_err());
    }

    #[test]
    fn simplex_projection() {
        let mut v = vec![0.5, 0.5];
        project_simplex(&mut v);
        assert_eq!(v, vec![0.5, 0.5]);
        let mut v = vec![2.0, 0.0];
        project_simplex(&mut v);
        assert_eq!(v, vec![1.0, 0.0]);
        let mut v = vec![0.4, 0.4, -0.2];
        project_simplex(&mut v);
        assert!((v[0] - 0.5).abs() < 1e-15 && (v[1] - 0.5).abs() < 1e-15 && v[2] == 0.0);
    }

    #[test]
    fn weights_are_renormalized() {
        let a = Matrix::from_rows(&[[0.5, 0.5]]).unwrap();
        let s = SupportSet::new(vec![a.clone(), a.clone()], vec![3.0, 1.0]).unwrap();
        assert_eq!(s.weights(), &[0.75, 0.25]);
        assert!(SupportSet::new(vec![a.clone()], vec![0.0]).is_err());
        assert!(SupportSet::uniform(vec![]).is_err());
        assert!(SupportSet::new(vec![a], vec![-1.0]).is_err());
    }

    #[test]
    fn self_barycenter() {
        let mut rng = Rng::new(1);
        let seq = random_stochastic(&mut rng, 6, 3);
        let support = SupportSet::uniform(vec![seq.clone()]).unwrap();
        let opts = BarycenterOptions { gamma: 0.01, ..Default::default() };
        let res = barycenter(&support, &opts).unwrap();
        assert!(res.final_objective <= 1e-6);
        assert!(res.exemplar.rows.max_abs_diff(&seq) < 0.05);
        // identical pair behaves the same
        let twin = SupportSet::uniform(vec![seq.clone(), seq.clone()]).unwrap();
        let res2 = barycenter(&twin, &opts).unwrap();
        assert!(res2.final_objective <= 1e-6);
        assert!(res2.exemplar.rows.max_abs_diff(&seq) < 0.05);
    }

    #[test]
    fn objective_at_small_gamma() {
        let mut rng = Rng::new(2);
        let seq = random_stochastic(&mut rng, 5, 2);
        let support = SupportSet::uniform(vec![seq.clone()]).unwrap();
        let v = barycenter_objective(&support, &seq, 1e-4).unwrap();
        assert!(v < 1e-3);
        assert!(barycenter_objective(&support, &Matrix::zeros(5, 3), 0.1).is_err());
    }

    #[test]
    fn two_point_barycenter_matches_grid_search() {
        let a = Matrix::from_rows(&[[0.8, 0.2]]).unwrap();
        let b = Matrix::from_rows(&[[0.6, 0.4]]).unwrap();
        let support = SupportSet::uniform(vec![a, b]).unwrap();
        let gamma = 0.01;
        // dense grid over the 1-simplex
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..=100_000 {
            let p = k as f64 / 100_000.0;
            let m = Matrix::from_rows(&[[p, 1.0 - p]]).unwrap();
            let v = barycenter_objective(&support, &m, gamma).unwrap();
            if v < best.0 {
                best = (v, p);
            }
        }
        assert!((best.1 - 0.7).abs() < 1e-4);
        let res = barycenter(&support, &BarycenterOptions { gamma, ..Default::default() }).unwrap();
        assert!((res.exemplar.rows[(0, 0)] - best.1).abs() < 1e-3);
        assert!((res.exemplar.rows[(0, 1)] - (1.0 - best.1)).abs() < 1e-3);
    }

    #[test]
    fn trace_is_monotone_and_beats_members() {
        let mut rng = Rng::new(9);
        for _ in 0..10 {
            let n = 2 + rng.below(3);
            let seqs: Vec<Matrix> = (0..n)
                .map(|_| {
                    let tau = 3 + rng.below(5);
                    random_stochastic(&mut rng, tau, 3)
                })
                .collect();
            let support = SupportSet::uniform(seqs.clone()).unwrap();
            let opts = BarycenterOptions::default();
            let res = barycenter(&support, &opts).unwrap();
            assert!(res.trace.windows(2).all(|w| w[1] <= w[0]));
            assert!(res.final_objective <= res.initial_objective);
            let len = support.mean_length();
            for s in &seqs {
                let cand = resample_rows(s, len, true);
                let v = barycenter_objective(&support, &cand, opts.gamma).unwrap();
                assert!(res.final_objective <= v + 1e-12);
            }
            for t in 0..res.exemplar.length() {
                let row = res.exemplar.rows.row(t);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(row.iter().all(|v| *v >= 0.0));
            }
        }
    }

    #[test]
    fn permutation_invariant() {
        let mut rng = Rng::new(4);
        let seqs: Vec<Matrix> = (0..4).map(|i| random_stochastic(&mut rng, 4 + i, 3)).collect();
        let w = vec![0.1, 0.2, 0.3, 0.4];
        let a = SupportSet::new(seqs.clone(), w.clone()).unwrap();
        let perm = [2, 0, 3, 1];
        let b = SupportSet::new(
            perm.iter().map(|&i| seqs[i].clone()).collect(),
            perm.iter().map(|&i| w[i]).collect(),
        )
        .unwrap();
        let opts = BarycenterOptions { steps: 30, ..Default::default() };
        let ra = barycenter(&a, &opts).unwrap();
        let rb = barycenter(&b, &opts).unwrap();
        assert_eq!(ra.exemplar, rb.exemplar);
        assert_eq!(ra.final_objective.to_bits(), rb.final_objective.to_bits());
    }

    #[test]
    fn mean_length_rounds() {
        let s = |t| Matrix::filled(t, 2, 0.5);
        assert_eq!(SupportSet::uniform(vec![s(3), s(4)]).unwrap().mean_length(), 4);
        assert_eq!(SupportSet::uniform(vec![s(3), s(3), s(4)]).unwrap().mean_length(), 3);
    }

    #[test]
    fn unconstrained_mode_runs() {
        let a = Matrix::from_rows(&[[2.0, -1.0], [3.0, 0.5]]).unwrap();
        let support = SupportSet::uniform(vec![a.clone()]).unwrap();
        let opts = BarycenterOptions { projection: Projection::Unconstrained, gamma: 0.01, ..Default::default() };
        let res = barycenter(&support, &opts).unwrap();
        assert!(res.exemplar.rows.max_abs_diff(&a) < 0.05);
    }
}
