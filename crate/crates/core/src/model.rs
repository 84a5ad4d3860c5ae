//! Frame-wise temporal classifier: `φ_t = softmax(W z_t + b)`.

use std::fmt::Write as _;

use crate::error::{arg_err, Error, Result};
use crate::numerics::{Matrix, Rng};
use crate::softdtw::PredictionSequence;

/// A `τ × d` trajectory of frame features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub id: String,
    pub frames: Matrix,
    pub label: Option<usize>,
    pub frame_labels: Option<Vec<usize>>,
}

impl FeatureSequence {
    pub fn new(id: impl Into<String>, frames: Matrix, label: Option<usize>) -> Result<Self> {
        let s = Self { id: id.into(), frames, label, frame_labels: None };
        s.validate()?;
        Ok(s)
    }

    pub fn with_frame_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        self.frame_labels = Some(labels);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames.rows() == 0 {
            return arg_err(format!("sequence {:?} has no frames", self.id));
        }
        if !self.frames.all_finite() {
            return arg_err(format!("sequence {:?} has non-finite features", self.id));
        }
        if let Some(fl) = &self.frame_labels {
            if fl.len() != self.frames.rows() {
                return arg_err(format!(
                    "sequence {:?}: {} frame labels for {} frames",
                    self.id,
                    fl.len(),
                    self.frames.rows()
                ));
            }
        }
        Ok(())
    }

    pub fn tau(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }
}

/// `W ∈ R^{C×d}`, `b ∈ R^C`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Gradients with the same shapes as [`ClassifierParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl ParamGrads {
    pub fn zeros(c: usize, d: usize) -> Self {
        Self { weight: Matrix::zeros(c, d), bias: vec![0.0; c] }
    }

    pub fn accumulate(&mut self, other: &ParamGrads) {
        self.weight.add_scaled(&other.weight, 1.0);
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

pub const DEFAULT_INIT_SCALE: f64 = 0.01;
const PARAMS_MAGIC: &str = "seqtraj-params";
const PARAMS_VERSION: &str = "v1";

pub fn init_params(c: usize, d: usize, scale: f64, rng: &mut Rng) -> Result<ClassifierParams> {
    if c < 2 || d < 1 {
        return arg_err(format!("need C >= 2 and d >= 1, got C={c} d={d}"));
    }
    let weight: Vec<f64> = (0..c * d)
        .map(|_| if scale == 0.0 { 0.0 } else { rng.uniform_range(-scale, scale) })
        .collect();
    Ok(ClassifierParams { weight: Matrix::from_vec(c, d, weight)?, bias: vec![0.0; c] })
}

/// Max-shifted softmax in place.
pub fn softmax_in_place(u: &mut [f64]) {
    let m = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in u.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    u.iter_mut().for_each(|v| *v /= s);
}

impl ClassifierParams {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weight.rows() != bias.len() {
            return arg_err(format!("weight has {} rows, bias has {} entries", weight.rows(), bias.len()));
        }
        if weight.rows() < 2 || weight.cols() < 1 {
            return arg_err(format!("need C >= 2 and d >= 1, got {:?}", weight.shape()));
        }
        if !weight.all_finite() || bias.iter().any(|b| !b.is_finite()) {
            return arg_err("classifier params contain non-finite values");
        }
        Ok(Self { weight, bias })
    }

    pub fn num_classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn dim(&self) -> usize {
        self.weight.cols()
    }

    fn check_frames(&self, frames: &Matrix) -> Result<()> {
        if frames.cols() != self.dim() {
            return arg_err(format!(
                "feature dimension {} does not match classifier dimension {}",
                frames.cols(),
                self.dim()
            ));
        }
        Ok(())
    }

    /// Pre-activation scores `W z_t + b`, one row per frame.
    pub fn logits(&self, frames: &Matrix) -> Result<Matrix> {
        self.check_frames(frames)?;
        let c = self.num_classes();
        let mut out = Matrix::zeros(frames.rows(), c);
        for t in 0..frames.rows() {
            let z = frames.row(t);
            let row = out.row_mut(t);
            for (k, (r, w)) in row.iter_mut().zip(self.weight.row_iter()).enumerate() {
                *r = crate::numerics::dot(w, z) + self.bias[k];
            }
        }
        Ok(out)
    }

    pub fn forward_frames(&self, frames: &Matrix) -> Result<Matrix> {
        let mut out = self.logits(frames)?;
        for t in 0..out.rows() {
            softmax_in_place(out.row_mut(t));
        }
        Ok(out)
    }

    pub fn forward(&self, z: &FeatureSequence) -> Result<PredictionSequence> {
        PredictionSequence::new(self.forward_frames(&z.frames)?)
    }

    /// Backprop of `grad_phi = ∂L/∂Φ` through softmax and the affine map.
    pub fn backward(&self, frames: &Matrix, grad_phi: &Matrix) -> Result<ParamGrads> {
        let phi = self.forward_frames(frames)?;
        self.backward_with_output(frames, &phi, grad_phi)
    }

    /// As [`backward`](Self::backward) with the forward output supplied.
    pub fn backward_with_output(&self, frames: &Matrix, phi: &Matrix, grad_phi: &Matrix) -> Result<ParamGrads> {
        self.check_frames(frames)?;
        let (c, d) = (self.num_classes(), self.dim());
        if grad_phi.shape() != (frames.rows(), c) || phi.shape() != grad_phi.shape() {
            return arg_err(format!(
                "gradient shape {:?} does not match ({}, {c})",
                grad_phi.shape(),
                frames.rows()
            ));
        }
        let mut grads = ParamGrads::zeros(c, d);
        let mut gu = vec![0.0; c];
        for t in 0..frames.rows() {
            let p = phi.row(t);
            let g = grad_phi.row(t);
            // Jᵀg with J = diag(φ) − φφᵀ
            let pg = crate::numerics::dot(p, g);
            for k in 0..c {
                gu[k] = p[k] * (g[k] - pg);
            }
            let z = frames.row(t);
            for k in 0..c {
                if gu[k] == 0.0 {
                    continue;
                }
                let wrow = grads.weight.row_mut(k);
                for (w, &zj) in wrow.iter_mut().zip(z) {
                    *w += gu[k] * zj;
                }
                grads.bias[k] += gu[k];
            }
        }
        Ok(grads)
    }

    /// Versioned text form: `seqtraj-params v1 C d`, then `C` weight rows,
    /// then one bias row; values carry 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{PARAMS_MAGIC} {PARAMS_VERSION} {} {}", self.num_classes(), self.dim());
        let fmt_row = |row: &[f64]| row.iter().map(|v| format!("{v:.16e}")).collect::<Vec<_>>().join(" ");
        for row in self.weight.row_iter() {
            let _ = writeln!(s, "{}", fmt_row(row));
        }
        let _ = writeln!(s, "{}", fmt_row(&self.bias));
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty params file".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != PARAMS_MAGIC {
            return Err(Error::Parse(format!("bad params header {header:?}")));
        }
        if parts[1] != PARAMS_VERSION {
            return Err(Error::Parse(format!("unsupported params version {}", parts[1])));
        }
        let c: usize = parts[2].parse().map_err(|_| Error::Parse(format!("bad class count {:?}", parts[2])))?;
        let d: usize = parts[3].parse().map_err(|_| Error::Parse(format!("bad dimension {:?}", parts[3])))?;
        let parse_row = |line: Option<&str>, n: usize, what: &str| -> Result<Vec<f64>> {
            let line = line.ok_or_else(|| Error::Parse(format!("missing {what} line")))?;
            let vals = line
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| Error::Parse(format!("bad number {v:?} in {what}"))))
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != n {
                return Err(Error::Parse(format!("{what} has {} values, expected {n}", vals.len())));
            }
            Ok(vals)
        };
        let mut w = Vec::with_capacity(c * d);
        for k in 0..c {
            w.extend(parse_row(lines.next(), d, &format!("weight row {k}"))?);
        }
        let bias = parse_row(lines.next(), c, "bias")?;
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::Parse("trailing content after bias line".into()));
        }
        let weight = Matrix::from_vec(c, d, w).map_err(|e| Error::Parse(e.to_string()))?;
        Self::new(weight, bias).map_err(|e| Error::Parse(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::spectral_norm_default;

    fn seq(frames: &[&[f64]]) -> FeatureSequence {
        FeatureSequence::new("s", Matrix::from_rows(frames).unwrap(), Some(0)).unwrap()
    }

    #[test]
    fn zero_params_give_uniform() {
        let p = ClassifierParams::new(Matrix::zeros(3, 2), vec![0.0; 3]).unwrap();
        let phi = p.forward(&seq(&[&[1.0, -4.0], &[0.3, 2.0]])).unwrap();
        for v in phi.as_matrix().as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn analytic_softmax() {
        let p = ClassifierParams::new(Matrix::zeros(2, 1), vec![3f64.ln(), 0.0]).unwrap();
        let phi = p.forward(&seq(&[&[0.0]])).unwrap();
        assert!((phi.as_matrix()[(0, 0)] - 0.75).abs() < 1e-15);
        assert!((phi.as_matrix()[(0, 1)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn bias_shift_invariance() {
        let mut rng = Rng::new(1);
        let mut p = init_params(4, 3, 0.5, &mut rng).unwrap();
        let z = seq(&[&[0.1, 0.2, 0.3], &[-1.0, 0.5, 2.0]]);
        let a = p.forward(&z).unwrap();
        p.bias.iter_mut().for_each(|b| *b += 7.5);
        let b = p.forward(&z).unwrap();
        assert!(a.as_matrix().max_abs_diff(b.as_matrix()) < 1e-14);
    }

    #[test]
    fn dimension_mismatch() {
        let p = ClassifierParams::new(Matrix::zeros(2, 3), vec![0.0; 2]).unwrap();
        assert!(p.forward(&seq(&[&[1.0, 2.0]])).is_err());
        assert!(p.backward(&Matrix::zeros(1, 3), &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn backward_trivial_cases() {
        let mut rng = Rng::new(2);
        let p = init_params(3, 2, 1.0, &mut rng).unwrap();
        let frames = Matrix::from_rows(&[[0.5, -0.5]]).unwrap();
        let g = p.backward(&frames, &Matrix::zeros(1, 3)).unwrap();
        assert!(g.weight.as_slice().iter().all(|v| *v == 0.0));
        let g = p.backward(&frames, &Matrix::filled(1, 3, 2.5)).unwrap();
        assert!(g.weight.as_slice().iter().all(|v| v.abs() < 1e-15));
        assert!(g.bias.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(3);
        let p = init_params(3, 4, 0.8, &mut rng).unwrap();
        let frames = Matrix::from_vec(5, 4, (0..20).map(|_| rng.normal()).collect()).unwrap();
        let coef = Matrix::from_vec(5, 3, (0..15).map(|_| rng.normal()).collect()).unwrap();
        // scalar functional L(Φ) = Σ coef ⊙ Φ², gradient 2·coef ⊙ Φ
        let loss = |p: &ClassifierParams| -> f64 {
            let phi = p.forward_frames(&frames).unwrap();
            phi.as_slice().iter().zip(coef.as_slice()).map(|(f, c)| c * f * f).sum()
        };
        let phi = p.forward_frames(&frames).unwrap();
        let mut gphi = phi.clone();
        for (g, c) in gphi.as_mut_slice().iter_mut().zip(coef.as_slice()) {
            *g *= 2.0 * c;
        }
        let g = p.backward(&frames, &gphi).unwrap();
        let h = 1e-6;
        for i in 0..12 {
            let mut a = p.clone();
            let mut b = p.clone();
            a.weight.as_mut_slice()[i] += h;
            b.weight.as_mut_slice()[i] -= h;
            let fd = (loss(&a) - loss(&b)) / (2.0 * h);
            let an = g.weight.as_slice()[i];
            assert!((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6) < 1e-6, "{fd} {an}");
        }
        for k in 0..3 {
            let mut a = p.clone();
            let mut b = p.clone();
            a.bias[k] += h;
            b.bias[k] -= h;
            let fd = (loss(&a) - loss(&b)) / (2.0 * h);
            assert!((fd - g.bias[k]).abs() / fd.abs().max(1e-6) < 1e-6);
        }
    }

    #[test]
    fn init_examples() {
        let mut rng = Rng::new(4);
        let p = init_params(3, 5, 0.0, &mut rng).unwrap();
        assert!(p.weight.as_slice().iter().all(|v| *v == 0.0));
        let a = init_params(3, 5, 0.01, &mut Rng::new(9)).unwrap();
        let b = init_params(3, 5, 0.01, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        assert!(init_params(1, 5, 0.01, &mut rng).is_err());
        for (c, d) in [(2, 1), (10, 64), (512, 512)] {
            let p = init_params(c, d, DEFAULT_INIT_SCALE, &mut rng).unwrap();
            assert!(spectral_norm_default(&p.weight).unwrap() < 1.0);
        }
    }

    #[test]
    fn params_text_round_trip() {
        let mut rng = Rng::new(5);
        let mut p = init_params(3, 4, 1.0, &mut rng).unwrap();
        p.bias = vec![1e-300, -2.5, 1.0 / 3.0];
        let text = p.to_text();
        assert!(text.starts_with("seqtraj-params v1 3 4\n"));
        let q = ClassifierParams::from_text(&text).unwrap();
        assert_eq!(p, q);
        assert_eq!(q.to_text(), text);
        assert!(ClassifierParams::from_text("seqtraj-params v2 3 4\n").is_err());
        assert!(ClassifierParams::from_text("seqtraj-params v1 2 1\n1\n2\n0 0 0\n").is_err());
    }

    #[test]
    fn rows_strictly_positive() {
        let mut rng = Rng::new(6);
        let p = init_params(5, 3, 2.0, &mut rng).unwrap();
        let frames = Matrix::from_vec(4, 3, (0..12).map(|_| rng.normal()).collect()).unwrap();
        let phi = p.forward_frames(&frames).unwrap();
        for row in phi.row_iter() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|v| *v > 0.0));
        }
    }
}
