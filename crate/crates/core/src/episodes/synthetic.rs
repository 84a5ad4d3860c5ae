//! Desk-scale synthetic trajectory datasets.
//!
//! Every sequence draws from its own sub-stream keyed by its id, so output is
//! independent of generation order and thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::model::FeatureSequence;
use crate::numerics::{norm2, Matrix, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub tau: usize,
    pub d: usize,
    pub shape_noise: f64,
    /// Classes visit one shared set of points in class-specific orders.
    pub marginal_overlap: bool,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self { num_classes: 4, per_class: 40, tau: 12, d: 16, shape_noise: 0.05, marginal_overlap: true }
    }
}

impl TrajectorySpec {
    /// Offending field names, empty when valid.
    pub fn invalid_fields(&self) -> Vec<&'static str> {
        let mut bad = Vec::new();
        if self.num_classes < 2 {
            bad.push("num_classes");
        }
        if self.per_class < 1 {
            bad.push("per_class");
        }
        if self.tau < 2 {
            bad.push("tau");
        }
        if self.d < 1 {
            bad.push("d");
        }
        if !(self.shape_noise >= 0.0 && self.shape_noise.is_finite()) {
            bad.push("shape_noise");
        }
        if self.marginal_overlap && self.num_classes.div_ceil(2) > self.tau {
            bad.push("num_classes");
        }
        bad
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalySpec {
    pub num_normals: usize,
    pub num_abnormal: usize,
    pub tau: usize,
    pub d: usize,
    pub anomaly_len: usize,
    pub anomaly_shift: f64,
    /// Scale of the smooth per-sequence noise.
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_noise() -> f64 {
    0.05
}

impl Default for AnomalySpec {
    fn default() -> Self {
        Self { num_normals: 20, num_abnormal: 20, tau: 32, d: 16, anomaly_len: 8, anomaly_shift: 0.5, noise: 0.05 }
    }
}

impl AnomalySpec {
    pub fn invalid_fields(&self) -> Vec<&'static str> {
        let mut bad = Vec::new();
        if self.num_normals < 1 {
            bad.push("num_normals");
        }
        if self.num_abnormal < 1 {
            bad.push("num_abnormal");
        }
        if self.tau < 2 {
            bad.push("tau");
        }
        if self.d < 1 {
            bad.push("d");
        }
        if self.anomaly_len == 0 || self.anomaly_len >= self.tau {
            bad.push("anomaly_len");
        }
        if !self.anomaly_shift.is_finite() {
            bad.push("anomaly_shift");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            bad.push("noise");
        }
        bad
    }
}

fn unit_vector(rng: &mut Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let n = norm2(&v);
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// A closed loop `o + cos(2πs)·u₁ + sin(2πs)·u₂ + ½ sin(4πs)·u₃`, period 1.
struct Loop {
    offset: Vec<f64>,
    dirs: [Vec<f64>; 3],
}

impl Loop {
    fn sample(rng: &mut Rng, d: usize) -> Self {
        let offset = unit_vector(rng, d).into_iter().map(|x| 0.5 * x).collect();
        Self { offset, dirs: [unit_vector(rng, d), unit_vector(rng, d), unit_vector(rng, d)] }
    }

    fn at(&self, s: f64, out: &mut [f64]) {
        let a = std::f64::consts::TAU * s;
        let coef = [a.cos(), a.sin(), 0.5 * (2.0 * a).sin()];
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.offset[j] + coef.iter().zip(&self.dirs).map(|(c, u)| c * u[j]).sum::<f64>();
        }
    }
}

/// Two random low-frequency sinusoids over the sequence, scaled by `scale`.
struct SmoothNoise {
    comps: Vec<(f64, f64, Vec<f64>)>,
}

impl SmoothNoise {
    fn sample(rng: &mut Rng, d: usize, scale: f64) -> Self {
        let comps = (1..=2)
            .map(|freq| {
                let phase = rng.uniform_range(0.0, std::f64::consts::TAU);
                let v: Vec<f64> = (0..d).map(|_| scale * rng.normal()).collect();
                (freq as f64, phase, v)
            })
            .collect();
        Self { comps }
    }

    fn add(&self, s: f64, out: &mut [f64]) {
        for (freq, phase, v) in &self.comps {
            let c = (std::f64::consts::TAU * freq * s + phase).sin();
            for (o, vj) in out.iter_mut().zip(v) {
                *o += c * vj;
            }
        }
    }
}

/// Start index and direction along the shared loop for class `c`.
fn overlap_order(c: usize, num_classes: usize, tau: usize) -> (usize, bool) {
    let groups = num_classes.div_ceil(2);
    let start = (c / 2) * tau / groups;
    (start, c % 2 == 0)
}

/// Labelled smooth trajectories, `per_class` per class, ids `c{class}-{k}`.
pub fn make_synthetic_trajectory_dataset(spec: &TrajectorySpec, rng: &mut Rng) -> Result<Vec<FeatureSequence>> {
    let bad = spec.invalid_fields();
    if !bad.is_empty() {
        return arg_err(format!("invalid trajectory spec fields: {}", bad.join(", ")));
    }
    let master = rng.next_seed();
    let mut structure = Rng::derive(master, "structure");
    let d = spec.d;
    let tau = spec.tau;
    let shared = Loop::sample(&mut structure, d);
    let per_class: Vec<Loop> = (0..spec.num_classes)
        .map(|_| {
            let mut l = Loop::sample(&mut structure, d);
            // well-separated class centres
            l.offset.iter_mut().for_each(|x| *x *= 6.0);
            l
        })
        .collect();
    let phases: Vec<f64> = (0..spec.num_classes).map(|_| structure.uniform()).collect();

    let jobs: Vec<(usize, usize)> =
        (0..spec.num_classes).flat_map(|c| (0..spec.per_class).map(move |k| (c, k))).collect();
    jobs.par_iter()
        .map(|&(c, k)| {
            let id = format!("c{c}-{k:04}");
            let mut r = Rng::derive(master, &id);
            let noise = SmoothNoise::sample(&mut r, d, spec.shape_noise);
            let mut frames = Matrix::zeros(tau, d);
            for t in 0..tau {
                let row = frames.row_mut(t);
                let u = t as f64 / (tau - 1) as f64;
                if spec.marginal_overlap {
                    let (start, forward) = overlap_order(c, spec.num_classes, tau);
                    let idx = if forward { (start + t) % tau } else { (start + tau - t) % tau };
                    shared.at(idx as f64 / tau as f64, row);
                } else {
                    per_class[c].at(phases[c] + 0.5 * u, row);
                }
                noise.add(u, row);
            }
            FeatureSequence::new(id, frames, Some(c))
        })
        .collect()
}

/// Normal sequences traverse a loop from a random phase. Abnormal ones carry
/// one contiguous window of `anomaly_len` frames displaced by
/// `anomaly_shift` along a fixed direction. Sequence label 1 marks abnormal;
/// frame labels mark the window.
pub fn make_anomaly_dataset(spec: &AnomalySpec, rng: &mut Rng) -> Result<Vec<FeatureSequence>> {
    let bad = spec.invalid_fields();
    if !bad.is_empty() {
        return arg_err(format!("invalid anomaly spec fields: {}", bad.join(", ")));
    }
    let master = rng.next_seed();
    let mut structure = Rng::derive(master, "structure");
    let d = spec.d;
    let tau = spec.tau;
    let normal = Loop::sample(&mut structure, d);
    let direction = unit_vector(&mut structure, d);

    let jobs: Vec<(bool, usize)> = (0..spec.num_normals)
        .map(|k| (false, k))
        .chain((0..spec.num_abnormal).map(|k| (true, k)))
        .collect();
    jobs.par_iter()
        .map(|&(abnormal, k)| {
            let id = if abnormal { format!("abnormal-{k:04}") } else { format!("normal-{k:04}") };
            let mut r = Rng::derive(master, &id);
            let phase = r.uniform();
            let noise = SmoothNoise::sample(&mut r, d, spec.noise);
            let window = if abnormal {
                let start = r.below(tau - spec.anomaly_len + 1);
                Some(start..start + spec.anomaly_len)
            } else {
                None
            };
            let mut frames = Matrix::zeros(tau, d);
            let mut labels = vec![0usize; tau];
            for t in 0..tau {
                let row = frames.row_mut(t);
                let u = t as f64 / (tau - 1) as f64;
                normal.at(phase + t as f64 / tau as f64, row);
                noise.add(u, row);
                if window.as_ref().is_some_and(|w| w.contains(&t)) {
                    labels[t] = 1;
                    for (x, v) in row.iter_mut().zip(&direction) {
                        *x += spec.anomaly_shift * v;
                    }
                }
            }
            FeatureSequence::new(id, frames, Some(usize::from(abnormal)))?.with_frame_labels(labels)
        })
        .collect()
}
