//! Shared fixtures for the benchmarks.

use seqtraj_core::episodes::{make_synthetic_trajectory_dataset, TrajectorySpec};
use seqtraj_core::{FeatureSequence, Matrix, Rng};

/// A `rows x cols` matrix whose rows are random probability vectors.
pub fn stochastic(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for t in 0..rows {
        let row = m.row_mut(t);
        row.iter_mut().for_each(|v| *v = 0.05 + rng.uniform());
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    m
}

pub fn trajectories(seed: u64) -> Vec<FeatureSequence> {
    let spec = TrajectorySpec { per_class: 20, ..Default::default() };
    make_synthetic_trajectory_dataset(&spec, &mut Rng::new(seed)).expect("valid default spec")
}
