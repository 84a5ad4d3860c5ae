//! Data for episodic training: augmentation schedules, rendered image
//! sequences, synthetic trajectory generators, the support/query sampler and
//! the sequence-file format.

pub mod image;
pub mod io;
pub mod sampler;
pub mod schedule;
pub mod synthetic;

pub use image::{apply_augmentation, class_image, encode, make_image_sequence, Encoder, RasterImage};
pub use sampler::{sample_episode, Episode, ImageEpisodeSampler, SupportSource};
pub use schedule::{schedule_sample, AugKind, AugmentationSchedule, FrameParams, Track};
pub use synthetic::{make_anomaly_dataset, make_synthetic_trajectory_dataset, AnomalySpec, TrajectorySpec};

use std::collections::BTreeMap;

use crate::model::FeatureSequence;

/// Splits each class's sequences in dataset order: the first `n_first` go to
/// the first part, the rest to the second. Unlabelled sequences go second.
pub fn split_per_class(dataset: &[FeatureSequence], n_first: usize) -> (Vec<FeatureSequence>, Vec<FeatureSequence>) {
    let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
    let mut first = Vec::new();
    let mut second = Vec::new();
    for s in dataset {
        match s.label {
            Some(c) => {
                let k = seen.entry(c).or_default();
                if *k < n_first {
                    first.push(s.clone());
                } else {
                    second.push(s.clone());
                }
                *k += 1;
            }
            None => second.push(s.clone()),
        }
    }
    (first, second)
}
