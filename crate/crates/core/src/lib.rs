//! Temporal learning on prediction trajectories.
//!
//! A frame-wise linear-softmax classifier is trained on sequences of frame
//! features with three terms: a soft-DTW alignment of each query's prediction
//! trajectory to an exemplar synthesized from same-class support sequences,
//! cross-entropy supervision (per frame or on the time-averaged prediction),
//! and a smoothness penalty on consecutive predictions.
//!
//! Modules, bottom-up:
//!
//! * [`numerics`]: dense matrices, SoftMin, spectral norm, seeded randomness.
//! * [`softdtw`]: soft-DTW value, gradient, and an exhaustive DTW oracle.
//! * [`barycenter`]: soft-DTW Fréchet means of support sets (exemplars).
//! * [`model`]: the affine + softmax classifier with analytic backprop.
//! * [`losses`]: alignment, cross-entropy and smoothness terms.
//! * [`episodes`]: augmentation schedules, stand-in encoder, synthetic data,
//!   episode sampling and the sequence-file format.
//! * [`trainer`]: the episodic training loop and Adam.
//! * [`eval`]: accuracy, ROC-AUC / AP, anomaly scores, smoothness audits.

pub mod barycenter;
pub mod episodes;
mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod softdtw;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::{Matrix, Rng};
pub use softdtw::PredictionSequence;
pub use barycenter::{Exemplar, SupportSet};
pub use model::{ClassifierParams, FeatureSequence};
pub use losses::{CeMode, LossReport, LossWeights};
pub use trainer::{TrainConfig, TrainState};
