use seqtraj_core::episodes::io::{read_manifest, read_sequences, write_sequences};
use seqtraj_core::episodes::{make_anomaly_dataset, make_synthetic_trajectory_dataset, split_per_class, AnomalySpec, TrajectorySpec};
use seqtraj_core::eval::{average_precision, class_exemplars, roc_auc, ScoredFrames};
use seqtraj_core::trainer::{train, train_to_dir};
use seqtraj_core::{Rng, TrainConfig, TrainState};

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig { epochs: 2, episodes_per_epoch: 4, batch: 8, seed, ..Default::default() }
}

#[test]
fn generated_data_survives_a_file_round_trip() {
    let spec = TrajectorySpec { per_class: 6, ..Default::default() };
    let data = make_synthetic_trajectory_dataset(&spec, &mut Rng::new(5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.jsonl");
    let written = write_sequences(&path, &data, None).unwrap();
    assert_eq!(read_sequences(&path).unwrap(), data);
    let manifest = read_manifest(&path).unwrap().unwrap();
    assert_eq!(manifest.count, 24);
    assert_eq!(manifest.num_classes, written.num_classes);
    assert!(manifest.class_counts.values().all(|&n| n == 6));
}

#[test]
fn checkpoints_reload_and_resume_matches_a_single_run() {
    let spec = TrajectorySpec { per_class: 10, ..Default::default() };
    let data = make_synthetic_trajectory_dataset(&spec, &mut Rng::new(9)).unwrap();
    let full = train(&data, &small_config(3), None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let half = TrainConfig { epochs: 1, ..small_config(3) };
    train_to_dir(&data, &half, None, dir.path()).unwrap();
    let loaded = TrainState::load(dir.path()).unwrap();
    assert_eq!(loaded.epoch, 1);
    let resumed = train(&data, &small_config(3), Some(loaded)).unwrap();
    assert_eq!(resumed.params, full.params);
    assert_eq!(resumed.history, full.history);
}

#[test]
fn trained_models_feed_both_evaluation_paths() {
    let spec = TrajectorySpec { per_class: 16, ..Default::default() };
    let data = make_synthetic_trajectory_dataset(&spec, &mut Rng::new(2)).unwrap();
    let (train_set, test_set) = split_per_class(&data, 8);
    let cfg = small_config(4);
    let state = train(&train_set, &cfg, None).unwrap();
    let ex = class_exemplars(&state.params, &train_set, &cfg.barycenter_options()).unwrap();
    let acc = ex.classify(&state.params, &test_set).unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let anomaly = make_anomaly_dataset(&AnomalySpec { num_normals: 16, num_abnormal: 16, ..Default::default() }, &mut Rng::new(2)).unwrap();
    let state = train(&anomaly, &small_config(4), None).unwrap();
    let scored = ScoredFrames::from_dataset(&state.params, &anomaly, 1).unwrap();
    let auc = roc_auc(&scored).unwrap();
    let ap = average_precision(&scored).unwrap();
    assert!((0.0..=1.0).contains(&auc) && (0.0..=1.0).contains(&ap));
}
