//! Subcommand implementations. Each one resolves and validates everything it
//! needs first, then computes, then writes.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use seqtraj_core::barycenter::{barycenter, BarycenterOptions, SupportSet};
use seqtraj_core::episodes::io::{read_manifest, read_sequences, write_sequences};
use seqtraj_core::episodes::{make_anomaly_dataset, make_synthetic_trajectory_dataset, AnomalySpec, TrajectorySpec};
use seqtraj_core::eval::{
    anomaly_summary, class_exemplars, classification_summary, predict_all, write_frame_scores_csv,
    write_predictions_csv, write_weights_csv, ScoredFrames,
};
use seqtraj_core::softdtw::{soft_dtw, soft_dtw_grad};
use seqtraj_core::trainer::{dataset_shape, train_to_dir, PARAMS_FILE};
use seqtraj_core::{ClassifierParams, FeatureSequence, Rng, TrainState};

use crate::config::{EvalMode, ExperimentConfig, Generator, Readout};
use crate::error::{CliError, CliResult};
use crate::{AlignArgs, BarycenterArgs, EvalArgs, GenArgs, GenKind, TrainArgs};

pub const DATA_FILE: &str = "data.jsonl";
pub const EXEMPLAR_FILE: &str = "exemplar.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const WEIGHTS_FILE: &str = "weights.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const FRAME_SCORES_FILE: &str = "frame_scores.csv";

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn load_sequences(path: &Path) -> CliResult<Vec<FeatureSequence>> {
    read_sequences(path).map_err(|e| match e {
        seqtraj_core::Error::Io(io) => CliError::Io(format!("{}: {io}", path.display())),
        other => other.into(),
    })
}

fn create_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    create_parent(path)?;
    fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

/// Generator spec from the config with command-line overrides applied.
pub fn resolve_generator(cfg: &ExperimentConfig, a: &GenArgs) -> CliResult<Generator> {
    let configured = cfg.generator();
    let kind = a.kind.unwrap_or(match configured {
        Some(Generator::Anomaly(_)) => GenKind::Anomaly,
        _ => GenKind::Trajectory,
    });
    let mut bad = Vec::new();
    let gen = match kind {
        GenKind::Trajectory => {
            let mut s = match configured {
                Some(Generator::Trajectory(s)) => s,
                _ => TrajectorySpec::default(),
            };
            s.num_classes = a.num_classes.unwrap_or(s.num_classes);
            s.per_class = a.per_class.unwrap_or(s.per_class);
            s.tau = a.tau.unwrap_or(s.tau);
            s.d = a.d.unwrap_or(s.d);
            s.shape_noise = a.shape_noise.unwrap_or(s.shape_noise);
            s.marginal_overlap = a.marginal_overlap.unwrap_or(s.marginal_overlap);
            for (flag, set) in [
                ("num_normals", a.num_normals.is_some()),
                ("num_abnormal", a.num_abnormal.is_some()),
                ("anomaly_len", a.anomaly_len.is_some()),
                ("anomaly_shift", a.anomaly_shift.is_some()),
                ("noise", a.noise.is_some()),
            ] {
                if set {
                    bad.push(format!("{flag} (not a trajectory key)"));
                }
            }
            bad.extend(s.invalid_fields().into_iter().map(|f| format!("data.trajectory.{f}")));
            Generator::Trajectory(s)
        }
        GenKind::Anomaly => {
            let mut s = match configured {
                Some(Generator::Anomaly(s)) => s,
                _ => AnomalySpec::default(),
            };
            s.num_normals = a.num_normals.unwrap_or(s.num_normals);
            s.num_abnormal = a.num_abnormal.unwrap_or(s.num_abnormal);
            s.tau = a.tau.unwrap_or(s.tau);
            s.d = a.d.unwrap_or(s.d);
            s.anomaly_len = a.anomaly_len.unwrap_or(s.anomaly_len);
            s.anomaly_shift = a.anomaly_shift.unwrap_or(s.anomaly_shift);
            s.noise = a.noise.unwrap_or(s.noise);
            for (flag, set) in [
                ("num_classes", a.num_classes.is_some()),
                ("per_class", a.per_class.is_some()),
                ("shape_noise", a.shape_noise.is_some()),
                ("marginal_overlap", a.marginal_overlap.is_some()),
            ] {
                if set {
                    bad.push(format!("{flag} (not an anomaly key)"));
                }
            }
            bad.extend(s.invalid_fields().into_iter().map(|f| format!("data.anomaly.{f}")));
            Generator::Anomaly(s)
        }
    };
    if bad.is_empty() {
        Ok(gen)
    } else {
        Err(invalid(format!("invalid generator keys: {}", bad.join(", "))))
    }
}

pub fn cmd_gen(cfg: ExperimentConfig, a: &GenArgs, out: &mut dyn Write) -> CliResult<()> {
    let gen = resolve_generator(&cfg, a)?;
    let seed = cfg.effective_seed();
    let path = a.file.clone().unwrap_or_else(|| cfg.output.dir.join(DATA_FILE));
    let mut rng = Rng::new(seed);
    let (data, meta) = match &gen {
        Generator::Trajectory(s) => {
            (make_synthetic_trajectory_dataset(s, &mut rng)?, json!({"kind": "trajectory", "seed": seed, "spec": s}))
        }
        Generator::Anomaly(s) => (make_anomaly_dataset(s, &mut rng)?, json!({"kind": "anomaly", "seed": seed, "spec": s})),
    };
    create_parent(&path)?;
    let manifest = write_sequences(&path, &data, Some(meta)).map_err(|e| match e {
        seqtraj_core::Error::Io(io) => CliError::Io(format!("{}: {io}", path.display())),
        other => other.into(),
    })?;
    writeln!(out, "wrote {} sequences (d={}, classes={}) to {}", manifest.count, manifest.d, manifest.num_classes, path.display())?;
    for (c, n) in &manifest.class_counts {
        writeln!(out, "  class {c}: {n}")?;
    }
    Ok(())
}

fn apply_train_overrides(cfg: &mut ExperimentConfig, a: &TrainArgs) {
    let t = &mut cfg.train;
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.episodes_per_epoch = a.episodes_per_epoch.unwrap_or(t.episodes_per_epoch);
    t.batch = a.batch.unwrap_or(t.batch);
    t.n_support = a.n_support.unwrap_or(t.n_support);
    t.weights.alpha = a.alpha.unwrap_or(t.weights.alpha);
    t.weights.beta = a.beta.unwrap_or(t.weights.beta);
    t.weights.gamma = a.gamma.unwrap_or(t.weights.gamma);
    t.learning_rate = a.learning_rate.unwrap_or(t.learning_rate);
    t.ce_mode = a.ce_mode.unwrap_or(t.ce_mode);
    t.loss.align = a.align.unwrap_or(t.loss.align);
    t.init_scale = a.init_scale.unwrap_or(t.init_scale);
}

fn data_path(cfg: &ExperimentConfig, flag: &Option<PathBuf>) -> CliResult<PathBuf> {
    flag.clone()
        .or_else(|| cfg.data.path.clone())
        .ok_or_else(|| invalid("no dataset given (use --data or data.path)"))
}

pub fn cmd_train(mut cfg: ExperimentConfig, a: &TrainArgs, out: &mut dyn Write) -> CliResult<()> {
    apply_train_overrides(&mut cfg, a);
    if let Some(p) = &a.data {
        cfg.data.path = Some(p.clone());
    }
    cfg.validate()?;
    let path = data_path(&cfg, &a.data)?;
    let data = load_sequences(&path)?;
    let (c, d) = dataset_shape(&data)?;
    let mut counts = std::collections::BTreeMap::<usize, usize>::new();
    for s in &data {
        *counts.entry(s.label.unwrap_or(0)).or_default() += 1;
    }
    if let Some((k, n)) = counts.iter().find(|(_, &n)| n < cfg.train.n_support + 1) {
        return Err(invalid(format!(
            "class {k} has {n} sequences; n_support={} needs at least {}",
            cfg.train.n_support,
            cfg.train.n_support + 1
        )));
    }
    let resume = match &a.resume {
        Some(dir) => {
            let s = TrainState::load(dir)?;
            if (s.params.num_classes(), s.params.dim()) != (c, d) {
                return Err(invalid(format!(
                    "checkpoint {} has shape (C={}, d={}) but dataset {} has (C={c}, d={d})",
                    dir.display(),
                    s.params.num_classes(),
                    s.params.dim(),
                    path.display()
                )));
            }
            Some(s)
        }
        None => None,
    };
    let dir = cfg.output.dir.clone();
    let mut saved = cfg.clone();
    for p in [&mut saved.data.path, &mut saved.data.test_path, &mut saved.eval.reference].into_iter().flatten() {
        *p = std::path::absolute(&*p)?;
    }
    saved.output.dir = std::path::absolute(&saved.output.dir)?;
    let config_text = saved.to_toml()?;

    write_file(&dir.join(CONFIG_FILE), config_text.as_bytes())?;
    let state = train_to_dir(&data, &cfg.train, resume, &dir)?;
    let mut weights = Vec::new();
    write_weights_csv(&mut weights, &state.params)?;
    write_file(&dir.join(WEIGHTS_FILE), &weights)?;

    writeln!(out, "trained {} epochs on {} sequences (C={c}, d={d}); checkpoint in {}", state.epoch, data.len(), dir.display())?;
    match state.history.last() {
        Some(r) => writeln!(out, "final loss: align={} ce={} smooth={} total={}", r.align, r.ce, r.smooth, r.total)?,
        None => writeln!(out, "no episodes run; checkpoint holds the initialization")?,
    }
    Ok(())
}

/// Classes and feature dimension a dataset needs from a checkpoint.
fn required_shape(path: &Path, data: &[FeatureSequence]) -> CliResult<(usize, usize)> {
    let d = data[0].dim();
    if let Some(s) = data.iter().find(|s| s.dim() != d) {
        return Err(invalid(format!("sequence {:?} has d={}, expected {d}", s.id, s.dim())));
    }
    let mut c = 0;
    for s in data {
        c = c.max(s.label.map_or(0, |l| l + 1));
        if let Some(fl) = &s.frame_labels {
            c = c.max(fl.iter().max().map_or(0, |l| l + 1));
        }
    }
    if let Some(m) = read_manifest(path)? {
        c = c.max(m.num_classes);
        if m.d != d {
            return Err(invalid(format!("manifest of {} says d={}, file has d={d}", path.display(), m.d)));
        }
    }
    Ok((c, d))
}

fn check_compatible(params: &ClassifierParams, path: &Path, data: &[FeatureSequence]) -> CliResult<()> {
    let (c, d) = required_shape(path, data)?;
    if d != params.dim() || c > params.num_classes() {
        return Err(invalid(format!(
            "checkpoint shape (C={}, d={}) is incompatible with dataset {} shape (C={c}, d={d})",
            params.num_classes(),
            params.dim(),
            path.display()
        )));
    }
    Ok(())
}

#[derive(Serialize)]
#[serde(untagged)]
enum Metrics {
    Classify(seqtraj_core::eval::ClassificationSummary),
    Anomaly(seqtraj_core::eval::AnomalySummary),
}

/// The config a training run saved next to its checkpoint, if any.
fn checkpoint_config(dir: &Path) -> CliResult<Option<ExperimentConfig>> {
    let p = dir.join(CONFIG_FILE);
    if p.exists() {
        ExperimentConfig::load(&p).map(Some)
    } else {
        Ok(None)
    }
}

/// Evaluates a checkpoint. The exemplar readout builds class exemplars from
/// reference sequences; without `--reference` or a configured path it falls
/// back to the training data and barycenter settings saved with the
/// checkpoint. `cli_config` says whether a config file was given.
pub fn cmd_eval(mut cfg: ExperimentConfig, cli_config: bool, a: &EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    cfg.eval.mode = a.mode.unwrap_or(cfg.eval.mode);
    cfg.eval.anomaly_class = a.anomaly_class.unwrap_or(cfg.eval.anomaly_class);
    cfg.eval.readout = a.readout.unwrap_or(cfg.eval.readout);
    cfg.validate()?;
    let ckpt = a.checkpoint.clone().unwrap_or_else(|| cfg.output.dir.clone());
    let params_path = ckpt.join(PARAMS_FILE);
    let text = fs::read_to_string(&params_path).map_err(|e| CliError::Io(format!("{}: {e}", params_path.display())))?;
    let params = ClassifierParams::from_text(&text)?;
    let path = a.data.clone().or_else(|| cfg.data.test_path.clone()).or_else(|| cfg.data.path.clone());
    let path = path.ok_or_else(|| invalid("no dataset given (use --data, data.test_path or data.path)"))?;
    let data = load_sequences(&path)?;
    check_compatible(&params, &path, &data)?;
    let dir = cfg.output.dir.clone();

    match cfg.eval.mode {
        EvalMode::Classify => {
            let preds = match cfg.eval.readout {
                Readout::MeanArgmax => predict_all(&params, &data)?,
                Readout::Exemplar => {
                    let saved = checkpoint_config(&ckpt)?;
                    let ref_path = a
                        .reference
                        .clone()
                        .or_else(|| cfg.eval.reference.clone())
                        .or_else(|| cfg.data.path.clone())
                        .or_else(|| saved.as_ref().and_then(|s| s.data.path.clone()));
                    let ref_path = ref_path.ok_or_else(|| invalid("exemplar readout needs reference sequences (--reference)"))?;
                    let reference = if ref_path == path { data.clone() } else { load_sequences(&ref_path)? };
                    check_compatible(&params, &ref_path, &reference)?;
                    let train = match (&cli_config, saved) {
                        (false, Some(s)) => s.train,
                        _ => cfg.train.clone(),
                    };
                    class_exemplars(&params, &reference, &train.barycenter_options())?.predict_all(&params, &data)?
                }
            };
            let summary = classification_summary(cfg.eval.readout.name(), &preds);
            let mut csv = Vec::new();
            write_predictions_csv(&mut csv, &preds)?;
            write_file(&dir.join(PREDICTIONS_FILE), &csv)?;
            write_file(&dir.join(METRICS_FILE), to_json(&Metrics::Classify(summary.clone())).as_bytes())?;
            writeln!(
                out,
                "accuracy {:.4} ({}/{}, readout {})",
                summary.accuracy, summary.correct, summary.sequences, summary.readout
            )?;
        }
        EvalMode::Anomaly => {
            if cfg.eval.anomaly_class >= params.num_classes() {
                return Err(invalid(format!(
                    "anomaly_class {} out of range for C={}",
                    cfg.eval.anomaly_class,
                    params.num_classes()
                )));
            }
            if let Some(s) = data.iter().find(|s| s.frame_labels.is_none()) {
                return Err(invalid(format!("anomaly mode needs frame labels; sequence {:?} has none", s.id)));
            }
            let sf = ScoredFrames::from_dataset(&params, &data, cfg.eval.anomaly_class)?;
            let summary = anomaly_summary(&sf, data.len(), cfg.eval.anomaly_class)?;
            let mut csv = Vec::new();
            write_frame_scores_csv(&mut csv, &params, &data, cfg.eval.anomaly_class)?;
            write_file(&dir.join(FRAME_SCORES_FILE), &csv)?;
            write_file(&dir.join(METRICS_FILE), to_json(&Metrics::Anomaly(summary.clone())).as_bytes())?;
            writeln!(
                out,
                "auc {:.4} ap {:.4} ({} frames, {} positive, {} sequences)",
                summary.auc, summary.ap, summary.frames, summary.positives, summary.sequences
            )?;
        }
    }
    Ok(())
}

fn pick<'a>(seqs: &'a [FeatureSequence], i: usize, path: &Path) -> CliResult<&'a FeatureSequence> {
    seqs.get(i)
        .ok_or_else(|| invalid(format!("{} has {} sequences, index {i} requested", path.display(), seqs.len())))
}

/// The printed form of a soft-DTW value: 12 significant digits.
pub fn format_value(v: f64) -> String {
    format!("{v:.11e}")
}

pub fn cmd_align(cfg: ExperimentConfig, a: &AlignArgs, out: &mut dyn Write) -> CliResult<()> {
    let gammas = if a.gamma.is_empty() { vec![cfg.train.weights.gamma] } else { a.gamma.clone() };
    if let Some(g) = gammas.iter().find(|g| !(g.is_finite() && **g >= 0.0)) {
        return Err(invalid(format!("gamma must be finite and >= 0, got {g}")));
    }
    if a.occupancy.is_some() && (gammas.len() != 1 || gammas[0] == 0.0) {
        return Err(invalid("--occupancy needs exactly one gamma > 0"));
    }
    let sa = load_sequences(&a.file_a)?;
    let sb = load_sequences(&a.file_b)?;
    let x = pick(&sa, a.index_a, &a.file_a)?;
    let y = pick(&sb, a.index_b, &a.file_b)?;
    if x.dim() != y.dim() {
        return Err(invalid(format!(
            "sequence {:?} is {}x{} but {:?} is {}x{}; the column counts must match",
            x.id,
            x.tau(),
            x.dim(),
            y.id,
            y.tau(),
            y.dim()
        )));
    }
    let values = gammas.iter().map(|&g| soft_dtw(&x.frames, &y.frames, g)).collect::<Result<Vec<_>, _>>()?;
    let occupancy = match &a.occupancy {
        Some(p) => {
            let g = soft_dtw_grad(&x.frames, &y.frames, gammas[0])?;
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            for row in g.occupancy.row_iter() {
                w.write_record(row.iter().map(f64::to_string)).map_err(|e| CliError::Io(e.to_string()))?;
            }
            Some((p, w.into_inner().map_err(|e| CliError::Io(e.to_string()))?))
        }
        None => None,
    };
    if let Some((p, bytes)) = occupancy {
        write_file(p, &bytes)?;
    }
    for (g, v) in gammas.iter().zip(values) {
        writeln!(out, "gamma={g} soft_dtw={}", format_value(v))?;
    }
    Ok(())
}

pub fn cmd_barycenter(cfg: ExperimentConfig, a: &BarycenterArgs, out: &mut dyn Write) -> CliResult<()> {
    let opts = BarycenterOptions {
        gamma: a.gamma.unwrap_or(cfg.train.weights.gamma),
        steps: a.steps.unwrap_or(cfg.train.barycenter_steps),
        step_size: a.step_size.unwrap_or(cfg.train.barycenter_step_size),
        projection: cfg.train.projection,
    };
    if !(opts.gamma.is_finite() && opts.gamma > 0.0) {
        return Err(invalid(format!("gamma must be > 0, got {}", opts.gamma)));
    }
    if !(opts.step_size.is_finite() && opts.step_size > 0.0) {
        return Err(invalid(format!("step_size must be > 0, got {}", opts.step_size)));
    }
    let seqs = load_sequences(&a.input)?;
    let labels: BTreeSet<Option<usize>> = seqs.iter().map(|s| s.label).collect();
    if labels.len() > 1 {
        let shown: Vec<String> = labels.iter().map(|l| l.map_or("none".into(), |c| c.to_string())).collect();
        return Err(invalid(format!(
            "{} mixes classes {{{}}}; exemplars are computed per class",
            a.input.display(),
            shown.join(", ")
        )));
    }
    let class = seqs[0].label;
    let support = SupportSet::uniform(seqs.iter().map(|s| s.frames.clone()).collect())?;
    let res = barycenter(&support, &opts)?;
    let id = class.map_or("exemplar".to_string(), |c| format!("exemplar-c{c}"));
    let ex = FeatureSequence::new(id, res.exemplar.rows.clone(), class)?;
    let path = a.file.clone().unwrap_or_else(|| cfg.output.dir.join(EXEMPLAR_FILE));
    create_parent(&path)?;
    let meta = json!({"kind": "barycenter", "source": a.input.display().to_string(), "options": opts, "supports": seqs.len()});
    write_sequences(&path, &[ex], Some(meta)).map_err(|e| match e {
        seqtraj_core::Error::Io(io) => CliError::Io(format!("{}: {io}", path.display())),
        other => other.into(),
    })?;
    writeln!(out, "initial objective {}", format_value(res.initial_objective))?;
    writeln!(out, "final objective {}", format_value(res.final_objective))?;
    writeln!(out, "wrote {}x{} exemplar to {}", res.exemplar.length(), res.exemplar.num_classes(), path.display())?;
    Ok(())
}
