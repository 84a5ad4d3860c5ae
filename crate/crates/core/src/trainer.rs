//! Episodic training: per-episode exemplars from support predictions, the
//! composite loss on queries, analytic backprop and Adam updates.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barycenter::{barycenter, BarycenterOptions, Projection, SupportSet};
use crate::episodes::sampler::{sample_episode, Episode};
use crate::error::{arg_err, Error, Result};
use crate::losses::{loss_total, CeMode, LossOptions, LossReport, LossWeights, Targets};
use crate::model::{init_params, ClassifierParams, FeatureSequence, ParamGrads, DEFAULT_INIT_SCALE};
use crate::numerics::{derive_seed, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    /// Queries per episode.
    pub batch: usize,
    /// Supports per query.
    pub n_support: usize,
    pub weights: LossWeights,
    pub ce_mode: CeMode,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub barycenter_steps: usize,
    pub barycenter_step_size: f64,
    pub projection: Projection,
    pub loss: LossOptions,
    /// Queries of one class in an episode share a support draw and thus one
    /// exemplar computation.
    pub share_class_exemplars: bool,
    pub init_scale: f64,
    /// Serial execution; results are identical either way, this only pins
    /// the thread count to one.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            episodes_per_epoch: 20,
            batch: 16,
            n_support: 3,
            weights: LossWeights::default(),
            ce_mode: CeMode::Frame,
            learning_rate: 1e-3,
            adam: AdamConfig::default(),
            seed: 0,
            barycenter_steps: 50,
            barycenter_step_size: 0.1,
            projection: Projection::Simplex,
            loss: LossOptions::default(),
            share_class_exemplars: true,
            init_scale: DEFAULT_INIT_SCALE,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    /// Names of fields holding out-of-range values.
    pub fn invalid_fields(&self) -> Vec<&'static str> {
        let mut bad = Vec::new();
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if self.episodes_per_epoch == 0 {
            bad.push("episodes_per_epoch");
        }
        if self.batch == 0 {
            bad.push("batch");
        }
        if self.n_support == 0 {
            bad.push("n_support");
        }
        if !nonneg(self.weights.alpha) {
            bad.push("alpha");
        }
        if !nonneg(self.weights.beta) {
            bad.push("beta");
        }
        if !pos(self.weights.gamma) {
            bad.push("gamma");
        }
        if !nonneg(self.learning_rate) {
            bad.push("learning_rate");
        }
        if !(0.0..1.0).contains(&self.adam.beta1) {
            bad.push("beta1");
        }
        if !(0.0..1.0).contains(&self.adam.beta2) {
            bad.push("beta2");
        }
        if !pos(self.adam.eps) {
            bad.push("eps");
        }
        if !pos(self.barycenter_step_size) {
            bad.push("barycenter_step_size");
        }
        if !nonneg(self.init_scale) {
            bad.push("init_scale");
        }
        bad
    }

    pub fn validate(&self) -> Result<()> {
        let bad = self.invalid_fields();
        if bad.is_empty() {
            Ok(())
        } else {
            arg_err(format!("invalid train config fields: {}", bad.join(", ")))
        }
    }

    pub fn barycenter_options(&self) -> BarycenterOptions {
        BarycenterOptions {
            gamma: self.weights.gamma,
            steps: self.barycenter_steps,
            step_size: self.barycenter_step_size,
            projection: self.projection,
        }
    }

    fn needs_exemplars(&self) -> bool {
        self.loss.align || self.loss.exemplar_ce || self.loss.exemplar_smooth
    }
}

/// Adam moments over the flattened `[W, b]` vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, cfg: &AdamConfig) {
        debug_assert_eq!(params.len(), grads.len());
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powf(self.t as f64);
        let bc2 = 1.0 - cfg.beta2.powf(self.t as f64);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ClassifierParams,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<LossReport>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateSidecar {
    num_classes: usize,
    dim: usize,
    epoch: usize,
    adam: AdamState,
    history: Vec<LossReport>,
}

pub const PARAMS_FILE: &str = "params.txt";
pub const STATE_FILE: &str = "state.json";
pub const LOSS_CSV_FILE: &str = "loss.csv";

impl TrainState {
    pub fn new(params: ClassifierParams) -> Self {
        let n = params.weight.as_slice().len() + params.bias.len();
        Self { params, adam: AdamState::new(n), epoch: 0, history: Vec::new() }
    }

    /// Freshly initialized state for `config.seed`.
    pub fn initial(num_classes: usize, dim: usize, config: &TrainConfig) -> Result<Self> {
        let mut rng = Rng::derive(config.seed, "init");
        Ok(Self::new(init_params(num_classes, dim, config.init_scale, &mut rng)?))
    }

    /// Writes `params.txt` and `state.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(PARAMS_FILE), self.params.to_text())?;
        let side = StateSidecar {
            num_classes: self.params.num_classes(),
            dim: self.params.dim(),
            epoch: self.epoch,
            adam: self.adam.clone(),
            history: self.history.clone(),
        };
        let mut json = serde_json::to_string_pretty(&side).map_err(|e| Error::Parse(e.to_string()))?;
        json.push('\n');
        fs::write(dir.join(STATE_FILE), json)?;
        Ok(())
    }

    /// Reads a checkpoint directory. Without `state.json` the params are
    /// loaded with fresh optimizer state.
    pub fn load(dir: &Path) -> Result<Self> {
        let params = ClassifierParams::from_text(&fs::read_to_string(dir.join(PARAMS_FILE))?)?;
        let sp = dir.join(STATE_FILE);
        if !sp.exists() {
            return Ok(Self::new(params));
        }
        let side: StateSidecar = serde_json::from_str(&fs::read_to_string(&sp)?)
            .map_err(|e| Error::Parse(format!("{}: {e}", sp.display())))?;
        if (side.num_classes, side.dim) != (params.num_classes(), params.dim()) {
            return Err(Error::Parse(format!(
                "state sidecar shape ({}, {}) does not match params ({}, {})",
                side.num_classes,
                side.dim,
                params.num_classes(),
                params.dim()
            )));
        }
        let n = params.weight.as_slice().len() + params.bias.len();
        if side.adam.m.len() != n || side.adam.v.len() != n {
            return Err(Error::Parse("optimizer moments have the wrong length".into()));
        }
        Ok(Self { params, adam: side.adam, epoch: side.epoch, history: side.history })
    }
}

/// Loss history as CSV, one row per episode tagged with its 1-based epoch.
pub fn loss_csv(history: &[LossReport], episodes_per_epoch: usize) -> String {
    let mut s = String::from("epoch,align,ce,smooth,total\n");
    for (i, r) in history.iter().enumerate() {
        let epoch = i / episodes_per_epoch.max(1) + 1;
        s.push_str(&format!("{epoch},{},{},{},{}\n", r.align, r.ce, r.smooth, r.total));
    }
    s
}

/// Adam update on `state.params` and step count.
pub fn optimizer_step(state: &mut TrainState, grads: &ParamGrads, config: &TrainConfig) -> Result<()> {
    let (c, d) = (state.params.num_classes(), state.params.dim());
    if grads.weight.shape() != (c, d) || grads.bias.len() != c {
        return arg_err(format!(
            "gradient shapes {:?}/{} do not match params ({c}, {d})",
            grads.weight.shape(),
            grads.bias.len()
        ));
    }
    let mut flat: Vec<f64> = state.params.weight.as_slice().to_vec();
    flat.extend_from_slice(&state.params.bias);
    let mut g: Vec<f64> = grads.weight.as_slice().to_vec();
    g.extend_from_slice(&grads.bias);
    state.adam.step(&mut flat, &g, config.learning_rate, &config.adam);
    let (w, b) = flat.split_at(c * d);
    state.params.weight.as_mut_slice().copy_from_slice(w);
    state.params.bias.copy_from_slice(b);
    Ok(())
}

fn map_maybe_par<T, U, F>(items: &[T], parallel: bool, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    if parallel {
        items.par_iter().map(f).collect()
    } else {
        items.iter().map(f).collect()
    }
}

/// Exemplar per query; queries with identical support id lists reuse one
/// computation when `share_class_exemplars` is set.
fn episode_exemplars(params: &ClassifierParams, episode: &Episode, config: &TrainConfig) -> Result<Vec<Matrix>> {
    let keys: Vec<Vec<&str>> = episode
        .supports
        .iter()
        .map(|sup| sup.iter().map(|s| s.id.as_str()).collect())
        .collect();
    let mut jobs: Vec<usize> = Vec::new();
    let mut owner: Vec<usize> = Vec::with_capacity(keys.len());
    let mut seen: BTreeMap<&Vec<&str>, usize> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        if config.share_class_exemplars {
            if let Some(&j) = seen.get(k) {
                owner.push(j);
                continue;
            }
            seen.insert(k, jobs.len());
        }
        owner.push(jobs.len());
        jobs.push(i);
    }
    let opts = config.barycenter_options();
    let results: Vec<Result<Matrix>> = map_maybe_par(&jobs, !config.deterministic, |&i| {
        let preds = episode.supports[i].iter().map(|s| params.forward(s)).collect::<Result<Vec<_>>>()?;
        let res = barycenter(&SupportSet::from_predictions(preds)?, &opts)?;
        Ok(res.exemplar.rows)
    });
    let computed = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(owner.into_iter().map(|j| computed[j].clone()).collect())
}

/// One episode: exemplars (stop-gradient), query forward, composite loss,
/// backprop summed in query order, one Adam step.
pub fn run_episode(state: &mut TrainState, episode: &Episode, config: &TrainConfig, episode_seed: u64) -> Result<LossReport> {
    episode.validate()?;
    let diag = |msg: String| Error::Numerical(format!("episode seed {episode_seed:#018x}: {msg}"));

    let phis: Vec<Matrix> = map_maybe_par(&episode.queries, !config.deterministic, |q| state.params.forward_frames(&q.frames))
        .into_iter()
        .collect::<Result<_>>()?;
    if phis.iter().any(|p| !p.all_finite()) {
        return Err(diag("non-finite predictions".into()));
    }
    let exemplars = if config.needs_exemplars() {
        Some(episode_exemplars(&state.params, episode, config).map_err(|e| match e {
            Error::Numerical(m) => diag(m),
            other => other,
        })?)
    } else {
        None
    };
    let labels: Vec<usize> = episode
        .queries
        .iter()
        .map(|q| q.label.ok_or_else(|| Error::Argument(format!("query {:?} has no label", q.id))))
        .collect::<Result<_>>()?;
    let frame_labels: Vec<Option<Vec<usize>>> = episode.queries.iter().map(|q| q.frame_labels.clone()).collect();
    let targets = Targets { labels: &labels, frame_labels: Some(&frame_labels) };

    let (report, grad_phi) =
        loss_total(&phis, exemplars.as_deref(), &targets, &config.weights, config.ce_mode, &config.loss)?;
    if !report.total.is_finite() {
        return Err(diag(format!("non-finite loss {report:?}")));
    }

    let idx: Vec<usize> = (0..phis.len()).collect();
    let per_query: Vec<Result<ParamGrads>> = map_maybe_par(&idx, !config.deterministic, |&i| {
        state.params.backward_with_output(&episode.queries[i].frames, &phis[i], &grad_phi[i])
    });
    let mut grads = ParamGrads::zeros(state.params.num_classes(), state.params.dim());
    for g in per_query {
        grads.accumulate(&g?);
    }
    if !grads.weight.all_finite() || grads.bias.iter().any(|b| !b.is_finite()) {
        return Err(diag("non-finite gradient".into()));
    }
    optimizer_step(state, &grads, config)?;
    Ok(report)
}

pub fn episode_seed(seed: u64, epoch: usize, k: usize) -> u64 {
    derive_seed(seed, &format!("episode-{epoch}-{k}"))
}

/// Shape `(C, d)` of a labelled dataset.
pub fn dataset_shape(dataset: &[FeatureSequence]) -> Result<(usize, usize)> {
    let Some(first) = dataset.first() else {
        return arg_err("empty dataset");
    };
    let mut c = 0;
    for s in dataset {
        if s.dim() != first.dim() {
            return arg_err(format!("sequence {:?} has d={}, expected {}", s.id, s.dim(), first.dim()));
        }
        let l = s.label.ok_or_else(|| Error::Argument(format!("sequence {:?} has no label", s.id)))?;
        c = c.max(l + 1);
    }
    Ok((c.max(2), first.dim()))
}

/// Trains from `resume` (or a fresh initialization) up to `config.epochs`
/// completed epochs, calling `on_epoch` after each one.
pub fn train_with<F>(dataset: &[FeatureSequence], config: &TrainConfig, resume: Option<TrainState>, mut on_epoch: F) -> Result<TrainState>
where
    F: FnMut(&TrainState) -> Result<()> + Send,
{
    config.validate()?;
    let (c, d) = dataset_shape(dataset)?;
    let mut state = match resume {
        Some(s) => {
            if (s.params.num_classes(), s.params.dim()) != (c, d) {
                return arg_err(format!(
                    "checkpoint shape ({}, {}) does not match dataset ({c}, {d})",
                    s.params.num_classes(),
                    s.params.dim()
                ));
            }
            s
        }
        None => TrainState::initial(c, d, config)?,
    };
    let run = |state: &mut TrainState, on_epoch: &mut F| -> Result<()> {
        while state.epoch < config.epochs {
            for k in 0..config.episodes_per_epoch {
                let seed = episode_seed(config.seed, state.epoch, k);
                let mut rng = Rng::new(seed);
                let episode =
                    sample_episode(dataset, config.batch, config.n_support, config.share_class_exemplars, &mut rng)?;
                let report = run_episode(state, &episode, config, seed)?;
                state.history.push(report);
            }
            state.epoch += 1;
            on_epoch(state)?;
        }
        Ok(())
    };
    if config.deterministic {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| Error::Argument(e.to_string()))?;
        pool.install(|| run(&mut state, &mut on_epoch))?;
    } else {
        run(&mut state, &mut on_epoch)?;
    }
    Ok(state)
}

pub fn train(dataset: &[FeatureSequence], config: &TrainConfig, resume: Option<TrainState>) -> Result<TrainState> {
    train_with(dataset, config, resume, |_| Ok(()))
}

/// As [`train`], checkpointing into `out_dir` after every epoch and writing
/// the loss CSV at the end.
pub fn train_to_dir(
    dataset: &[FeatureSequence],
    config: &TrainConfig,
    resume: Option<TrainState>,
    out_dir: &Path,
) -> Result<TrainState> {
    fs::create_dir_all(out_dir)?;
    let state = train_with(dataset, config, resume, |s| s.save(out_dir))?;
    state.save(out_dir)?;
    fs::write(out_dir.join(LOSS_CSV_FILE), loss_csv(&state.history, config.episodes_per_epoch))?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episodes::synthetic::{make_synthetic_trajectory_dataset, TrajectorySpec};

    fn small_data(seed: u64) -> Vec<FeatureSequence> {
        let spec = TrajectorySpec { num_classes: 3, per_class: 8, tau: 8, d: 6, ..Default::default() };
        make_synthetic_trajectory_dataset(&spec, &mut Rng::new(seed)).unwrap()
    }

    fn small_config() -> TrainConfig {
        TrainConfig { epochs: 2, episodes_per_epoch: 3, batch: 4, n_support: 2, barycenter_steps: 10, ..Default::default() }
    }

    #[test]
    fn adam_first_step_is_sign_scaled() {
        let cfg = AdamConfig::default();
        let mut st = AdamState::new(3);
        let mut p = vec![1.0, -2.0, 0.5];
        st.step(&mut p, &[0.3, -4.0, 0.0], 0.01, &cfg);
        assert!((p[0] - (1.0 - 0.01)).abs() < 1e-9);
        assert!((p[1] - (-2.0 + 0.01)).abs() < 1e-9);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn adam_quadratic_bowl() {
        // f(x) = Σ cᵢ (xᵢ − x*ᵢ)², minimum at x*
        let target = [0.7, -1.3, 0.05, 2.0];
        let curv = [1.0, 4.0, 0.5, 2.0];
        let cfg = AdamConfig::default();
        let mut st = AdamState::new(4);
        let mut x = vec![0.0; 4];
        let mut converged_at = None;
        for step in 1..=5000 {
            let g: Vec<f64> = (0..4).map(|i| 2.0 * curv[i] * (x[i] - target[i])).collect();
            st.step(&mut x, &g, 1e-2, &cfg);
            let err = (0..4).map(|i| (x[i] - target[i]).abs()).fold(0.0, f64::max);
            if err < 1e-6 {
                converged_at = Some(step);
                break;
            }
        }
        assert!(converged_at.is_some(), "final x {x:?}");
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let cfg = TrainConfig::default();
        let mut st = TrainState::initial(3, 4, &cfg).unwrap();
        let before = st.params.clone();
        optimizer_step(&mut st, &ParamGrads::zeros(3, 4), &cfg).unwrap();
        assert_eq!(st.params, before);
        assert!(optimizer_step(&mut st, &ParamGrads::zeros(2, 4), &cfg).is_err());
    }

    #[test]
    fn zero_learning_rate_still_reports() {
        let ds = small_data(1);
        let cfg = TrainConfig { learning_rate: 0.0, ..small_config() };
        let init = TrainState::initial(3, 6, &cfg).unwrap();
        let st = train(&ds, &cfg, None).unwrap();
        assert_eq!(st.params, init.params);
        assert_eq!(st.history.len(), 6);
        assert!(st.history.iter().all(|r| r.total.is_finite() && r.total > 0.0));
    }

    #[test]
    fn zero_epochs_returns_initial_state() {
        let ds = small_data(2);
        let cfg = TrainConfig { epochs: 0, ..small_config() };
        let st = train(&ds, &cfg, None).unwrap();
        assert_eq!(st, TrainState::initial(3, 6, &cfg).unwrap());
    }

    fn align_grad_norm(query: &Matrix, support: &Matrix) -> f64 {
        let q = FeatureSequence::new("q", query.clone(), Some(0)).unwrap();
        let s = FeatureSequence::new("s", support.clone(), Some(0)).unwrap();
        let ep = Episode { queries: vec![q], supports: vec![vec![s]], schedules: vec![None] };
        let cfg = TrainConfig {
            weights: LossWeights { alpha: 0.0, beta: 0.0, gamma: 1e-3 },
            barycenter_steps: 200,
            init_scale: 1.0,
            ..Default::default()
        };
        let st = TrainState::initial(2, 2, &cfg).unwrap();
        let phi = st.params.forward_frames(&ep.queries[0].frames).unwrap();
        let ex = episode_exemplars(&st.params, &ep, &cfg).unwrap();
        let targets = Targets { labels: &[0], frame_labels: None };
        let (_, g) = loss_total(&[phi.clone()], Some(&ex), &targets, &cfg.weights, cfg.ce_mode, &cfg.loss).unwrap();
        let grads = st.params.backward_with_output(&ep.queries[0].frames, &phi, &g[0]).unwrap();
        grads.weight.as_slice().iter().chain(&grads.bias).map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn aligned_to_itself_gives_tiny_step() {
        let a = Matrix::from_rows(&[&[0.5, 0.1], &[0.2, 0.9], &[-0.3, 0.4]]).unwrap();
        let b = Matrix::from_rows(&[&[-0.8, 0.6], &[0.9, -0.2], &[0.1, -0.7]]).unwrap();
        let own = align_grad_norm(&a, &a);
        let other = align_grad_norm(&a, &b);
        assert!(own < 0.05 * other, "self {own} vs other {other}");
    }

    #[test]
    fn deterministic_and_parallel_agree() {
        let ds = small_data(3);
        let a = train(&ds, &TrainConfig { deterministic: true, ..small_config() }, None).unwrap();
        let b = train(&ds, &TrainConfig { deterministic: true, ..small_config() }, None).unwrap();
        let c = train(&ds, &small_config(), None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.params, c.params);
        assert_eq!(a.history, c.history);
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let ds = small_data(4);
        let full = train(&ds, &TrainConfig { epochs: 3, ..small_config() }, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        train_to_dir(&ds, &TrainConfig { epochs: 1, ..small_config() }, None, dir.path()).unwrap();
        let loaded = TrainState::load(dir.path()).unwrap();
        let resumed = train(&ds, &TrainConfig { epochs: 3, ..small_config() }, Some(loaded)).unwrap();
        assert_eq!(resumed, full);
    }

    #[test]
    fn checkpoint_files() {
        let ds = small_data(5);
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        let st = train_to_dir(&ds, &cfg, None, dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join(LOSS_CSV_FILE)).unwrap();
        assert_eq!(csv.lines().count(), 1 + cfg.epochs * cfg.episodes_per_epoch);
        assert!(csv.lines().nth(4).unwrap().starts_with("2,"));
        assert_eq!(TrainState::load(dir.path()).unwrap(), st);
    }

    #[test]
    fn invalid_config_fields_are_named() {
        let cfg = TrainConfig { batch: 0, learning_rate: -1.0, ..Default::default() };
        assert_eq!(cfg.invalid_fields(), vec!["batch", "learning_rate"]);
        assert!(train(&small_data(0), &cfg, None).is_err());
    }

    #[test]
    fn nonfinite_loss_reports_episode_seed() {
        let ds = small_data(6);
        let mut st = TrainState::initial(3, 6, &small_config()).unwrap();
        st.params.weight[(0, 0)] = f64::INFINITY;
        let mut rng = Rng::new(9);
        let ep = sample_episode(&ds, 2, 1, true, &mut rng).unwrap();
        let err = run_episode(&mut st, &ep, &small_config(), 0xABCD).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)), "{err}");
        assert!(err.to_string().contains("0x000000000000abcd"), "{err}");
    }

    #[test]
    fn large_beta_smooths_predictions() {
        let ds = small_data(7);
        let step = |st: &TrainState| -> f64 {
            let mut total = 0.0;
            let mut n = 0.0;
            for s in &ds {
                let phi = st.params.forward_frames(&s.frames).unwrap();
                for t in 1..phi.rows() {
                    total += crate::numerics::sq_dist(phi.row(t), phi.row(t - 1)).sqrt();
                    n += 1.0;
                }
            }
            total / n
        };
        let base = TrainConfig { epochs: 3, learning_rate: 1e-2, ..small_config() };
        let rough = train(&ds, &TrainConfig { weights: LossWeights { beta: 0.0, ..base.weights }, ..base.clone() }, None).unwrap();
        let smooth = train(&ds, &TrainConfig { weights: LossWeights { beta: 100.0, ..base.weights }, ..base }, None).unwrap();
        assert!(step(&smooth) < step(&rough), "{} vs {}", step(&smooth), step(&rough));
    }
}
