//! Experiment configuration files.
//!
//! A TOML document with the sections `data`, `train`, `eval`, `output` and a
//! top-level `seed`. Unknown keys are rejected. Relative paths are resolved
//! against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use seqtraj_core::episodes::{AnomalySpec, TrajectorySpec};
use seqtraj_core::TrainConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Sequence file used for training, and for evaluation unless
    /// `test_path` is set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<TrajectorySpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub anomaly: Option<AnomalySpec>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    Classify,
    Anomaly,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Nearest per-class exemplar under soft-DTW.
    #[default]
    Exemplar,
    /// Argmax of the time-averaged prediction.
    MeanArgmax,
}

impl Readout {
    pub fn name(self) -> &'static str {
        match self {
            Readout::Exemplar => "exemplar",
            Readout::MeanArgmax => "mean_argmax",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub mode: EvalMode,
    pub anomaly_class: usize,
    pub readout: Readout,
    /// Labelled sequences the class exemplars are built from; defaults to
    /// `data.path`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { mode: EvalMode::Classify, anomaly_class: 1, readout: Readout::Exemplar, reference: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// Which generator `gen` runs.
#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    Trajectory(TrajectorySpec),
    Anomaly(AnomalySpec),
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {}", e.message())))
    }

    /// Reads and parses `path`, resolving relative paths against its
    /// directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.data.path.as_mut().map(fix);
        self.data.test_path.as_mut().map(fix);
        self.eval.reference.as_mut().map(fix);
        fix(&mut self.output.dir);
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Validation(e.to_string()))
    }

    /// Fully qualified names of invalid keys.
    pub fn invalid_fields(&self) -> Vec<String> {
        let mut bad: Vec<String> = self.train.invalid_fields().into_iter().map(|f| format!("train.{f}")).collect();
        if let Some(t) = &self.data.trajectory {
            bad.extend(t.invalid_fields().into_iter().map(|f| format!("data.trajectory.{f}")));
        }
        if let Some(a) = &self.data.anomaly {
            bad.extend(a.invalid_fields().into_iter().map(|f| format!("data.anomaly.{f}")));
        }
        if self.data.trajectory.is_some() && self.data.anomaly.is_some() {
            bad.push("data (both trajectory and anomaly given)".into());
        }
        bad
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = self.invalid_fields();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(format!("invalid config keys: {}", bad.join(", "))))
        }
    }

    pub fn generator(&self) -> Option<Generator> {
        match (&self.data.trajectory, &self.data.anomaly) {
            (Some(t), None) => Some(Generator::Trajectory(t.clone())),
            (None, Some(a)) => Some(Generator::Anomaly(a.clone())),
            _ => None,
        }
    }

    pub fn effective_seed(&self) -> u64 {
        self.seed.unwrap_or(self.train.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.effective_seed(), 0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml("[train]\nepochz = 3\n").unwrap_err().to_string();
        assert!(err.contains("epochz"), "{err}");
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("[eval]\nmode = \"regress\"").is_err());
    }

    #[test]
    fn generator_tables_need_every_key() {
        let err = ExperimentConfig::from_toml("[data.trajectory]\nnum_classes = 3\n").unwrap_err().to_string();
        assert!(err.contains("missing field"), "{err}");
    }

    #[test]
    fn invalid_values_are_named() {
        let text = "seed = 4\n[train]\nbatch = 0\n[train.weights]\nalpha = 1.0\nbeta = -1.0\ngamma = 0.1\n\
                    [data.anomaly]\nnum_normals = 2\nnum_abnormal = 2\ntau = 8\nd = 3\nanomaly_len = 9\nanomaly_shift = 1.0\n";
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.effective_seed(), 4);
        assert_eq!(cfg.invalid_fields(), vec!["train.batch", "train.beta", "data.anomaly.anomaly_len"]);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = ExperimentConfig { seed: Some(9), ..Default::default() };
        cfg.data.trajectory = Some(TrajectorySpec::default());
        cfg.eval.readout = Readout::MeanArgmax;
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let mut cfg = ExperimentConfig::from_toml("[data]\npath = \"d.jsonl\"\n[output]\ndir = \"/abs\"\n").unwrap();
        cfg.rebase(Path::new("/exp"));
        assert_eq!(cfg.data.path.as_deref(), Some(Path::new("/exp/d.jsonl")));
        assert_eq!(cfg.output.dir, PathBuf::from("/abs"));
    }
}
