//! Accuracy, frame-level anomaly metrics and the temporal smoothness audit.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barycenter::{barycenter, BarycenterOptions, SupportSet};
use crate::error::{arg_err, Error, Result};
use crate::model::{ClassifierParams, FeatureSequence};
use crate::numerics::{spectral_norm_default, sq_dist, Matrix};
use crate::softdtw::soft_dtw;

/// Slack on the smoothness bound for rounding in the forward pass.
pub const AUDIT_SLACK: f64 = 1e-9;

fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

/// Column means of a `τ × C` prediction matrix.
pub fn time_average(phi: &Matrix) -> Vec<f64> {
    let mut mean = vec![0.0; phi.cols()];
    for row in phi.row_iter() {
        for (m, &p) in mean.iter_mut().zip(row) {
            *m += p;
        }
    }
    let tau = phi.rows() as f64;
    mean.iter_mut().for_each(|m| *m /= tau);
    mean
}

/// Argmax of the time-averaged prediction; ties go to the lowest class.
pub fn predict_mean_argmax(params: &ClassifierParams, seq: &FeatureSequence) -> Result<usize> {
    Ok(argmax_lowest(&time_average(&params.forward_frames(&seq.frames)?)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub label: usize,
    pub predicted: usize,
}

fn labelled(dataset: &[FeatureSequence]) -> Result<Vec<usize>> {
    if dataset.is_empty() {
        return arg_err("empty dataset");
    }
    dataset
        .iter()
        .map(|s| s.label.ok_or_else(|| Error::Argument(format!("sequence {:?} has no label", s.id))))
        .collect()
}

pub fn accuracy(preds: &[Prediction]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    preds.iter().filter(|p| p.label == p.predicted).count() as f64 / preds.len() as f64
}

/// Per-sequence mean-argmax predictions.
pub fn predict_all(params: &ClassifierParams, dataset: &[FeatureSequence]) -> Result<Vec<Prediction>> {
    let labels = labelled(dataset)?;
    dataset
        .iter()
        .zip(labels)
        .map(|(s, label)| Ok(Prediction { id: s.id.clone(), label, predicted: predict_mean_argmax(params, s)? }))
        .collect()
}

/// Fraction of sequences whose time-averaged argmax equals the label.
pub fn classify(params: &ClassifierParams, dataset: &[FeatureSequence]) -> Result<f64> {
    Ok(accuracy(&predict_all(params, dataset)?))
}

/// One exemplar per class: the barycenter of the model's predictions on all
/// reference sequences of that class.
#[derive(Debug, Clone)]
pub struct ClassExemplars {
    pub exemplars: BTreeMap<usize, Matrix>,
    pub gamma: f64,
}

pub fn class_exemplars(
    params: &ClassifierParams,
    reference: &[FeatureSequence],
    opts: &BarycenterOptions,
) -> Result<ClassExemplars> {
    let labels = labelled(reference)?;
    let mut groups: BTreeMap<usize, Vec<&FeatureSequence>> = BTreeMap::new();
    for (s, l) in reference.iter().zip(labels) {
        groups.entry(l).or_default().push(s);
    }
    let groups: Vec<(usize, Vec<&FeatureSequence>)> = groups.into_iter().collect();
    let built: Vec<Result<(usize, Matrix)>> = groups
        .par_iter()
        .map(|(c, seqs)| {
            let preds = seqs.iter().map(|s| params.forward(s)).collect::<Result<Vec<_>>>()?;
            let res = barycenter(&SupportSet::from_predictions(preds)?, opts)?;
            Ok((*c, res.exemplar.rows))
        })
        .collect();
    Ok(ClassExemplars { exemplars: built.into_iter().collect::<Result<_>>()?, gamma: opts.gamma })
}

impl ClassExemplars {
    /// Class whose exemplar is nearest in soft-DTW; ties go to the lowest class.
    pub fn predict(&self, params: &ClassifierParams, seq: &FeatureSequence) -> Result<usize> {
        let phi = params.forward_frames(&seq.frames)?;
        let mut best: Option<(usize, f64)> = None;
        for (&c, m) in &self.exemplars {
            let d = soft_dtw(&phi, m, self.gamma)?;
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((c, d));
            }
        }
        best.map(|(c, _)| c).ok_or_else(|| Error::Argument("no class exemplars".into()))
    }

    pub fn predict_all(&self, params: &ClassifierParams, dataset: &[FeatureSequence]) -> Result<Vec<Prediction>> {
        let labels = labelled(dataset)?;
        dataset
            .par_iter()
            .zip(labels)
            .map(|(s, label)| Ok(Prediction { id: s.id.clone(), label, predicted: self.predict(params, s)? }))
            .collect()
    }

    pub fn classify(&self, params: &ClassifierParams, dataset: &[FeatureSequence]) -> Result<f64> {
        Ok(accuracy(&self.predict_all(params, dataset)?))
    }
}

/// `score_t = φ_t[anomaly_class]`.
pub fn anomaly_scores(params: &ClassifierParams, seq: &FeatureSequence, anomaly_class: usize) -> Result<Vec<f64>> {
    if anomaly_class >= params.num_classes() {
        return arg_err(format!("anomaly class {anomaly_class} out of range for C={}", params.num_classes()));
    }
    let phi = params.forward_frames(&seq.frames)?;
    Ok(phi.row_iter().map(|r| r[anomaly_class]).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredFrames {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoredFrames {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.is_empty() || scores.len() != labels.len() {
            return arg_err(format!("{} scores for {} labels", scores.len(), labels.len()));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return arg_err("NaN score");
        }
        Ok(Self { scores, labels })
    }

    /// Frame scores and 0/1 frame labels of every sequence in `dataset`.
    pub fn from_dataset(params: &ClassifierParams, dataset: &[FeatureSequence], anomaly_class: usize) -> Result<Self> {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for s in dataset {
            let fl = s
                .frame_labels
                .as_ref()
                .ok_or_else(|| Error::Argument(format!("sequence {:?} has no frame labels", s.id)))?;
            scores.extend(anomaly_scores(params, s, anomaly_class)?);
            labels.extend(fl.iter().map(|&l| l == anomaly_class));
        }
        Self::new(scores, labels)
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    fn counts(&self) -> (usize, usize) {
        let p = self.labels.iter().filter(|&&l| l).count();
        (p, self.labels.len() - p)
    }

    /// Indices sorted by descending score.
    fn descending(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        idx
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counted ½, via the midrank (Mann–Whitney) statistic.
pub fn roc_auc(sf: &ScoredFrames) -> Result<f64> {
    let (p, n) = sf.counts();
    if p == 0 || n == 0 {
        return arg_err("ROC-AUC needs both positive and negative frames");
    }
    let mut idx = sf.descending();
    idx.reverse();
    // U statistic doubled so every quantity stays an integer
    let mut twice_u: u128 = 0;
    let mut i = 0;
    let mut below_neg: u128 = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && sf.scores[idx[j]] == sf.scores[idx[i]] {
            j += 1;
        }
        let pos = idx[i..j].iter().filter(|&&k| sf.labels[k]).count() as u128;
        let neg = (j - i) as u128 - pos;
        twice_u += pos * (2 * below_neg + neg);
        below_neg += neg;
        i = j;
    }
    Ok(twice_u as f64 / 2.0 / (p as f64 * n as f64))
}

/// `Σ_n (R_n − R_{n−1})·P_n` over descending distinct score thresholds.
pub fn average_precision(sf: &ScoredFrames) -> Result<f64> {
    let (p, _) = sf.counts();
    if p == 0 {
        return arg_err("average precision needs at least one positive frame");
    }
    let idx = sf.descending();
    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && sf.scores[idx[j]] == sf.scores[idx[i]] {
            j += 1;
        }
        tp += idx[i..j].iter().filter(|&&k| sf.labels[k]).count();
        seen += j - i;
        let recall = tp as f64 / p as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Softmax,
    /// Element-wise logistic output, `¼`-Lipschitz per coordinate.
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessAudit {
    /// Largest consecutive feature step `‖z_{t+1} − z_t‖₂`.
    pub epsilon: f64,
    pub spectral: f64,
    pub lipschitz_used: f64,
    pub max_pred_step: f64,
    pub bound: f64,
    pub holds: bool,
}

fn predictions(params: &ClassifierParams, frames: &Matrix, activation: Activation) -> Result<Matrix> {
    match activation {
        Activation::Softmax => params.forward_frames(frames),
        Activation::Sigmoid => {
            let mut u = params.logits(frames)?;
            for v in u.as_mut_slice() {
                *v = 1.0 / (1.0 + (-*v).exp());
            }
            Ok(u)
        }
    }
}

/// Checks `max_t ‖φ_{t+1} − φ_t‖₂ ≤ L·ε` with `L = ‖W‖₂` for softmax and
/// `¼‖W‖₂` for the sigmoid head.
pub fn smoothness_audit(params: &ClassifierParams, seq: &FeatureSequence, activation: Activation) -> Result<SmoothnessAudit> {
    if seq.tau() < 2 {
        return arg_err(format!("smoothness audit needs tau >= 2, got {}", seq.tau()));
    }
    let z = &seq.frames;
    let phi = predictions(params, z, activation)?;
    let step = |m: &Matrix| (1..m.rows()).map(|t| sq_dist(m.row(t), m.row(t - 1)).sqrt()).fold(0.0, f64::max);
    let epsilon = step(z);
    let max_pred_step = step(&phi);
    let spectral = spectral_norm_default(&params.weight)?;
    let lipschitz_used = match activation {
        Activation::Softmax => spectral,
        Activation::Sigmoid => 0.25 * spectral,
    };
    let bound = lipschitz_used * epsilon;
    Ok(SmoothnessAudit { epsilon, spectral, lipschitz_used, max_pred_step, bound, holds: max_pred_step <= bound + AUDIT_SLACK })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationSummary {
    pub readout: String,
    pub sequences: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalySummary {
    pub anomaly_class: usize,
    pub sequences: usize,
    pub frames: usize,
    pub positives: usize,
    pub auc: f64,
    pub ap: f64,
}

pub fn classification_summary(readout: &str, preds: &[Prediction]) -> ClassificationSummary {
    ClassificationSummary {
        readout: readout.to_string(),
        sequences: preds.len(),
        correct: preds.iter().filter(|p| p.label == p.predicted).count(),
        accuracy: accuracy(preds),
    }
}

pub fn anomaly_summary(sf: &ScoredFrames, sequences: usize, anomaly_class: usize) -> Result<AnomalySummary> {
    Ok(AnomalySummary {
        anomaly_class,
        sequences,
        frames: sf.scores.len(),
        positives: sf.counts().0,
        auc: roc_auc(sf)?,
        ap: average_precision(sf)?,
    })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Per-sequence CSV: `id,label,predicted,correct`.
pub fn write_predictions_csv<W: Write>(out: W, preds: &[Prediction]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "label", "predicted", "correct"]).map_err(csv_err)?;
    for p in preds {
        w.write_record([p.id.clone(), p.label.to_string(), p.predicted.to_string(), u8::from(p.label == p.predicted).to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-frame CSV: `id,frame,label,score`, frames 1-based.
pub fn write_frame_scores_csv<W: Write>(
    out: W,
    params: &ClassifierParams,
    dataset: &[FeatureSequence],
    anomaly_class: usize,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "frame", "label", "score"]).map_err(csv_err)?;
    for s in dataset {
        let scores = anomaly_scores(params, s, anomaly_class)?;
        let fl = s.frame_labels.as_deref().unwrap_or(&[]);
        for (t, sc) in scores.iter().enumerate() {
            let l = fl.get(t).map_or(String::new(), |&l| u8::from(l == anomaly_class).to_string());
            w.write_record([s.id.clone(), (t + 1).to_string(), l, sc.to_string()]).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads back `(scores, labels)` from a per-frame CSV.
pub fn read_frame_scores_csv(text: &str) -> Result<ScoredFrames> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let label: u8 = rec[2].parse().map_err(|_| Error::Parse(format!("bad label {:?}", &rec[2])))?;
        let score: f64 = rec[3].parse().map_err(|_| Error::Parse(format!("bad score {:?}", &rec[3])))?;
        scores.push(score);
        labels.push(label == 1);
    }
    ScoredFrames::new(scores, labels)
}

/// Weight matrix as CSV with a `class` column and `w0..w{d-1}`, then `bias`.
pub fn write_weights_csv<W: Write>(out: W, params: &ClassifierParams) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["class".to_string()];
    header.extend((0..params.dim()).map(|j| format!("w{j}")));
    header.push("bias".into());
    w.write_record(&header).map_err(csv_err)?;
    for (c, row) in params.weight.row_iter().enumerate() {
        let mut rec = vec![c.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        rec.push(params.bias[c].to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
