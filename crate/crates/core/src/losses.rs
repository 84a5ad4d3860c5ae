//! Alignment, cross-entropy and smoothness terms on prediction trajectories.
//!
//! Every term returns its value and its gradient with respect to each query's
//! prediction matrix. Exemplars are constants: no gradient flows into them.
//! With variable-length queries each query is normalized by its own length
//! before averaging over the batch.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::numerics::Matrix;
use crate::softdtw::soft_dtw_grad;

/// Probability floor inside logarithms; keeps CE finite on saturated rows.
const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.1, gamma: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CeMode {
    /// Cross-entropy at every frame against per-frame labels.
    Frame,
    /// Cross-entropy of the time-averaged prediction against the sequence label.
    Sequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub align: f64,
    pub ce: f64,
    pub smooth: f64,
    pub total: f64,
}

/// Switches for [`loss_total`] beyond the three weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossOptions {
    /// Include the alignment term. Off means exemplars are not needed.
    pub align: bool,
    /// Divide each query's soft-DTW by its length.
    pub normalize_align: bool,
    /// Add CE on exemplar rows (labelled with the query class) to the CE value.
    pub exemplar_ce: bool,
    /// Add the smoothness penalty of each exemplar to the smoothness value.
    pub exemplar_smooth: bool,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self { align: true, normalize_align: false, exemplar_ce: false, exemplar_smooth: false }
    }
}

/// Supervision for a batch of queries.
#[derive(Debug, Clone, Copy)]
pub struct Targets<'a> {
    pub labels: &'a [usize],
    /// Per-frame labels; in frame mode, missing entries fall back to the
    /// sequence label on every frame.
    pub frame_labels: Option<&'a [Option<Vec<usize>>]>,
}

pub type TermOutput = (f64, Vec<Matrix>);

fn check_nonempty(queries: &[Matrix]) -> Result<()> {
    if queries.is_empty() {
        return arg_err("empty query set");
    }
    Ok(())
}

/// `(1/|S|) Σᵢ sdtw_γ(Φᵢ, Mᵢ)`, gradient on the query side only.
pub fn loss_align(queries: &[Matrix], exemplars: &[Matrix], gamma: f64) -> Result<TermOutput> {
    loss_align_with(queries, exemplars, gamma, false)
}

pub fn loss_align_with(queries: &[Matrix], exemplars: &[Matrix], gamma: f64, normalize: bool) -> Result<TermOutput> {
    check_nonempty(queries)?;
    if exemplars.len() != queries.len() {
        return arg_err(format!("{} exemplars for {} queries", exemplars.len(), queries.len()));
    }
    let n = queries.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(queries.len());
    for (q, m) in queries.iter().zip(exemplars) {
        let g = soft_dtw_grad(q, m, gamma)?;
        let scale = if normalize { 1.0 / (n * q.rows() as f64) } else { 1.0 / n };
        total += scale * g.value;
        let mut ga = g.grad_a;
        ga.scale(scale);
        grads.push(ga);
    }
    Ok((total, grads))
}

fn check_label(label: usize, c: usize, where_: &str) -> Result<()> {
    if label >= c {
        return arg_err(format!("label {label} out of range for {c} classes ({where_})"));
    }
    Ok(())
}

/// `(1/|S|) Σᵢ (1/τᵢ) Σₜ −log φᵢₜ[yᵢₜ]`.
pub fn loss_ce_frame(queries: &[Matrix], frame_labels: &[Vec<usize>]) -> Result<TermOutput> {
    check_nonempty(queries)?;
    if frame_labels.len() != queries.len() {
        return arg_err(format!("{} label sequences for {} queries", frame_labels.len(), queries.len()));
    }
    let n = queries.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(queries.len());
    for (i, (q, labels)) in queries.iter().zip(frame_labels).enumerate() {
        if labels.len() != q.rows() {
            return arg_err(format!("query {i}: {} frame labels for {} frames", labels.len(), q.rows()));
        }
        let scale = 1.0 / (n * q.rows() as f64);
        let mut g = Matrix::zeros(q.rows(), q.cols());
        for (t, &y) in labels.iter().enumerate() {
            check_label(y, q.cols(), &format!("query {i} frame {t}"))?;
            let p = q[(t, y)].max(PROB_FLOOR);
            total -= scale * p.ln();
            g[(t, y)] = -scale / p;
        }
        grads.push(g);
    }
    Ok((total, grads))
}

/// `(1/|S|) Σᵢ −log φ̄ᵢ[yᵢ]` with `φ̄ᵢ` the time-averaged prediction.
pub fn loss_ce_sequence(queries: &[Matrix], labels: &[usize]) -> Result<TermOutput> {
    check_nonempty(queries)?;
    if labels.len() != queries.len() {
        return arg_err(format!("{} labels for {} queries", labels.len(), queries.len()));
    }
    let n = queries.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(queries.len());
    for (i, (q, &y)) in queries.iter().zip(labels).enumerate() {
        check_label(y, q.cols(), &format!("query {i}"))?;
        let tau = q.rows() as f64;
        let mean = (0..q.rows()).map(|t| q[(t, y)]).sum::<f64>() / tau;
        let p = mean.max(PROB_FLOOR);
        total -= p.ln() / n;
        let mut g = Matrix::zeros(q.rows(), q.cols());
        let gv = -1.0 / (n * tau * p);
        for t in 0..q.rows() {
            g[(t, y)] = gv;
        }
        grads.push(g);
    }
    Ok((total, grads))
}

/// `(1/|S|) Σᵢ 1/(τᵢ−1) Σₜ ‖φᵢₜ − φᵢ,ₜ₋₁‖²`.
pub fn loss_smooth(queries: &[Matrix]) -> Result<TermOutput> {
    check_nonempty(queries)?;
    let n = queries.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(queries.len());
    for (i, q) in queries.iter().enumerate() {
        if q.rows() < 2 {
            return arg_err(format!("smoothness needs tau >= 2, query {i} has {}", q.rows()));
        }
        let scale = 1.0 / (n * (q.rows() - 1) as f64);
        let mut g = Matrix::zeros(q.rows(), q.cols());
        for t in 1..q.rows() {
            for k in 0..q.cols() {
                let diff = q[(t, k)] - q[(t - 1, k)];
                total += scale * diff * diff;
                g[(t, k)] += 2.0 * scale * diff;
                g[(t - 1, k)] -= 2.0 * scale * diff;
            }
        }
        grads.push(g);
    }
    Ok((total, grads))
}

fn frame_targets(queries: &[Matrix], targets: &Targets<'_>) -> Result<Vec<Vec<usize>>> {
    if targets.labels.len() != queries.len() {
        return arg_err(format!("{} labels for {} queries", targets.labels.len(), queries.len()));
    }
    Ok(queries
        .iter()
        .enumerate()
        .map(|(i, q)| match targets.frame_labels.and_then(|fl| fl.get(i)).and_then(Option::as_ref) {
            Some(fl) => fl.clone(),
            None => vec![targets.labels[i]; q.rows()],
        })
        .collect())
}

fn add_into(acc: &mut [Matrix], grads: &[Matrix], scale: f64) {
    if scale == 0.0 {
        return;
    }
    for (a, g) in acc.iter_mut().zip(grads) {
        a.add_scaled(g, scale);
    }
}

/// `align + α·ce + β·smooth` with per-query gradients summed term-wise.
pub fn loss_total(
    queries: &[Matrix],
    exemplars: Option<&[Matrix]>,
    targets: &Targets<'_>,
    weights: &LossWeights,
    mode: CeMode,
    opts: &LossOptions,
) -> Result<(LossReport, Vec<Matrix>)> {
    check_nonempty(queries)?;
    let mut grads: Vec<Matrix> = queries.iter().map(|q| Matrix::zeros(q.rows(), q.cols())).collect();

    let mut align = 0.0;
    if opts.align {
        let ex = exemplars.ok_or_else(|| crate::Error::Argument("alignment term needs exemplars".into()))?;
        let (v, g) = loss_align_with(queries, ex, weights.gamma, opts.normalize_align)?;
        align = v;
        add_into(&mut grads, &g, 1.0);
    }

    let (mut ce, g) = match mode {
        CeMode::Frame => loss_ce_frame(queries, &frame_targets(queries, targets)?)?,
        CeMode::Sequence => {
            if targets.labels.len() != queries.len() {
                return arg_err(format!("{} labels for {} queries", targets.labels.len(), queries.len()));
            }
            loss_ce_sequence(queries, targets.labels)?
        }
    };
    add_into(&mut grads, &g, weights.alpha);

    let (mut smooth, g) = loss_smooth(queries)?;
    add_into(&mut grads, &g, weights.beta);

    if opts.exemplar_ce || opts.exemplar_smooth {
        let ex = exemplars.ok_or_else(|| crate::Error::Argument("exemplar terms need exemplars".into()))?;
        if opts.exemplar_ce {
            ce += match mode {
                CeMode::Frame => {
                    let labels: Vec<Vec<usize>> =
                        ex.iter().zip(targets.labels).map(|(m, &y)| vec![y; m.rows()]).collect();
                    loss_ce_frame(ex, &labels)?.0
                }
                CeMode::Sequence => loss_ce_sequence(ex, targets.labels)?.0,
            };
        }
        if opts.exemplar_smooth {
            let long: Vec<Matrix> = ex.iter().filter(|m| m.rows() >= 2).cloned().collect();
            if !long.is_empty() {
                smooth += loss_smooth(&long)?.0;
            }
        }
    }

    let total = align + weights.alpha * ce + weights.beta * smooth;
    Ok((LossReport { align, ce, smooth, total }, grads))
}
