//! Episodic sampling of queries and same-class support sets.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::model::FeatureSequence;
use crate::numerics::Rng;

use super::image::{make_image_sequence, Encoder, RasterImage};
use super::schedule::{schedule_sample, AugKind, AugmentationSchedule};

/// One training unit: queries, a support set per query and, for sequences
/// generated on the fly, the schedule shared by a query and its supports.
#[derive(Debug, Clone)]
pub struct Episode {
    pub queries: Vec<FeatureSequence>,
    pub supports: Vec<Vec<FeatureSequence>>,
    pub schedules: Vec<Option<AugmentationSchedule>>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.queries.iter().map(|q| q.label.unwrap_or(0)).collect()
    }

    /// Disjointness, label agreement and schedule sharing.
    pub fn validate(&self) -> Result<()> {
        if self.supports.len() != self.queries.len() || self.schedules.len() != self.queries.len() {
            return arg_err("episode queries, supports and schedules differ in length");
        }
        let query_ids: Vec<&str> = self.queries.iter().map(|q| q.id.as_str()).collect();
        for (i, (q, sup)) in self.queries.iter().zip(&self.supports).enumerate() {
            if sup.is_empty() {
                return arg_err(format!("query {i} has an empty support set"));
            }
            for s in sup {
                if query_ids.contains(&s.id.as_str()) {
                    return arg_err(format!("support {:?} is also a query", s.id));
                }
                if s.label != q.label {
                    return arg_err(format!("support {:?} label differs from query {:?}", s.id, q.id));
                }
            }
        }
        Ok(())
    }
}

/// Groups dataset indices by label.
fn by_class(dataset: &[FeatureSequence]) -> Result<BTreeMap<usize, Vec<usize>>> {
    let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.iter().enumerate() {
        let label = s.label.ok_or_else(|| crate::Error::Argument(format!("sequence {:?} has no label", s.id)))?;
        out.entry(label).or_default().push(i);
    }
    Ok(out)
}

/// Draws `batch` queries (class uniformly at random, then a member without
/// replacement) and `n_support` supports per query from the same class's
/// non-query members. With `share_class_supports`, queries of one class
/// share a single support draw.
pub fn sample_episode(
    dataset: &[FeatureSequence],
    batch: usize,
    n_support: usize,
    share_class_supports: bool,
    rng: &mut Rng,
) -> Result<Episode> {
    if batch == 0 || n_support == 0 {
        return arg_err("batch and n_support must be >= 1");
    }
    let classes = by_class(dataset)?;
    let labels: Vec<usize> = classes.keys().copied().collect();
    if labels.is_empty() {
        return arg_err("empty dataset");
    }
    for (&c, members) in &classes {
        if members.len() < n_support + 1 {
            return arg_err(format!(
                "class {c} has {} sequences, needs at least {} for N={n_support}",
                members.len(),
                n_support + 1
            ));
        }
    }

    // class draws first, in query order
    let draws: Vec<usize> = (0..batch).map(|_| labels[rng.below(labels.len())]).collect();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in &draws {
        *counts.entry(c).or_default() += 1;
    }
    let mut picked: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut remainder: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (&c, &k) in &counts {
        let members = &classes[&c];
        if members.len() < k + n_support {
            return arg_err(format!(
                "class {c} has {} sequences, too few for {k} queries plus N={n_support} supports",
                members.len()
            ));
        }
        let mut order = rng.sample_indices(members.len(), members.len());
        let rest = order.split_off(k);
        picked.insert(c, order.into_iter().map(|j| members[j]).collect());
        remainder.insert(c, rest.into_iter().map(|j| members[j]).collect());
    }
    let mut shared: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    if share_class_supports {
        for (&c, rest) in &remainder {
            shared.insert(c, rng.sample_indices(rest.len(), n_support).into_iter().map(|j| rest[j]).collect());
        }
    }

    let mut cursor: BTreeMap<usize, usize> = BTreeMap::new();
    let mut queries = Vec::with_capacity(batch);
    let mut supports = Vec::with_capacity(batch);
    for &c in &draws {
        let pos = cursor.entry(c).or_default();
        queries.push(dataset[picked[&c][*pos]].clone());
        *pos += 1;
        let idx: Vec<usize> = if share_class_supports {
            shared[&c].clone()
        } else {
            let rest = &remainder[&c];
            rng.sample_indices(rest.len(), n_support).into_iter().map(|j| rest[j]).collect()
        };
        supports.push(idx.into_iter().map(|j| dataset[j].clone()).collect());
    }
    Ok(Episode { queries, supports, schedules: vec![None; batch] })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportSource {
    /// Supports come from other images of the query's class.
    #[default]
    SameClass,
    /// Supports are re-renderings of the query's own image with fresh pixel
    /// noise.
    SameImage,
}

/// On-the-fly episodes from labelled base images: each query image gets a
/// freshly sampled schedule which its supports reuse unchanged.
#[derive(Debug, Clone)]
pub struct ImageEpisodeSampler {
    pub images: Vec<(String, RasterImage, usize)>,
    pub encoder: Encoder,
    pub tau: usize,
    pub kinds: Vec<AugKind>,
    pub support_source: SupportSource,
    /// Pixel noise for same-image supports.
    pub pixel_noise: f64,
}

impl ImageEpisodeSampler {
    pub fn sample(&self, batch: usize, n_support: usize, rng: &mut Rng) -> Result<Episode> {
        if batch == 0 || n_support == 0 {
            return arg_err("batch and n_support must be >= 1");
        }
        let mut classes: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, (_, _, c)) in self.images.iter().enumerate() {
            classes.entry(*c).or_default().push(i);
        }
        let labels: Vec<usize> = classes.keys().copied().collect();
        if labels.is_empty() {
            return arg_err("no images");
        }
        let mut queries = Vec::with_capacity(batch);
        let mut supports = Vec::with_capacity(batch);
        let mut schedules = Vec::with_capacity(batch);
        let mut used: Vec<usize> = Vec::new();
        for b in 0..batch {
            let c = labels[rng.below(labels.len())];
            let free: Vec<usize> = classes[&c].iter().copied().filter(|i| !used.contains(i)).collect();
            let needed = match self.support_source {
                SupportSource::SameClass => n_support + 1,
                SupportSource::SameImage => 1,
            };
            if free.len() < needed {
                return arg_err(format!("class {c} has too few unused images for a query with N={n_support}"));
            }
            let qi = free[rng.below(free.len())];
            used.push(qi);
            let side = self.images[qi].1.width().min(self.images[qi].1.height());
            let schedule = schedule_sample(self.tau, &self.kinds, side, rng)?;
            let (qid, qimg, _) = &self.images[qi];
            queries.push(make_image_sequence(qimg, &schedule, &self.encoder, format!("{qid}@q{b}"), Some(c))?);
            let mut sup = Vec::with_capacity(n_support);
            match self.support_source {
                SupportSource::SameClass => {
                    let others: Vec<usize> = free.iter().copied().filter(|&i| i != qi).collect();
                    for j in rng.sample_indices(others.len(), n_support) {
                        let (sid, simg, _) = &self.images[others[j]];
                        sup.push(make_image_sequence(simg, &schedule, &self.encoder, format!("{sid}@s{b}"), Some(c))?);
                    }
                }
                SupportSource::SameImage => {
                    for k in 0..n_support {
                        let noisy: Vec<f64> = qimg
                            .pixels()
                            .iter()
                            .map(|p| (p + self.pixel_noise * rng.normal()).clamp(0.0, 1.0))
                            .collect();
                        let img = RasterImage::new(qimg.height(), qimg.width(), noisy)?;
                        sup.push(make_image_sequence(&img, &schedule, &self.encoder, format!("{qid}@s{b}.{k}"), Some(c))?);
                    }
                }
            }
            supports.push(sup);
            schedules.push(Some(schedule));
        }
        Ok(Episode { queries, supports, schedules })
    }
}
