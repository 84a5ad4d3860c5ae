//! Time-indexed augmentation parameters interpolated linearly between
//! sampled endpoints.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::numerics::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugKind {
    RotationDeg,
    TranslateXPx,
    TranslateYPx,
    ZoomFactor,
    ShearDeg,
    Brightness,
    BlurSigma,
    /// Cutout centre, as a fraction of the image width.
    CutoutX,
    /// Cutout centre, as a fraction of the image height.
    CutoutY,
}

impl AugKind {
    pub const ALL: [AugKind; 9] = [
        AugKind::RotationDeg,
        AugKind::TranslateXPx,
        AugKind::TranslateYPx,
        AugKind::ZoomFactor,
        AugKind::ShearDeg,
        AugKind::Brightness,
        AugKind::BlurSigma,
        AugKind::CutoutX,
        AugKind::CutoutY,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugKind::RotationDeg => "rotation_deg",
            AugKind::TranslateXPx => "translate_x_px",
            AugKind::TranslateYPx => "translate_y_px",
            AugKind::ZoomFactor => "zoom_factor",
            AugKind::ShearDeg => "shear_deg",
            AugKind::Brightness => "brightness",
            AugKind::BlurSigma => "blur_sigma",
            AugKind::CutoutX => "cutout_x",
            AugKind::CutoutY => "cutout_y",
        }
    }

    /// Value at which the kind has no effect. Cutout has none; it is applied
    /// only when its tracks are present.
    pub fn neutral(self) -> f64 {
        match self {
            AugKind::ZoomFactor | AugKind::Brightness => 1.0,
            AugKind::CutoutX | AugKind::CutoutY => 0.5,
            _ => 0.0,
        }
    }

    /// Allowed endpoint range; translations scale with the image side.
    pub fn range(self, image_side: usize) -> (f64, f64) {
        let t = 0.25 * image_side as f64;
        match self {
            AugKind::RotationDeg => (-45.0, 45.0),
            AugKind::TranslateXPx | AugKind::TranslateYPx => (-t, t),
            AugKind::ZoomFactor => (0.7, 1.3),
            AugKind::ShearDeg => (-15.0, 15.0),
            AugKind::Brightness => (0.6, 1.4),
            AugKind::BlurSigma => (0.0, 2.0),
            AugKind::CutoutX | AugKind::CutoutY => (0.0, 1.0),
        }
    }
}

impl fmt::Display for AugKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AugKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AugKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown augmentation kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub kind: AugKind,
    pub start: f64,
    pub end: f64,
}

/// Resolved parameter values at one time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameParams {
    pub rotation_deg: f64,
    pub translate_x_px: f64,
    pub translate_y_px: f64,
    pub zoom_factor: f64,
    pub shear_deg: f64,
    pub brightness: f64,
    pub blur_sigma: f64,
    /// `(x, y)` centre fractions when cutout is active.
    pub cutout: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSchedule {
    tau: usize,
    tracks: Vec<Track>,
}

impl AugmentationSchedule {
    pub fn new(tau: usize, tracks: Vec<Track>) -> Result<Self> {
        if tau == 0 {
            return arg_err("schedule length must be >= 1");
        }
        let mut seen = Vec::new();
        for t in &tracks {
            if seen.contains(&t.kind) {
                return arg_err(format!("duplicate track {}", t.kind));
            }
            if !(t.start.is_finite() && t.end.is_finite()) {
                return arg_err(format!("track {} has non-finite endpoints", t.kind));
            }
            seen.push(t.kind);
        }
        Ok(Self { tau, tracks })
    }

    /// No tracks: every frame is the untouched image.
    pub fn identity(tau: usize) -> Self {
        Self { tau, tracks: Vec::new() }
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn track(&self, kind: AugKind) -> Option<&Track> {
        self.tracks.iter().find(|t| t.kind == kind)
    }

    /// `p_t = p_start + (t−1)/(τ−1)·(p_end − p_start)` for 1-based `t`.
    pub fn value(&self, kind: AugKind, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(match self.track(kind) {
            Some(tr) => interpolate(tr, t, self.tau),
            None => kind.neutral(),
        })
    }

    pub fn at(&self, t: usize) -> Result<FrameParams> {
        self.check_t(t)?;
        let v = |k: AugKind| self.track(k).map_or(k.neutral(), |tr| interpolate(tr, t, self.tau));
        let cutout = match (self.track(AugKind::CutoutX), self.track(AugKind::CutoutY)) {
            (None, None) => None,
            _ => Some((v(AugKind::CutoutX), v(AugKind::CutoutY))),
        };
        Ok(FrameParams {
            rotation_deg: v(AugKind::RotationDeg),
            translate_x_px: v(AugKind::TranslateXPx),
            translate_y_px: v(AugKind::TranslateYPx),
            zoom_factor: v(AugKind::ZoomFactor),
            shear_deg: v(AugKind::ShearDeg),
            brightness: v(AugKind::Brightness),
            blur_sigma: v(AugKind::BlurSigma),
            cutout,
        })
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.tau {
            return arg_err(format!("time index {t} outside 1..={}", self.tau));
        }
        Ok(())
    }
}

fn interpolate(tr: &Track, t: usize, tau: usize) -> f64 {
    if tau == 1 {
        return tr.start;
    }
    tr.start + (t - 1) as f64 / (tau - 1) as f64 * (tr.end - tr.start)
}

/// Endpoints drawn uniformly from each kind's range.
pub fn schedule_sample(tau: usize, kinds: &[AugKind], image_side: usize, rng: &mut Rng) -> Result<AugmentationSchedule> {
    if tau < 2 {
        return arg_err(format!("schedule needs tau >= 2, got {tau}"));
    }
    let mut kinds = kinds.to_vec();
    kinds.sort();
    kinds.dedup();
    let tracks = kinds
        .into_iter()
        .map(|kind| {
            let (lo, hi) = kind.range(image_side);
            let start = rng.uniform_range(lo, hi);
            let end = rng.uniform_range(lo, hi);
            Track { kind, start, end }
        })
        .collect();
    AugmentationSchedule::new(tau, tracks)
}

/// Parses kind names, e.g. from a config list.
pub fn parse_kinds<S: AsRef<str>>(names: &[S]) -> Result<Vec<AugKind>> {
    names.iter().map(|n| n.as_ref().parse()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoint() {
        let mut rng = Rng::new(1);
        let s = schedule_sample(3, &AugKind::ALL, 32, &mut rng).unwrap();
        for tr in s.tracks() {
            assert_eq!(s.value(tr.kind, 1).unwrap(), tr.start);
            assert_eq!(s.value(tr.kind, 3).unwrap(), tr.end);
            let mid = s.value(tr.kind, 2).unwrap();
            assert!((mid - (tr.start + tr.end) / 2.0).abs() < 1e-12);
            let (lo, hi) = tr.kind.range(32);
            assert!(tr.start >= lo && tr.start <= hi && tr.end >= lo && tr.end <= hi);
        }
        assert!(s.value(AugKind::ZoomFactor, 0).is_err());
        assert!(s.value(AugKind::ZoomFactor, 4).is_err());
    }

    #[test]
    fn increments_are_constant() {
        let mut rng = Rng::new(2);
        for tau in [2, 5, 17, 64] {
            let s = schedule_sample(tau, &AugKind::ALL, 40, &mut rng).unwrap();
            for tr in s.tracks() {
                let vals: Vec<f64> = (1..=tau).map(|t| s.value(tr.kind, t).unwrap()).collect();
                let step = (tr.end - tr.start) / (tau - 1) as f64;
                let scale = tr.start.abs().max(tr.end.abs()).max(1.0);
                for w in vals.windows(2) {
                    assert!((w[1] - w[0] - step).abs() <= 8.0 * f64::EPSILON * scale);
                }
            }
        }
    }

    #[test]
    fn kind_names() {
        for k in AugKind::ALL {
            assert_eq!(k.name().parse::<AugKind>().unwrap(), k);
        }
        assert!("flip".parse::<AugKind>().is_err());
        assert!(parse_kinds(&["rotation_deg", "nope"]).is_err());
        assert!(schedule_sample(1, &[AugKind::RotationDeg], 8, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn identity_is_neutral() {
        let s = AugmentationSchedule::identity(4);
        let p = s.at(2).unwrap();
        assert_eq!(p.zoom_factor, 1.0);
        assert_eq!(p.brightness, 1.0);
        assert_eq!(p.rotation_deg, 0.0);
        assert!(p.cutout.is_none());
    }
}
