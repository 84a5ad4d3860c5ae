//! Grayscale rasters, the time-indexed augmentation operator and the frozen
//! stand-in encoder.

use crate::error::{arg_err, Result};
use crate::model::FeatureSequence;
use crate::numerics::{Matrix, Rng};

use super::schedule::{AugmentationSchedule, FrameParams};

/// Cutout side as a fraction of `min(H, W)`.
const CUTOUT_FRACTION: f64 = 0.2;

/// Single-channel image with pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl RasterImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return arg_err("image must be non-empty");
        }
        if pixels.len() != height * width {
            return arg_err(format!("{} pixels for a {height}x{width} image", pixels.len()));
        }
        if pixels.iter().any(|p| !(p.is_finite() && (0.0..=1.0).contains(p))) {
            return arg_err("pixels must be finite and in [0, 1]");
        }
        Ok(Self { height, width, pixels })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, pixels: vec![0.0; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.pixels[y * self.width + x] = v;
    }

    /// Bilinear sample at a fractional position, zero outside the image.
    fn sample(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let px = |xi: f64, yi: f64| -> f64 {
            if xi < 0.0 || yi < 0.0 || xi >= self.width as f64 || yi >= self.height as f64 {
                0.0
            } else {
                self.get(xi as usize, yi as usize)
            }
        };
        if fx == 0.0 && fy == 0.0 {
            return px(x0, y0);
        }
        let top = px(x0, y0) * (1.0 - fx) + px(x0 + 1.0, y0) * fx;
        let bottom = px(x0, y0 + 1.0) * (1.0 - fx) + px(x0 + 1.0, y0 + 1.0) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Forward 2×2 linear part about the image centre: rotation · shear · zoom.
fn affine_linear(p: &FrameParams) -> [[f64; 2]; 2] {
    let (s, c) = p.rotation_deg.to_radians().sin_cos();
    let sh = p.shear_deg.to_radians().tan();
    let z = p.zoom_factor;
    // R · [[1, sh], [0, 1]] · zI
    [[c * z, (c * sh - s) * z], [s * z, (s * sh + c) * z]]
}

fn warp(img: &RasterImage, p: &FrameParams) -> Result<RasterImage> {
    let a = affine_linear(p);
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if det.abs() < 1e-12 {
        return arg_err("degenerate affine transform");
    }
    let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
    let cx = (img.width - 1) as f64 / 2.0;
    let cy = (img.height - 1) as f64 / 2.0;
    let mut out = RasterImage::zeros(img.height, img.width);
    for y in 0..img.height {
        for x in 0..img.width {
            // dst = A (src − c) + c + t  ⇒  src = A⁻¹ (dst − c − t) + c
            let dx = x as f64 - cx - p.translate_x_px;
            let dy = y as f64 - cy - p.translate_y_px;
            let sx = inv[0][0] * dx + inv[0][1] * dy + cx;
            let sy = inv[1][0] * dx + inv[1][1] * dy + cy;
            out.set(x, y, img.sample(sx, sy).clamp(0.0, 1.0));
        }
    }
    Ok(out)
}

fn gaussian_blur(img: &RasterImage, sigma: f64) -> RasterImage {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.into_iter().map(|k| k / norm).collect();
    let (w, h) = (img.width as isize, img.height as isize);
    let clampi = |v: isize, n: isize| v.clamp(0, n - 1) as usize;
    let mut tmp = RasterImage::zeros(img.height, img.width);
    for y in 0..h {
        for x in 0..w {
            let v: f64 = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * img.get(clampi(x + k as isize - radius, w), y as usize))
                .sum();
            tmp.set(x as usize, y as usize, v);
        }
    }
    let mut out = RasterImage::zeros(img.height, img.width);
    for y in 0..h {
        for x in 0..w {
            let v: f64 = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp.get(x as usize, clampi(y + k as isize - radius, h)))
                .sum();
            out.set(x as usize, y as usize, v.clamp(0.0, 1.0));
        }
    }
    out
}

fn cutout(img: &mut RasterImage, fx: f64, fy: f64) {
    let side = ((CUTOUT_FRACTION * img.width.min(img.height) as f64).round() as usize).max(1);
    let cx = fx * (img.width - 1) as f64;
    let cy = fy * (img.height - 1) as f64;
    let x0 = (cx - side as f64 / 2.0).round().max(0.0) as usize;
    let y0 = (cy - side as f64 / 2.0).round().max(0.0) as usize;
    for y in y0..(y0 + side).min(img.height) {
        for x in x0..(x0 + side).min(img.width) {
            img.set(x, y, 0.0);
        }
    }
}

fn is_identity_affine(p: &FrameParams) -> bool {
    p.rotation_deg == 0.0
        && p.shear_deg == 0.0
        && p.zoom_factor == 1.0
        && p.translate_x_px == 0.0
        && p.translate_y_px == 0.0
}

/// `A_t(X)`: affine warp (bilinear, zero padding), brightness with clamping,
/// Gaussian blur, then cutout, in that order. `t` is 1-based.
pub fn apply_augmentation(img: &RasterImage, schedule: &AugmentationSchedule, t: usize) -> Result<RasterImage> {
    let p = schedule.at(t)?;
    let mut out = if is_identity_affine(&p) { img.clone() } else { warp(img, &p)? };
    if p.brightness != 1.0 {
        out.pixels.iter_mut().for_each(|v| *v = (*v * p.brightness).clamp(0.0, 1.0));
    }
    if p.blur_sigma > 0.0 {
        out = gaussian_blur(&out, p.blur_sigma);
    }
    if let Some((fx, fy)) = p.cutout {
        cutout(&mut out, fx, fy);
    }
    Ok(out)
}

/// Frozen random-projection encoder `z = tanh(P·vec(X))`, `P` drawn i.i.d.
/// normal with variance `1/(H·W)` from the encoder seed.
#[derive(Debug, Clone)]
pub struct Encoder {
    projection: Matrix,
    height: usize,
    width: usize,
}

impl Encoder {
    pub fn new(encoder_seed: u64, height: usize, width: usize, d: usize) -> Result<Self> {
        if d == 0 || height == 0 || width == 0 {
            return arg_err("encoder needs d >= 1 and a non-empty image size");
        }
        let n = height * width;
        let std = 1.0 / (n as f64).sqrt();
        let mut rng = Rng::new(encoder_seed);
        let data: Vec<f64> = (0..d * n).map(|_| std * rng.normal()).collect();
        Ok(Self { projection: Matrix::from_vec(d, n, data)?, height, width })
    }

    pub fn dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn projection(&self) -> &Matrix {
        &self.projection
    }

    pub fn encode(&self, img: &RasterImage) -> Result<Vec<f64>> {
        if img.height != self.height || img.width != self.width {
            return arg_err(format!(
                "encoder built for {}x{} images, got {}x{}",
                self.height, self.width, img.height, img.width
            ));
        }
        Ok(self.projection.mul_vec(&img.pixels).into_iter().map(f64::tanh).collect())
    }
}

pub fn encode(img: &RasterImage, encoder_seed: u64, d: usize) -> Result<Vec<f64>> {
    Encoder::new(encoder_seed, img.height, img.width, d)?.encode(img)
}

/// Frames `z_t = encode(A_t(X))` for `t = 1..=τ`.
pub fn make_image_sequence(
    img: &RasterImage,
    schedule: &AugmentationSchedule,
    encoder: &Encoder,
    id: impl Into<String>,
    label: Option<usize>,
) -> Result<FeatureSequence> {
    let tau = schedule.tau();
    let mut data = Vec::with_capacity(tau * encoder.dim());
    for t in 1..=tau {
        data.extend(encoder.encode(&apply_augmentation(img, schedule, t)?)?);
    }
    FeatureSequence::new(id, Matrix::from_vec(tau, encoder.dim(), data)?, label)
}

/// Class-specific base image: an oriented bar through a jittered centre plus
/// a class-placed blob, on a dark background.
pub fn class_image(class: usize, num_classes: usize, side: usize, rng: &mut Rng) -> RasterImage {
    let angle = std::f64::consts::PI * class as f64 / num_classes.max(1) as f64;
    let (sa, ca) = angle.sin_cos();
    let c = (side - 1) as f64 / 2.0;
    let jx = rng.uniform_range(-0.05, 0.05) * side as f64;
    let jy = rng.uniform_range(-0.05, 0.05) * side as f64;
    let blob_r = 0.3 * side as f64;
    let ba = std::f64::consts::TAU * class as f64 / num_classes.max(1) as f64;
    let (bx, by) = (c + blob_r * ba.cos(), c + blob_r * ba.sin());
    let width = 0.06 * side as f64;
    let mut img = RasterImage::zeros(side, side);
    for y in 0..side {
        for x in 0..side {
            let dx = x as f64 - c - jx;
            let dy = y as f64 - c - jy;
            let perp = -sa * dx + ca * dy;
            let along = ca * dx + sa * dy;
            let bar = if along.abs() < 0.35 * side as f64 { (-(perp * perp) / (2.0 * width * width)).exp() } else { 0.0 };
            let r2 = (x as f64 - bx).powi(2) + (y as f64 - by).powi(2);
            let blob = 0.6 * (-r2 / (2.0 * (0.08 * side as f64).powi(2))).exp();
            img.set(x, y, (0.05 + 0.8 * bar + blob).clamp(0.0, 1.0));
        }
    }
    img
}
