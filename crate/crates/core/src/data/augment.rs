//! Training-time augmentation: flip and rotation on image and mask, colour jitter on the image.

use rand::Rng;

use super::Sample;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub hflip_prob: f64,
    pub max_rotation_deg: f64,
    /// Brightness, saturation and contrast factors are drawn from this range.
    pub jitter: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            hflip_prob: 0.5,
            max_rotation_deg: 15.0,
            jitter: (0.8, 1.2),
        }
    }
}

/// One concrete draw of the random transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub hflip: bool,
    pub rotation_deg: f64,
    pub brightness: f64,
    pub saturation: f64,
    pub contrast: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        hflip: false,
        rotation_deg: 0.0,
        brightness: 1.0,
        saturation: 1.0,
        contrast: 1.0,
    };

    pub fn draw<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        let (lo, hi) = cfg.jitter;
        let mut factor = || if lo < hi { rng.gen_range(lo..hi) } else { lo };
        let (brightness, saturation, contrast) = (factor(), factor(), factor());
        let rotation_deg = if cfg.max_rotation_deg > 0.0 {
            rng.gen_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg)
        } else {
            0.0
        };
        AugmentParams {
            hflip: rng.gen_bool(cfg.hflip_prob.clamp(0.0, 1.0)),
            rotation_deg,
            brightness,
            saturation,
            contrast,
        }
    }
}

pub fn augment<R: Rng + ?Sized>(sample: &Sample, cfg: &AugmentConfig, rng: &mut R) -> Sample {
    apply(sample, &AugmentParams::draw(cfg, rng))
}

pub fn apply(sample: &Sample, p: &AugmentParams) -> Sample {
    let mut image = sample.image.clone();
    let mut mask = sample.mask.clone();
    if p.hflip {
        image = hflip(&image);
        mask = hflip(&mask);
    }
    if p.rotation_deg != 0.0 {
        image = rotate(&image, p.rotation_deg, Interp::Bilinear);
        mask = rotate(&mask, p.rotation_deg, Interp::Nearest);
    }
    image = adjust_brightness(&image, p.brightness);
    image = adjust_saturation(&image, p.saturation);
    image = adjust_contrast(&image, p.contrast);
    Sample { image, mask }
}

pub fn hflip(t: &Tensor<f32>) -> Tensor<f32> {
    let w = t.shape().w();
    Tensor::from_fn(t.shape(), |n, c, y, x| t.at(n, c, y, w - 1 - x))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    Bilinear,
    Nearest,
}

/// Rotates about the image centre by `deg` (counter-clockwise on screen). Samples
/// falling outside the source are clamped to the border.
pub fn rotate(t: &Tensor<f32>, deg: f64, interp: Interp) -> Tensor<f32> {
    let s = t.shape();
    let (h, w) = (s.h(), s.w());
    let (sin, cos) = deg.to_radians().sin_cos();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let clamp = |v: f64, n: usize| v.clamp(0.0, (n - 1) as f64);
    Tensor::from_fn(s, |n, c, y, x| {
        let dx = x as f64 + 0.5 - cx;
        let dy = y as f64 + 0.5 - cy;
        // Inverse map: rotate the output offset by -deg to find the source point.
        let sx = cos * dx - sin * dy + cx - 0.5;
        let sy = sin * dx + cos * dy + cy - 0.5;
        match interp {
            Interp::Nearest => t.at(n, c, clamp(sy, h).round() as usize, clamp(sx, w).round() as usize),
            Interp::Bilinear => {
                let (sx, sy) = (clamp(sx, w), clamp(sy, h));
                let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                let (fx, fy) = ((sx - x0 as f64) as f32, (sy - y0 as f64) as f32);
                let top = t.at(n, c, y0, x0) * (1.0 - fx) + t.at(n, c, y0, x1) * fx;
                let bot = t.at(n, c, y1, x0) * (1.0 - fx) + t.at(n, c, y1, x1) * fx;
                top * (1.0 - fy) + bot * fy
            }
        }
    })
}

fn blend(x: f32, other: f32, f: f64) -> f32 {
    let f = f as f32;
    (f * x + (1.0 - f) * other).clamp(0.0, 1.0)
}

fn luma(t: &Tensor<f32>, n: usize, y: usize, x: usize) -> f32 {
    0.299 * t.at(n, 0, y, x) + 0.587 * t.at(n, 1, y, x) + 0.114 * t.at(n, 2, y, x)
}

/// Blend towards black.
pub fn adjust_brightness(t: &Tensor<f32>, f: f64) -> Tensor<f32> {
    t.map(|v| blend(v, 0.0, f))
}

/// Blend towards the per-pixel grey level.
pub fn adjust_saturation(t: &Tensor<f32>, f: f64) -> Tensor<f32> {
    Tensor::from_fn(t.shape(), |n, c, y, x| blend(t.at(n, c, y, x), luma(t, n, y, x), f))
}

/// Blend towards the mean grey level of each image.
pub fn adjust_contrast(t: &Tensor<f32>, f: f64) -> Tensor<f32> {
    let s = t.shape();
    let means: Vec<f32> = (0..s.n())
        .map(|n| {
            let mut acc = 0.0f64;
            for y in 0..s.h() {
                for x in 0..s.w() {
                    acc += luma(t, n, y, x) as f64;
                }
            }
            (acc / (s.h() * s.w()) as f64) as f32
        })
        .collect();
    Tensor::from_fn(s, |n, c, y, x| blend(t.at(n, c, y, x), means[n], f))
}
