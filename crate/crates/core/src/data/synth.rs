//! Procedural salient-object scenes: textured background, low-contrast clutter and
//! one to three coloured foreground shapes whose union is the ground-truth mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Sample;
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Allowed foreground coverage of a generated mask.
pub const FG_FRACTION: (f64, f64) = (0.02, 0.6);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Ellipse,
    Rectangle,
    Blob,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub count: usize,
    pub size: usize,
    pub shapes: Vec<ShapeKind>,
    /// Inclusive range for the number of background distractors per image.
    pub distractors: (usize, usize),
    /// Range of the value (brightness) gap between foreground and background.
    pub contrast: (f64, f64),
}

impl SynthSpec {
    pub fn new(seed: u64, count: usize, size: usize) -> Self {
        SynthSpec {
            seed,
            count,
            size,
            shapes: vec![ShapeKind::Ellipse, ShapeKind::Rectangle, ShapeKind::Blob],
            distractors: (2, 5),
            contrast: (0.1, 0.6),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Invalid("synthetic dataset needs count >= 1".into()));
        }
        if self.size == 0 || !self.size.is_multiple_of(2) {
            return Err(Error::Invalid(format!("image size must be even and positive, got {}", self.size)));
        }
        if self.shapes.is_empty() {
            return Err(Error::Invalid("no foreground shape kinds enabled".into()));
        }
        if self.distractors.0 > self.distractors.1 {
            return Err(Error::Invalid("distractor range is reversed".into()));
        }
        let (lo, hi) = self.contrast;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(Error::Invalid(format!("contrast range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1")));
        }
        Ok(())
    }
}

/// Geometry of one drawn shape, in pixel units (pixel `(x, y)` has centre `(x+0.5, y+0.5)`).
#[derive(Debug, Clone, PartialEq)]
pub enum Figure {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64, angle: f64 },
    Rectangle { cx: f64, cy: f64, hw: f64, hh: f64, angle: f64 },
    Polygon { vertices: Vec<(f64, f64)> },
}

impl Figure {
    pub fn contains(&self, px: f64, py: f64) -> bool {
        match *self {
            Figure::Ellipse { cx, cy, rx, ry, angle } => {
                let (u, v) = rotate_into(px - cx, py - cy, angle);
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Figure::Rectangle { cx, cy, hw, hh, angle } => {
                let (u, v) = rotate_into(px - cx, py - cy, angle);
                u.abs() <= hw && v.abs() <= hh
            }
            Figure::Polygon { ref vertices } => {
                let mut inside = false;
                let n = vertices.len();
                for i in 0..n {
                    let (xi, yi) = vertices[i];
                    let (xj, yj) = vertices[(i + n - 1) % n];
                    if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                }
                inside
            }
        }
    }

    /// Pixel-centre rasterisation on a `size×size` grid, row-major.
    pub fn rasterize(&self, size: usize) -> Vec<bool> {
        let mut out = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                out.push(self.contains(x as f64 + 0.5, y as f64 + 0.5));
            }
        }
        out
    }
}

fn rotate_into(dx: f64, dy: f64, angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (c * dx + s * dy, -s * dx + c * dy)
}

/// A generated sample together with the foreground figures that define its mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub sample: Sample,
    pub foreground: Vec<Figure>,
}

/// Generates `spec.count` samples. Sample `i` depends only on `(spec, i)`.
pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<SynthSample>> {
    spec.validate()?;
    (0..spec.count).map(|i| synth_sample(spec, i)).collect()
}

const MAX_ATTEMPTS: usize = 1000;

pub fn synth_sample(spec: &SynthSpec, index: usize) -> Result<SynthSample> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let s = spec.size;

    let bg_hue = rng.gen_range(0.0..1.0);
    let bg_sat = rng.gen_range(0.15..0.5);
    let bg_val = rng.gen_range(0.25..0.75);
    let noise = [value_noise(&mut rng, s, 4), value_noise(&mut rng, s, 9)];
    let base = hsv_to_rgb(bg_hue, bg_sat, bg_val);
    let mut img = vec![[0.0f64; 3]; s * s];
    for (p, px) in img.iter_mut().enumerate() {
        let t = 0.12 * (noise[0][p] - 0.5) + 0.06 * (noise[1][p] - 0.5);
        for c in 0..3 {
            px[c] = base[c] + t;
        }
    }

    let n_distract = rng.gen_range(spec.distractors.0..=spec.distractors.1);
    for _ in 0..n_distract {
        let kind = spec.shapes[rng.gen_range(0..spec.shapes.len())];
        let fig = random_figure(&mut rng, kind, s, (0.04, 0.12));
        let shift = rng.gen_range(-0.06..0.06);
        let hue = bg_hue + rng.gen_range(-0.05..0.05);
        let col = hsv_to_rgb(hue.rem_euclid(1.0), bg_sat, (bg_val + shift).clamp(0.0, 1.0));
        paint(&mut img, &fig, s, col, None);
    }

    let mut attempts = 0;
    let (figures, colours) = loop {
        attempts += 1;
        if attempts > MAX_ATTEMPTS {
            return Err(Error::Data(format!("sample {index}: could not meet the foreground fraction bounds")));
        }
        let k = rng.gen_range(1..=3usize);
        let mut figs = Vec::with_capacity(k);
        let mut cols = Vec::with_capacity(k);
        for _ in 0..k {
            let kind = spec.shapes[rng.gen_range(0..spec.shapes.len())];
            figs.push(random_figure(&mut rng, kind, s, (0.1, 0.3)));
            let hue = (bg_hue + rng.gen_range(0.25..0.75)).rem_euclid(1.0);
            let contrast = rng.gen_range(spec.contrast.0..=spec.contrast.1);
            let val = if bg_val + contrast <= 1.0 && (bg_val - contrast < 0.0 || rng.gen_bool(0.5)) {
                bg_val + contrast
            } else {
                bg_val - contrast
            };
            cols.push(hsv_to_rgb(hue, rng.gen_range(0.55..0.95), val));
        }
        let mask = union_mask(&figs, s);
        let frac = mask.iter().filter(|&&m| m).count() as f64 / (s * s) as f64;
        if (FG_FRACTION.0..=FG_FRACTION.1).contains(&frac) {
            break (figs, cols);
        }
    };

    for (fig, col) in figures.iter().zip(&colours) {
        paint(&mut img, fig, s, *col, Some(&noise[1]));
    }
    let mask = union_mask(&figures, s);

    let image = Tensor::from_fn(Shape::new(1, 3, s, s), |_, c, y, x| img[y * s + x][c].clamp(0.0, 1.0) as f32);
    let mask = Tensor::from_fn(Shape::new(1, 1, s, s), |_, _, y, x| if mask[y * s + x] { 1.0 } else { 0.0 });
    Ok(SynthSample {
        sample: Sample { image, mask },
        foreground: figures,
    })
}

fn union_mask(figs: &[Figure], s: usize) -> Vec<bool> {
    let mut mask = vec![false; s * s];
    for f in figs {
        for (m, r) in mask.iter_mut().zip(f.rasterize(s)) {
            *m |= r;
        }
    }
    mask
}

fn paint(img: &mut [[f64; 3]], fig: &Figure, s: usize, col: [f64; 3], texture: Option<&Vec<f64>>) {
    for (p, inside) in fig.rasterize(s).into_iter().enumerate() {
        if inside {
            let t = texture.map_or(0.0, |n| 0.05 * (n[p] - 0.5));
            for c in 0..3 {
                img[p][c] = col[c] + t;
            }
        }
    }
}

/// `radius` is a fraction of the image side.
fn random_figure(rng: &mut ChaCha8Rng, kind: ShapeKind, s: usize, radius: (f64, f64)) -> Figure {
    let sf = s as f64;
    let (rlo, rhi) = radius;
    let cx = rng.gen_range(0.15..0.85) * sf;
    let cy = rng.gen_range(0.15..0.85) * sf;
    let angle = rng.gen_range(0.0..std::f64::consts::PI);
    match kind {
        ShapeKind::Ellipse => Figure::Ellipse {
            cx,
            cy,
            rx: rng.gen_range(rlo..rhi) * sf,
            ry: rng.gen_range(rlo..rhi) * sf,
            angle,
        },
        ShapeKind::Rectangle => Figure::Rectangle {
            cx,
            cy,
            hw: rng.gen_range(rlo..rhi) * sf,
            hh: rng.gen_range(rlo..rhi) * sf,
            angle,
        },
        ShapeKind::Blob => {
            let n = rng.gen_range(5..=9);
            let rad = rng.gen_range(rlo..rhi) * sf;
            let vertices = (0..n)
                .map(|i| {
                    let a = angle + (i as f64 + rng.gen_range(-0.3..0.3)) * std::f64::consts::TAU / n as f64;
                    let rr = rad * rng.gen_range(0.6..1.0);
                    (cx + rr * a.cos(), cy + rr * a.sin())
                })
                .collect();
            Figure::Polygon { vertices }
        }
    }
}

/// Smooth value noise in `[0,1]`: a random `cells+1` lattice with smoothstep interpolation.
fn value_noise(rng: &mut ChaCha8Rng, s: usize, cells: usize) -> Vec<f64> {
    let g = cells + 1;
    let lattice: Vec<f64> = (0..g * g).map(|_| rng.gen_range(0.0..1.0)).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(s * s);
    for y in 0..s {
        let fy = (y as f64 + 0.5) / s as f64 * cells as f64;
        let y0 = (fy.floor() as usize).min(cells - 1);
        let ty = smooth(fy - y0 as f64);
        for x in 0..s {
            let fx = (x as f64 + 0.5) / s as f64 * cells as f64;
            let x0 = (fx.floor() as usize).min(cells - 1);
            let tx = smooth(fx - x0 as f64);
            let at = |i: usize, j: usize| lattice[i * g + j];
            let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
            let bot = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match (i as i64).rem_euclid(6) {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}
