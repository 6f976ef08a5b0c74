//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use gatenet::tensor::{Real, Shape, Tensor};

/// Direct six-loop cross-correlation accumulated in f64.
pub fn naive_conv<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&[T]>, stride: usize, pad: usize, dil: usize) -> Tensor<T> {
    let (xs, ws) = (x.shape(), w.shape());
    let oh = (xs.h() + 2 * pad - dil * (ws.h() - 1) - 1) / stride + 1;
    let ow = (xs.w() + 2 * pad - dil * (ws.w() - 1) - 1) / stride + 1;
    Tensor::from_fn(Shape::new(xs.n(), ws.n(), oh, ow), |n, o, y, xx| {
        let mut acc = b.map_or(0.0, |b| b[o].to_f64().unwrap());
        for c in 0..ws.c() {
            for ki in 0..ws.h() {
                for kj in 0..ws.w() {
                    let iy = (y * stride + ki * dil) as isize - pad as isize;
                    let ix = (xx * stride + kj * dil) as isize - pad as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < xs.h() && (ix as usize) < xs.w() {
                        acc += w.at(o, c, ki, kj).to_f64().unwrap() * x.at(n, c, iy as usize, ix as usize).to_f64().unwrap();
                    }
                }
            }
        }
        T::lit(acc)
    })
}

/// Folded atrous convolution evaluated pixel by pixel in the original resolution:
/// output pixel `(y, x)` of channel `o` is folded channel `4o + 2(y%2) + x%2` at `(y/2, x/2)`,
/// and folded input channel `4c + 2dy + dx` at folded `(i, j)` is original pixel `(2i+dy, 2j+dx)`.
pub fn naive_folded_conv<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&[T]>, dil: usize) -> Tensor<T> {
    let (xs, ws) = (x.shape(), w.shape());
    let k = ws.h() as isize;
    let (fh, fw) = ((xs.h() / 2) as isize, (xs.w() / 2) as isize);
    Tensor::from_fn(Shape::new(xs.n(), ws.n() / 4, xs.h(), xs.w()), |n, o, y, xx| {
        let fo = 4 * o + 2 * (y % 2) + xx % 2;
        let (i, j) = ((y / 2) as isize, (xx / 2) as isize);
        let mut acc = b.map_or(0.0, |b| b[fo].to_f64().unwrap());
        for fc in 0..ws.c() {
            let (c, dy, dx) = (fc / 4, (fc % 4) / 2, fc % 2);
            for ki in 0..k {
                for kj in 0..k {
                    let fi = i + (ki - k / 2) * dil as isize;
                    let fj = j + (kj - k / 2) * dil as isize;
                    if fi < 0 || fj < 0 || fi >= fh || fj >= fw {
                        continue;
                    }
                    let v = x.at(n, c, 2 * fi as usize + dy, 2 * fj as usize + dx);
                    acc += w.at(fo, fc, ki as usize, kj as usize).to_f64().unwrap() * v.to_f64().unwrap();
                }
            }
        }
        T::lit(acc)
    })
}

pub fn naive_fold<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    Tensor::from_fn(Shape::new(s.n(), 4 * s.c(), s.h() / 2, s.w() / 2), |n, oc, i, j| {
        x.at(n, oc / 4, 2 * i + (oc % 4) / 2, 2 * j + oc % 2)
    })
}

/// Half-pixel bilinear sample of one plane, written from the textbook formula.
pub fn naive_bilinear(x: &Tensor<f64>, th: usize, tw: usize) -> Tensor<f64> {
    let s = x.shape();
    Tensor::from_fn(Shape::new(s.n(), s.c(), th, tw), |n, c, y, xx| {
        let sy = ((y as f64 + 0.5) * s.h() as f64 / th as f64 - 0.5).max(0.0);
        let sx = ((xx as f64 + 0.5) * s.w() as f64 / tw as f64 - 0.5).max(0.0);
        let y0 = (sy.floor() as usize).min(s.h() - 1);
        let x0 = (sx.floor() as usize).min(s.w() - 1);
        let y1 = (y0 + 1).min(s.h() - 1);
        let x1 = (x0 + 1).min(s.w() - 1);
        let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
        let top = x.at(n, c, y0, x0) * (1.0 - fx) + x.at(n, c, y0, x1) * fx;
        let bot = x.at(n, c, y1, x0) * (1.0 - fx) + x.at(n, c, y1, x1) * fx;
        top * (1.0 - fy) + bot * fy
    })
}

/// Second, independently written S-measure over row-major grids (MATLAB reference semantics).
pub mod sref {
    const EPS: f64 = 2.220446049250313e-16;

    fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len() as f64
    }

    fn std1(v: &[f64]) -> f64 {
        if v.len() <= 1 {
            return 0.0;
        }
        let m = mean(v);
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    }

    fn object(p: &[f64]) -> f64 {
        let x = mean(p);
        2.0 * x / (x * x + 1.0 + std1(p) + EPS)
    }

    fn ssim(p: &[f64], g: &[f64]) -> f64 {
        let n = p.len() as f64;
        let (x, y) = (mean(p), mean(g));
        let sx2 = p.iter().map(|a| (a - x).powi(2)).sum::<f64>() / (n - 1.0 + EPS);
        let sy2 = g.iter().map(|a| (a - y).powi(2)).sum::<f64>() / (n - 1.0 + EPS);
        let sxy = p.iter().zip(g).map(|(a, b)| (a - x) * (b - y)).sum::<f64>() / (n - 1.0 + EPS);
        let alpha = 4.0 * x * y * sxy;
        let beta = (x * x + y * y) * (sx2 + sy2);
        if alpha != 0.0 {
            alpha / (beta + EPS)
        } else if beta == 0.0 {
            1.0
        } else {
            0.0
        }
    }

    /// 1-based inclusive block `rows r0..=r1`, `cols c0..=c1`; empty when r1 < r0 or c1 < c0.
    fn block(v: &[f64], cols: usize, r0: usize, r1: usize, c0: usize, c1: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for r in r0..=r1 {
            for c in c0..=c1 {
                if r >= 1 && c >= 1 {
                    out.push(v[(r - 1) * cols + (c - 1)]);
                }
            }
        }
        out
    }

    pub fn s_measure(pred: &[f64], gt: &[bool], rows: usize, cols: usize, alpha: f64) -> f64 {
        let g: Vec<f64> = gt.iter().map(|&b| b as u8 as f64).collect();
        let y = mean(&g);
        if y == 0.0 {
            return 1.0 - mean(pred);
        }
        if y == 1.0 {
            return mean(pred);
        }
        // Object term.
        let fg: Vec<f64> = pred.iter().zip(gt).filter(|(_, &b)| b).map(|(&p, _)| p).collect();
        let bg: Vec<f64> = pred.iter().zip(gt).filter(|(_, &b)| !b).map(|(&p, _)| 1.0 - p).collect();
        let so = y * object(&fg) + (1.0 - y) * object(&bg);
        // Region term.
        let total: f64 = g.iter().sum();
        let mut sx = 0.0;
        let mut sy = 0.0;
        for r in 1..=rows {
            for c in 1..=cols {
                sx += g[(r - 1) * cols + c - 1] * c as f64;
                sy += g[(r - 1) * cols + c - 1] * r as f64;
            }
        }
        let x = (sx / total).round() as usize;
        let yy = (sy / total).round() as usize;
        let area = (rows * cols) as f64;
        let w1 = (x * yy) as f64 / area;
        let w2 = ((cols - x) * yy) as f64 / area;
        let w3 = (x * (rows - yy)) as f64 / area;
        let w4 = 1.0 - w1 - w2 - w3;
        let parts = [
            (w1, (1, yy, 1, x)),
            (w2, (1, yy, x + 1, cols)),
            (w3, (yy + 1, rows, 1, x)),
            (w4, (yy + 1, rows, x + 1, cols)),
        ];
        let mut sr = 0.0;
        for (w, (r0, r1, c0, c1)) in parts {
            let pb = block(pred, cols, r0, r1, c0, c1);
            if pb.is_empty() {
                continue;
            }
            let gb = block(&g, cols, r0, r1, c0, c1);
            sr += w * ssim(&pb, &gb);
        }
        (alpha * so + (1.0 - alpha) * sr).max(0.0)
    }
}

/// Exhaustive per-threshold counting: returns `(tp, fp, fn)` for every `t` in `0..=255`.
pub fn enumerate_pr(preds: &[Vec<f64>], gts: &[Vec<bool>]) -> Vec<(u64, u64, u64)> {
    (0..=255u32)
        .map(|t| {
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for (p, g) in preds.iter().zip(gts) {
                for (&v, &y) in p.iter().zip(g) {
                    let level = (v * 255.0).round() as u32;
                    match (level >= t, y) {
                        (true, true) => tp += 1,
                        (true, false) => fp += 1,
                        (false, true) => fn_ += 1,
                        (false, false) => {}
                    }
                }
            }
            (tp, fp, fn_)
        })
        .collect()
}
