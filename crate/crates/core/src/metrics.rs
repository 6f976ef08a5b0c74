//! Saliency evaluation: PR curve over 256 thresholds, max F-measure, MAE and S-measure.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{list_stems, netpbm};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Weight of precision against recall in the F-measure.
pub const BETA2: f64 = 0.3;
/// Balance between object- and region-aware terms of the S-measure.
pub const S_ALPHA: f64 = 0.5;
pub const THRESHOLDS: usize = 256;

/// A saliency map with values in `[0,1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    h: usize,
    w: usize,
    values: Vec<f64>,
}

impl ScoreMap {
    /// Takes values already in `[0,1]`.
    pub fn new(h: usize, w: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != h * w || h == 0 || w == 0 {
            return Err(Error::shape("score map", format!("{} values for {h}×{w}", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Invalid(format!("score {v} outside [0,1]")));
        }
        Ok(ScoreMap { h, w, values })
    }

    /// Min–max normalises raw scores. A constant map is only clamped to `[0,1]`,
    /// since stretching it would be undefined.
    pub fn normalized(h: usize, w: usize, raw: Vec<f64>) -> Result<Self> {
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite value in score map".into()));
        }
        let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let values = if hi > lo {
            raw.iter().map(|v| (v - lo) / (hi - lo)).collect()
        } else {
            raw.iter().map(|v| v.clamp(0.0, 1.0)).collect()
        };
        Self::new(h, w, values)
    }

    /// Normalised map from plane `(n, 0)` of a `(b,1,h,w)` tensor.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, n: usize) -> Result<Self> {
        let s = t.shape();
        let raw = t.plane(n, 0).iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
        Self::normalized(s.h(), s.w(), raw)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The 8-bit level `round(255·v)` of every pixel.
    pub fn levels(&self) -> impl Iterator<Item = u8> + '_ {
        self.values.iter().map(|&v| netpbm::quantize(v))
    }
}

/// A strictly binary ground-truth map, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    h: usize,
    w: usize,
    values: Vec<bool>,
}

impl BinaryMask {
    pub fn new(h: usize, w: usize, values: Vec<bool>) -> Result<Self> {
        if values.len() != h * w || h == 0 || w == 0 {
            return Err(Error::shape("binary mask", format!("{} values for {h}×{w}", values.len())));
        }
        Ok(BinaryMask { h, w, values })
    }

    /// Plane `(n, 0)` of a tensor holding only zeros and ones.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, n: usize) -> Result<Self> {
        let s = t.shape();
        let mut values = Vec::with_capacity(s.plane());
        for &v in t.plane(n, 0) {
            if v == T::one() {
                values.push(true);
            } else if v == T::zero() {
                values.push(false);
            } else {
                return Err(Error::Data(format!("mask value {v} is not binary")));
            }
        }
        Self::new(s.h(), s.w(), values)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn foreground(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }
}

fn check_dims(pred: &ScoreMap, gt: &BinaryMask) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape(
            "metrics",
            format!("prediction {:?} vs ground truth {:?}", pred.dims(), gt.dims()),
        ));
    }
    Ok(())
}

fn check_pairs(preds: &[ScoreMap], gts: &[BinaryMask]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::Invalid(format!("{} predictions for {} ground truths", preds.len(), gts.len())));
    }
    if preds.is_empty() {
        return Err(Error::Invalid("no prediction/ground-truth pairs".into()));
    }
    preds.iter().zip(gts).try_for_each(|(p, g)| check_dims(p, g))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: u8,
    pub precision: f64,
    pub recall: f64,
}

/// Dataset-level confusion counts per threshold `t`: a pixel is predicted salient when its level is `≥ t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
}

pub fn pr_counts(preds: &[ScoreMap], gts: &[BinaryMask]) -> Result<PrCounts> {
    check_pairs(preds, gts)?;
    // Histogram of levels split by ground truth, then suffix sums over thresholds.
    let mut fg_hist = [0u64; THRESHOLDS];
    let mut bg_hist = [0u64; THRESHOLDS];
    for (p, g) in preds.iter().zip(gts) {
        for (q, &y) in p.levels().zip(g.values()) {
            if y {
                fg_hist[q as usize] += 1;
            } else {
                bg_hist[q as usize] += 1;
            }
        }
    }
    let total_fg: u64 = fg_hist.iter().sum();
    let mut tp = vec![0; THRESHOLDS];
    let mut fp = vec![0; THRESHOLDS];
    let (mut acc_fg, mut acc_bg) = (0, 0);
    for t in (0..THRESHOLDS).rev() {
        acc_fg += fg_hist[t];
        acc_bg += bg_hist[t];
        tp[t] = acc_fg;
        fp[t] = acc_bg;
    }
    let fn_ = tp.iter().map(|&t| total_fg - t).collect();
    Ok(PrCounts { tp, fp, fn_ })
}

impl PrCounts {
    pub fn curve(&self) -> Vec<PrPoint> {
        (0..THRESHOLDS)
            .map(|t| {
                let (tp, fp, fn_) = (self.tp[t] as f64, self.fp[t] as f64, self.fn_[t] as f64);
                PrPoint {
                    threshold: t as u8,
                    precision: if tp + fp == 0.0 { 1.0 } else { tp / (tp + fp) },
                    recall: if tp + fn_ == 0.0 { 1.0 } else { tp / (tp + fn_) },
                }
            })
            .collect()
    }
}

pub fn pr_curve(preds: &[ScoreMap], gts: &[BinaryMask]) -> Result<Vec<PrPoint>> {
    Ok(pr_counts(preds, gts)?.curve())
}

/// `(1+β²)·p·r / (β²·p + r)`, zero when both are zero.
pub fn f_beta(p: f64, r: f64, beta2: f64) -> f64 {
    let den = beta2 * p + r;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + beta2) * p * r / den
    }
}

pub fn f_measure_max(preds: &[ScoreMap], gts: &[BinaryMask], beta2: f64) -> Result<f64> {
    Ok(max_f(&pr_curve(preds, gts)?, beta2))
}

fn max_f(curve: &[PrPoint], beta2: f64) -> f64 {
    curve
        .iter()
        .map(|p| f_beta(p.precision, p.recall, beta2))
        .fold(0.0, f64::max)
}

fn mean_f(curve: &[PrPoint], beta2: f64) -> f64 {
    curve.iter().map(|p| f_beta(p.precision, p.recall, beta2)).sum::<f64>() / curve.len() as f64
}

/// Mean absolute difference between map and mask.
pub fn mae(pred: &ScoreMap, gt: &BinaryMask) -> Result<f64> {
    check_dims(pred, gt)?;
    let sum: f64 = pred
        .values()
        .iter()
        .zip(gt.values())
        .map(|(&p, &y)| (p - if y { 1.0 } else { 0.0 }).abs())
        .sum();
    Ok(sum / pred.values().len() as f64)
}

const EPS: f64 = f64::EPSILON;

/// Structure measure `α·S_o + (1−α)·S_r`, clamped at zero.
///
/// An all-background ground truth scores `1 − mean(pred)`, an all-foreground one `mean(pred)`.
pub fn s_measure(pred: &ScoreMap, gt: &BinaryMask, alpha: f64) -> Result<f64> {
    check_dims(pred, gt)?;
    let (so, sr) = match s_components(pred, gt)? {
        SComponents::Degenerate(q) => return Ok(q),
        SComponents::Split { object, region } => (object, region),
    };
    Ok((alpha * so + (1.0 - alpha) * sr).max(0.0))
}

/// The two halves of the S-measure, or the fallback score of a single-class mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SComponents {
    Degenerate(f64),
    Split { object: f64, region: f64 },
}

pub fn s_components(pred: &ScoreMap, gt: &BinaryMask) -> Result<SComponents> {
    check_dims(pred, gt)?;
    let n = pred.values().len() as f64;
    let fg = gt.foreground();
    let mean_pred = pred.values().iter().sum::<f64>() / n;
    if fg == 0 {
        return Ok(SComponents::Degenerate(1.0 - mean_pred));
    }
    if fg == gt.values().len() {
        return Ok(SComponents::Degenerate(mean_pred));
    }
    Ok(SComponents::Split {
        object: s_object(pred, gt),
        region: s_region(pred, gt),
    })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn object_score(xs: &[f64]) -> f64 {
    let (mean, std) = mean_std(xs);
    2.0 * mean / (mean * mean + 1.0 + std + EPS)
}

fn s_object(pred: &ScoreMap, gt: &BinaryMask) -> f64 {
    let (mut fg, mut bg) = (Vec::new(), Vec::new());
    for (&p, &y) in pred.values().iter().zip(gt.values()) {
        if y {
            fg.push(p);
        } else {
            bg.push(1.0 - p);
        }
    }
    let u = fg.len() as f64 / gt.values().len() as f64;
    u * object_score(&fg) + (1.0 - u) * object_score(&bg)
}

/// Split point `(x, y)`: the rounded 1-based foreground centroid, so the left/top blocks
/// span columns/rows `0..x` / `0..y`.
pub fn centroid(gt: &BinaryMask) -> (usize, usize) {
    let (h, w) = gt.dims();
    let total = gt.foreground();
    if total == 0 {
        return (round_half_away(w as f64 / 2.0), round_half_away(h as f64 / 2.0));
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for r in 0..h {
        for c in 0..w {
            if gt.values()[r * w + c] {
                sx += (c + 1) as f64;
                sy += (r + 1) as f64;
            }
        }
    }
    (round_half_away(sx / total as f64), round_half_away(sy / total as f64))
}

fn round_half_away(v: f64) -> usize {
    v.round() as usize
}

fn block_ssim(pred: &ScoreMap, gt: &BinaryMask, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> f64 {
    let w = pred.dims().1;
    let mut xs = Vec::with_capacity(rows.len() * cols.len());
    let mut ys = Vec::with_capacity(xs.capacity());
    for r in rows {
        for c in cols.clone() {
            xs.push(pred.values()[r * w + c]);
            ys.push(if gt.values()[r * w + c] { 1.0 } else { 0.0 });
        }
    }
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    let d = n - 1.0 + EPS;
    let (sxx, syy, sxy) = (sxx / d, syy / d, sxy / d);
    let a = 4.0 * mx * my * sxy;
    let b = (mx * mx + my * my) * (sxx + syy);
    if a != 0.0 {
        a / (b + EPS)
    } else if b == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn s_region(pred: &ScoreMap, gt: &BinaryMask) -> f64 {
    let (h, w) = gt.dims();
    let (x, y) = centroid(gt);
    let (x, y) = (x.min(w), y.min(h));
    let area = (h * w) as f64;
    let w1 = (x * y) as f64 / area;
    let w2 = ((w - x) * y) as f64 / area;
    let w3 = (x * (h - y)) as f64 / area;
    let w4 = 1.0 - w1 - w2 - w3;
    w1 * block_ssim(pred, gt, 0..y, 0..x)
        + w2 * block_ssim(pred, gt, 0..y, x..w)
        + w3 * block_ssim(pred, gt, y..h, 0..x)
        + w4 * block_ssim(pred, gt, y..h, x..w)
}

/// Aggregate scores of a prediction set.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub images: usize,
    pub f_beta_max: f64,
    /// Fβ averaged over all thresholds.
    pub mean_f: f64,
    pub mae: f64,
    pub s_measure: f64,
    pub pr: Vec<PrPoint>,
}

impl MetricsReport {
    /// `metric,value` rows.
    pub fn metrics_csv(&self) -> String {
        format!(
            "metric,value\nimages,{}\nf_beta_max,{:.6}\nmean_f,{:.6}\nmae,{:.6}\ns_measure,{:.6}\n",
            self.images, self.f_beta_max, self.mean_f, self.mae, self.s_measure
        )
    }

    /// `threshold,precision,recall`, one row per threshold.
    pub fn pr_csv(&self) -> String {
        let mut s = String::from("threshold,precision,recall\n");
        for p in &self.pr {
            let _ = writeln!(s, "{},{:.6},{:.6}", p.threshold, p.precision, p.recall);
        }
        s
    }

    /// Writes `metrics.csv` and `pr_curve.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [("metrics.csv", self.metrics_csv()), ("pr_curve.csv", self.pr_csv())] {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

/// Dataset-level PR/F plus per-image MAE and S-measure averaged in input order.
pub fn evaluate(preds: &[ScoreMap], gts: &[BinaryMask]) -> Result<MetricsReport> {
    check_pairs(preds, gts)?;
    let pr = pr_curve(preds, gts)?;
    let n = preds.len() as f64;
    let mut mae_sum = 0.0;
    let mut sm_sum = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        mae_sum += mae(p, g)?;
        sm_sum += s_measure(p, g, S_ALPHA)?;
    }
    Ok(MetricsReport {
        images: preds.len(),
        f_beta_max: max_f(&pr, BETA2),
        mean_f: mean_f(&pr, BETA2),
        mae: mae_sum / n,
        s_measure: sm_sum / n,
        pr,
    })
}

/// Pairs `<stem>.pgm` files of two directories by name and evaluates them.
/// Ground-truth maps are binarised at 128.
pub fn evaluate_dataset(pred_dir: &Path, gt_dir: &Path) -> Result<MetricsReport> {
    let preds = list_stems(pred_dir, "pgm")?;
    let gts = list_stems(gt_dir, "pgm")?;
    let unmatched: Vec<String> = preds
        .iter()
        .filter(|n| gts.binary_search(n).is_err())
        .map(|n| format!("{}/{n}.pgm", pred_dir.display()))
        .chain(
            gts.iter()
                .filter(|n| preds.binary_search(n).is_err())
                .map(|n| format!("{}/{n}.pgm", gt_dir.display())),
        )
        .collect();
    if !unmatched.is_empty() {
        return Err(Error::Data(format!("unmatched files: {}", unmatched.join(", "))));
    }
    if preds.is_empty() {
        return Err(Error::Data(format!("{}: no .pgm predictions found", pred_dir.display())));
    }
    let mut maps = Vec::with_capacity(preds.len());
    let mut masks = Vec::with_capacity(preds.len());
    for name in &preds {
        let p = netpbm::load_map(&pred_dir.join(format!("{name}.pgm")))?;
        let g = netpbm::load_mask(&gt_dir.join(format!("{name}.pgm")))?;
        let (pm, gm) = (ScoreMap::from_tensor(&p, 0)?, BinaryMask::from_tensor(&g, 0)?);
        if pm.dims() != gm.dims() {
            return Err(Error::Data(format!("{name}: prediction {:?} vs ground truth {:?}", pm.dims(), gm.dims())));
        }
        maps.push(pm);
        masks.push(gm);
    }
    evaluate(&maps, &masks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, f: impl Fn(usize, usize) -> bool) -> BinaryMask {
        BinaryMask::new(h, w, (0..h * w).map(|i| f(i / w, i % w)).collect()).unwrap()
    }

    fn as_map(m: &BinaryMask) -> ScoreMap {
        let (h, w) = m.dims();
        ScoreMap::new(h, w, m.values().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).unwrap()
    }

    #[test]
    fn f_beta_hand_case() {
        assert!((f_beta(0.8, 0.5, BETA2) - 0.52 / 0.74).abs() < 1e-12);
        assert_eq!(f_beta(0.0, 0.0, BETA2), 0.0);
        assert_eq!(f_beta(1.0, 1.0, BETA2), 1.0);
    }

    #[test]
    fn perfect_prediction() {
        let g = mask(6, 7, |r, c| r > 1 && c < 4);
        let p = as_map(&g);
        let curve = pr_curve(std::slice::from_ref(&p), std::slice::from_ref(&g)).unwrap();
        for pt in &curve[1..] {
            assert_eq!((pt.precision, pt.recall), (1.0, 1.0));
        }
        assert_eq!(mae(&p, &g).unwrap(), 0.0);
        assert!((s_measure(&p, &g, S_ALPHA).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn degenerate_masks() {
        let g = mask(4, 4, |_, _| false);
        let p = ScoreMap::new(4, 4, vec![0.25; 16]).unwrap();
        assert!((s_measure(&p, &g, S_ALPHA).unwrap() - 0.75).abs() < 1e-12);
        assert!((mae(&p, &g).unwrap() - 0.25).abs() < 1e-12);
        let g1 = mask(4, 4, |_, _| true);
        assert!((s_measure(&p, &g1, S_ALPHA).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn normalization() {
        let m = ScoreMap::normalized(1, 3, vec![2.0, 4.0, 3.0]).unwrap();
        assert_eq!(m.values(), &[0.0, 1.0, 0.5]);
        let c = ScoreMap::normalized(1, 2, vec![0.3, 0.3]).unwrap();
        assert_eq!(c.values(), &[0.3, 0.3]);
        assert!(ScoreMap::normalized(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn dims_mismatch_rejected() {
        let g = mask(2, 2, |r, _| r == 0);
        let p = ScoreMap::new(2, 3, vec![0.0; 6]).unwrap();
        assert!(mae(&p, &g).is_err());
        assert!(pr_curve(std::slice::from_ref(&p), std::slice::from_ref(&g)).is_err());
        assert!(s_measure(&p, &g, S_ALPHA).is_err());
    }

    #[test]
    fn centroid_is_one_based() {
        let g = mask(4, 4, |r, c| r == 0 && c == 0);
        assert_eq!(centroid(&g), (1, 1));
        let g = mask(4, 6, |_, _| false);
        assert_eq!(centroid(&g), (3, 2));
    }
}
