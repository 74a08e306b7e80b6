//! Saliency evaluation: MAE, PR and F curves, adaptive and maximal
//! F-measure, weighted F-measure, S-measure and E-measure.
//!
//! Maps are `[H, W]`; predictions lie in `[0, 1]` and ground truth is
//! binary. Conventions follow the reference implementations of each
//! measure: beta^2 = 0.3, adaptive threshold `min(2 mean, 1)`, S-measure
//! alpha = 0.5, weighted-F Gaussian 7x7 with sigma 5 and decay `ln(0.5)/5`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mcnet_tensor::{Scalar, Tensor};
use rayon::prelude::*;

use crate::error::{io_err, McError, Result};
use crate::imageio::{has_image_extension, read_gray, read_mask, resize_bilinear};

pub const BETA2: f64 = 0.3;
pub const THRESHOLDS: usize = 256;
pub const SM_ALPHA: f64 = 0.5;
/// Machine epsilon, as used by the reference formulas.
pub const EPS: f64 = f64::EPSILON;

/// Plain-number view of a prediction / ground-truth pair.
#[derive(Debug, Clone)]
pub struct Pair {
    pub h: usize,
    pub w: usize,
    pub pred: Vec<f64>,
    pub gt: Vec<bool>,
}

impl Pair {
    pub fn new<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<Self> {
        let [h, w] = pred.dims2()?;
        if gt.shape() != pred.shape() {
            return Err(McError::Dimension(format!("pred {:?} vs gt {:?}", pred.shape(), gt.shape())));
        }
        let mut mask = Vec::with_capacity(h * w);
        for &v in gt.data() {
            if v == T::one() {
                mask.push(true);
            } else if v == T::zero() {
                mask.push(false);
            } else {
                return Err(McError::Input(format!("ground truth is not binary (found {v})")));
            }
        }
        let pred: Vec<f64> = pred.data().iter().map(|v| v.to_f64_lossy()).collect();
        if pred.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(McError::Input("prediction values must lie in [0, 1]".into()));
        }
        Ok(Pair { h, w, pred, gt: mask })
    }

    pub fn n(&self) -> usize {
        self.h * self.w
    }

    pub fn fg(&self) -> usize {
        self.gt.iter().filter(|&&g| g).count()
    }
}

pub fn mae(p: &Pair) -> f64 {
    p.pred.iter().zip(&p.gt).map(|(&v, &g)| (v - if g { 1.0 } else { 0.0 }).abs()).sum::<f64>() / p.n() as f64
}

/// F-beta from precision and recall; 0 when both vanish.
pub fn f_beta(precision: f64, recall: f64) -> f64 {
    let den = BETA2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + BETA2) * precision * recall / den
    }
}

/// Number of thresholds `t / 255` (t = 0..255) that `v` reaches.
fn thresholds_reached(v: f64) -> usize {
    let mut k = ((v * 255.0).floor() as isize).clamp(-1, 255);
    while k < 255 && v >= (k + 1) as f64 / 255.0 {
        k += 1;
    }
    while k >= 0 && v < k as f64 / 255.0 {
        k -= 1;
    }
    (k + 1) as usize
}

/// Per-threshold confusion counts `(tp, fp)` for `pred >= t / 255`.
pub fn threshold_counts(p: &Pair) -> Vec<(usize, usize)> {
    let mut fg_hist = [0usize; THRESHOLDS + 1];
    let mut bg_hist = [0usize; THRESHOLDS + 1];
    for (&v, &g) in p.pred.iter().zip(&p.gt) {
        let k = thresholds_reached(v);
        if g {
            fg_hist[k] += 1;
        } else {
            bg_hist[k] += 1;
        }
    }
    // pixels reaching at least threshold t: suffix sums over k > t
    let mut out = vec![(0, 0); THRESHOLDS];
    let (mut tp, mut fp) = (0, 0);
    for t in (0..THRESHOLDS).rev() {
        tp += fg_hist[t + 1];
        fp += bg_hist[t + 1];
        out[t] = (tp, fp);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curves {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub fmeasure: Vec<f64>,
}

/// PR and F curves over 256 thresholds; `None` for an empty ground truth.
/// Precision is 1 when nothing is predicted positive.
pub fn pr_curve(p: &Pair) -> Option<Curves> {
    let fg = p.fg();
    if fg == 0 {
        return None;
    }
    let counts = threshold_counts(p);
    let precision: Vec<f64> =
        counts.iter().map(|&(tp, fp)| if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 }).collect();
    let recall: Vec<f64> = counts.iter().map(|&(tp, _)| tp as f64 / fg as f64).collect();
    let fmeasure = precision.iter().zip(&recall).map(|(&pr, &rc)| f_beta(pr, rc)).collect();
    Some(Curves { precision, recall, fmeasure })
}

pub fn adaptive_threshold(p: &Pair) -> f64 {
    (2.0 * p.pred.iter().sum::<f64>() / p.n() as f64).min(1.0)
}

/// F-measure at the adaptive threshold; `None` for an empty ground truth.
pub fn f_adaptive(p: &Pair) -> Option<f64> {
    let fg = p.fg();
    if fg == 0 {
        return None;
    }
    let thr = adaptive_threshold(p);
    let (mut tp, mut fp) = (0usize, 0usize);
    for (&v, &g) in p.pred.iter().zip(&p.gt) {
        if v >= thr {
            if g {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
    Some(f_beta(precision, tp as f64 / fg as f64))
}

/// `(f_avg, f_max, f_curve)` of one image.
pub fn f_measures(p: &Pair) -> Option<(f64, f64, Vec<f64>)> {
    let curves = pr_curve(p)?;
    let fmax = curves.fmeasure.iter().copied().fold(0.0, f64::max);
    Some((f_adaptive(p)?, fmax, curves.fmeasure))
}

/// For every pixel, squared distance to and index of the nearest foreground
/// pixel. Ties go to the smallest column, then the smallest row.
pub fn nearest_foreground(h: usize, w: usize, fg: &[bool]) -> (Vec<f64>, Vec<usize>) {
    // per column: nearest foreground row (upper one on ties)
    let mut col_row = vec![usize::MAX; h * w];
    for x in 0..w {
        let mut last: Option<usize> = None;
        for y in 0..h {
            if fg[y * w + x] {
                last = Some(y);
            }
            if let Some(l) = last {
                col_row[y * w + x] = l;
            }
        }
        let mut next: Option<usize> = None;
        for y in (0..h).rev() {
            if fg[y * w + x] {
                next = Some(y);
            }
            if let Some(n) = next {
                let cur = col_row[y * w + x];
                if cur == usize::MAX || n - y < y - cur {
                    col_row[y * w + x] = n;
                }
            }
        }
    }
    let mut dist = vec![f64::INFINITY; h * w];
    let mut idx = vec![usize::MAX; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut best = u64::MAX;
            let mut arg = usize::MAX;
            for xp in 0..w {
                let r = col_row[y * w + xp];
                if r == usize::MAX {
                    continue;
                }
                let (dy, dx) = (r.abs_diff(y) as u64, xp.abs_diff(x) as u64);
                let d = dy * dy + dx * dx;
                if d < best {
                    best = d;
                    arg = r * w + xp;
                }
            }
            if arg != usize::MAX {
                dist[y * w + x] = best as f64;
                idx[y * w + x] = arg;
            }
        }
    }
    (dist, idx)
}

/// `fspecial('gaussian', size, sigma)`.
pub fn matlab_gaussian(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut k: Vec<f64> = (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64 - c, (i % size) as f64 - c);
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let max = k.iter().copied().fold(0.0, f64::max);
    for v in k.iter_mut() {
        if *v < f64::EPSILON * max {
            *v = 0.0;
        }
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Weighted F-measure; `None` for an empty ground truth.
pub fn weighted_f(p: &Pair) -> Option<f64> {
    let (h, w) = (p.h, p.w);
    if p.fg() == 0 {
        return None;
    }
    let gtf: Vec<f64> = p.gt.iter().map(|&g| if g { 1.0 } else { 0.0 }).collect();
    let e: Vec<f64> = p.pred.iter().zip(&gtf).map(|(a, b)| (a - b).abs()).collect();
    let (dist2, idx) = nearest_foreground(h, w, &p.gt);
    let et: Vec<f64> = (0..h * w).map(|i| if p.gt[i] { e[i] } else { e[idx[i]] }).collect();
    let k = matlab_gaussian(7, 5.0);
    let mut ea = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in 0..7 {
                for kx in 0..7 {
                    let (sy, sx) = (y as isize + ky as isize - 3, x as isize + kx as isize - 3);
                    if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                        acc += k[ky * 7 + kx] * et[sy as usize * w + sx as usize];
                    }
                }
            }
            ea[y * w + x] = acc;
        }
    }
    let decay = 0.5f64.ln() / 5.0;
    let (mut sum_ew_fg, mut sum_ew_bg, mut n_fg) = (0.0, 0.0, 0usize);
    for i in 0..h * w {
        if p.gt[i] {
            let m = if ea[i] < e[i] { ea[i] } else { e[i] };
            sum_ew_fg += m;
            n_fg += 1;
        } else {
            let b = 2.0 - (decay * dist2[i].sqrt()).exp();
            sum_ew_bg += e[i] * b;
        }
    }
    let tpw = n_fg as f64 - sum_ew_fg;
    let fpw = sum_ew_bg;
    let r = 1.0 - sum_ew_fg / n_fg as f64;
    let pr = tpw / (tpw + fpw + EPS);
    Some(2.0 * r * pr / (r + pr + EPS))
}

fn mean(v: impl Iterator<Item = f64>) -> (f64, usize) {
    let (mut s, mut n) = (0.0, 0);
    for x in v {
        s += x;
        n += 1;
    }
    (if n == 0 { 0.0 } else { s / n as f64 }, n)
}

fn s_object(values: &[f64]) -> f64 {
    let (x, n) = mean(values.iter().copied());
    let sigma = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - x) * (v - x)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    2.0 * x / (x * x + 1.0 + sigma + EPS)
}

fn object_score(p: &Pair) -> f64 {
    let fg: Vec<f64> = p.pred.iter().zip(&p.gt).filter(|(_, &g)| g).map(|(&v, _)| v).collect();
    let bg: Vec<f64> = p.pred.iter().zip(&p.gt).filter(|(_, &g)| !g).map(|(&v, _)| 1.0 - v).collect();
    let u = fg.len() as f64 / p.n() as f64;
    u * s_object(&fg) + (1.0 - u) * s_object(&bg)
}

/// Mean-and-variance structural similarity of one region.
fn region_ssim(pred: &[f64], gt: &[f64]) -> f64 {
    let n = pred.len();
    let (x, _) = mean(pred.iter().copied());
    let (y, _) = mean(gt.iter().copied());
    let (sx, sy, sxy) = if n < 2 {
        (0.0, 0.0, 0.0)
    } else {
        let d = (n - 1) as f64;
        (
            pred.iter().map(|v| (v - x).powi(2)).sum::<f64>() / d,
            gt.iter().map(|v| (v - y).powi(2)).sum::<f64>() / d,
            pred.iter().zip(gt).map(|(a, b)| (a - x) * (b - y)).sum::<f64>() / d,
        )
    };
    let alpha = 4.0 * x * y * sxy;
    let beta = (x * x + y * y) * (sx + sy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Split point: rounded foreground centroid, plus one.
fn centroid(p: &Pair) -> (usize, usize) {
    let (mut sy, mut sx, mut n) = (0.0, 0.0, 0usize);
    for (i, _) in p.gt.iter().enumerate().filter(|(_, &g)| g) {
        sy += (i / p.w) as f64;
        sx += (i % p.w) as f64;
        n += 1;
    }
    if n == 0 {
        return ((p.w as f64 / 2.0).round_ties_even() as usize + 1, (p.h as f64 / 2.0).round_ties_even() as usize + 1);
    }
    ((sx / n as f64).round_ties_even() as usize + 1, (sy / n as f64).round_ties_even() as usize + 1)
}

fn region_score(p: &Pair) -> f64 {
    let (cx, cy) = centroid(p);
    let (h, w) = (p.h, p.w);
    let (cx, cy) = (cx.min(w), cy.min(h));
    let area = (h * w) as f64;
    let quads = [(0, cy, 0, cx), (0, cy, cx, w), (cy, h, 0, cx), (cy, h, cx, w)];
    let weights = {
        let w1 = (cx * cy) as f64 / area;
        let w2 = (cy * (w - cx)) as f64 / area;
        let w3 = ((h - cy) * cx) as f64 / area;
        [w1, w2, w3, 1.0 - w1 - w2 - w3]
    };
    let mut score = 0.0;
    for (&(y0, y1, x0, x1), &wt) in quads.iter().zip(&weights) {
        if y1 <= y0 || x1 <= x0 {
            continue;
        }
        let mut pr = Vec::with_capacity((y1 - y0) * (x1 - x0));
        let mut gt = Vec::with_capacity(pr.capacity());
        for y in y0..y1 {
            for x in x0..x1 {
                pr.push(p.pred[y * w + x]);
                gt.push(if p.gt[y * w + x] { 1.0 } else { 0.0 });
            }
        }
        score += wt * region_ssim(&pr, &gt);
    }
    score
}

pub fn s_measure(p: &Pair) -> f64 {
    let fg = p.fg();
    let (m, _) = mean(p.pred.iter().copied());
    if fg == 0 {
        1.0 - m
    } else if fg == p.n() {
        m
    } else {
        (SM_ALPHA * object_score(p) + (1.0 - SM_ALPHA) * region_score(p)).max(0.0)
    }
}

/// Enhanced-alignment measure of the prediction binarized at the adaptive
/// threshold, averaged over pixels.
pub fn e_measure(p: &Pair) -> f64 {
    let n = p.n();
    let thr = adaptive_threshold(p);
    let bin: Vec<bool> = p.pred.iter().map(|&v| v >= thr).collect();
    let gt_fg = p.fg();
    let fg_fg = bin.iter().zip(&p.gt).filter(|(&b, &g)| b && g).count();
    let fg_bg = bin.iter().zip(&p.gt).filter(|(&b, &g)| b && !g).count();
    let pred_fg = fg_fg + fg_bg;
    let pred_bg = n - pred_fg;
    let sum = if gt_fg == 0 {
        pred_bg as f64
    } else if gt_fg == n {
        pred_fg as f64
    } else {
        let mp = pred_fg as f64 / n as f64;
        let mg = gt_fg as f64 / n as f64;
        let bg_fg = gt_fg - fg_fg;
        let bg_bg = pred_bg - bg_fg;
        let parts = [
            (fg_fg, 1.0 - mp, 1.0 - mg),
            (fg_bg, 1.0 - mp, -mg),
            (bg_fg, -mp, 1.0 - mg),
            (bg_bg, -mp, -mg),
        ];
        parts
            .iter()
            .map(|&(count, a, b)| {
                let align = 2.0 * a * b / (a * a + b * b + EPS);
                (align + 1.0).powi(2) / 4.0 * count as f64
            })
            .sum()
    };
    sum / n as f64
}

/// All measures of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageScores {
    pub mae: f64,
    pub s_m: f64,
    pub e_m: f64,
    /// `None` when the ground truth is empty.
    pub f_adaptive: Option<f64>,
    pub f_weighted: Option<f64>,
    pub curves: Option<Curves>,
}

pub fn score_image(p: &Pair) -> ImageScores {
    ImageScores {
        mae: mae(p),
        s_m: s_measure(p),
        e_m: e_measure(p),
        f_adaptive: f_adaptive(p),
        f_weighted: weighted_f(p),
        curves: pr_curve(p),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub f_avg: f64,
    pub f_max: f64,
    pub f_weighted: f64,
    pub mae: f64,
    pub e_m: f64,
    pub s_m: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f_curve: Vec<f64>,
    /// Images that contributed to the per-image means.
    pub images: usize,
    /// Images with an empty ground truth, left out of F and curves.
    pub empty_gt: Vec<String>,
    /// Names present on only one side.
    pub missing: Vec<String>,
    /// Predictions that were resized to the ground-truth size.
    pub resized: Vec<String>,
    /// Per-image read failures.
    pub failed: Vec<(String, String)>,
}

/// Averages per-image scores, in the order given.
pub fn aggregate(scores: &[(String, ImageScores)]) -> MetricsReport {
    let mut r = MetricsReport { images: scores.len(), ..Default::default() };
    if scores.is_empty() {
        return r;
    }
    let n = scores.len() as f64;
    r.mae = scores.iter().map(|(_, s)| s.mae).sum::<f64>() / n;
    r.s_m = scores.iter().map(|(_, s)| s.s_m).sum::<f64>() / n;
    r.e_m = scores.iter().map(|(_, s)| s.e_m).sum::<f64>() / n;
    r.f_avg = mean(scores.iter().filter_map(|(_, s)| s.f_adaptive)).0;
    r.f_weighted = mean(scores.iter().filter_map(|(_, s)| s.f_weighted)).0;
    let valid: Vec<&Curves> = scores.iter().filter_map(|(_, s)| s.curves.as_ref()).collect();
    let avg = |f: fn(&Curves) -> &Vec<f64>| -> Vec<f64> {
        (0..THRESHOLDS)
            .map(|t| if valid.is_empty() { 0.0 } else { valid.iter().map(|c| f(c)[t]).sum::<f64>() / valid.len() as f64 })
            .collect()
    };
    r.precision = avg(|c| &c.precision);
    r.recall = avg(|c| &c.recall);
    r.f_curve = avg(|c| &c.fmeasure);
    r.f_max = r.f_curve.iter().copied().fold(0.0, f64::max);
    r.empty_gt = scores.iter().filter(|(_, s)| s.curves.is_none()).map(|(n, _)| n.clone()).collect();
    r
}

fn images_by_stem(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_file() && has_image_extension(&path) {
            if let Some(stem) = path.file_stem() {
                out.insert(stem.to_string_lossy().into_owned(), path);
            }
        }
    }
    Ok(out)
}

/// Scores every prediction in `pred_dir` against the mask of the same name
/// in `gt_dir`. Predictions are resized to the mask size when they differ.
pub fn evaluate_dataset(pred_dir: &Path, gt_dir: &Path) -> Result<MetricsReport> {
    let preds = images_by_stem(pred_dir)?;
    let gts = images_by_stem(gt_dir)?;
    let mut missing: Vec<String> = preds.keys().filter(|k| !gts.contains_key(*k)).cloned().collect();
    missing.extend(gts.keys().filter(|k| !preds.contains_key(*k)).cloned());
    missing.sort();
    let names: Vec<&String> = preds.keys().filter(|k| gts.contains_key(*k)).collect();
    let results: Vec<(String, Result<(ImageScores, bool)>)> = names
        .par_iter()
        .map(|name| {
            let run = || -> Result<(ImageScores, bool)> {
                let gt = read_mask::<f64>(&gts[*name])?;
                let mut pred = read_gray::<f64>(&preds[*name])?;
                let resized = pred.shape() != gt.shape();
                if resized {
                    let [h, w] = gt.dims2()?;
                    pred = resize_bilinear(&pred, h, w).map(|v| v.clamp(0.0, 1.0));
                }
                Ok((score_image(&Pair::new(&pred, &gt)?), resized))
            };
            ((*name).clone(), run())
        })
        .collect();
    let mut scores = Vec::new();
    let (mut resized, mut failed) = (Vec::new(), Vec::new());
    for (name, r) in results {
        match r {
            Ok((s, rs)) => {
                if rs {
                    resized.push(name.clone());
                }
                scores.push((name, s));
            }
            Err(e) => failed.push((name, e.to_string())),
        }
    }
    let mut report = aggregate(&scores);
    report.missing = missing;
    report.resized = resized;
    report.failed = failed;
    Ok(report)
}

pub const REPORT_HEADER: &str = "dataset,method,Favg,Fmax,Fw,MAE,Em,Sm";

/// One report row with six decimals.
pub fn report_row(dataset: &str, method: &str, r: &MetricsReport) -> String {
    format!(
        "{dataset},{method},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
        r.f_avg, r.f_max, r.f_weighted, r.mae, r.e_m, r.s_m
    )
}

pub fn write_report(path: &Path, rows: &[(String, String, MetricsReport)]) -> Result<()> {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for (d, m, r) in rows {
        s.push_str(&report_row(d, m, r));
        s.push('\n');
    }
    crate::checkpoint::write_atomic(path, s.as_bytes())
}

/// `threshold,precision,recall,fmeasure`, one row per threshold.
pub fn curves_csv(r: &MetricsReport) -> String {
    let mut s = String::from("threshold,precision,recall,fmeasure\n");
    for t in 0..r.f_curve.len() {
        let _ = writeln!(s, "{t},{:.6},{:.6},{:.6}", r.precision[t], r.recall[t], r.f_curve[t]);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(pred: &[f64], gt: &[f64], h: usize, w: usize) -> Pair {
        Pair::new(&Tensor::new(vec![h, w], pred.to_vec()).unwrap(), &Tensor::new(vec![h, w], gt.to_vec()).unwrap())
            .unwrap()
    }

    #[test]
    fn mae_closed_forms() {
        let gt = [1.0, 1.0, 0.0, 0.0];
        assert_eq!(mae(&pair(&gt, &gt, 2, 2)), 0.0);
        assert_eq!(mae(&pair(&[0.0, 0.0, 1.0, 1.0], &gt, 2, 2)), 1.0);
        assert_eq!(mae(&pair(&[0.25; 4], &gt, 2, 2)), 0.5);
    }

    #[test]
    fn f_beta_symmetric_point() {
        assert!((f_beta(0.5, 0.5) - 0.5).abs() < 1e-15);
        assert_eq!(f_beta(0.0, 0.0), 0.0);
    }

    #[test]
    fn threshold_bins_match_direct_comparison() {
        for i in 0..=2550 {
            let v = i as f64 / 2550.0;
            let direct = (0..256).filter(|&t| v >= t as f64 / 255.0).count();
            assert_eq!(thresholds_reached(v), direct, "{v}");
        }
    }

    #[test]
    fn degenerate_s_measure() {
        assert_eq!(s_measure(&pair(&[0.0; 4], &[0.0; 4], 2, 2)), 1.0);
        assert_eq!(s_measure(&pair(&[0.5; 4], &[1.0; 4], 2, 2)), 0.5);
    }

    #[test]
    fn e_measure_perfect_and_inverted() {
        let gt = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        let inv: Vec<f64> = gt.iter().map(|g| 1.0 - g).collect();
        assert!((e_measure(&pair(&gt, &gt, 3, 3)) - 1.0).abs() < 1e-12);
        assert!(e_measure(&pair(&inv, &gt, 3, 3)) < 1e-12);
    }
}
