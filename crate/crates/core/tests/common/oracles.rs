#![allow(dead_code, clippy::needless_range_loop)]

use mcnet_core::metrics::Pair;
use mcnet_tensor::{Graph, Tensor, Var};

pub type Objective<'a> = &'a dyn Fn(&Graph<f64>, &Var<f64>) -> Var<f64>;

/// Distance to the nearest background pixel by exhaustive search; the
/// ring of pixels just outside the image counts as background.
pub fn brute_distance(h: usize, w: usize, fg: &[bool]) -> Vec<f64> {
    let mut bg = Vec::new();
    for y in -1..=h as isize {
        for x in -1..=w as isize {
            let inside = y >= 0 && x >= 0 && y < h as isize && x < w as isize;
            if !inside || !fg[y as usize * w + x as usize] {
                bg.push((y, x));
            }
        }
    }
    (0..h * w)
        .map(|i| {
            if !fg[i] {
                return 0.0;
            }
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            bg.iter().map(|&(by, bx)| (((by - y).pow(2) + (bx - x).pow(2)) as f64).sqrt()).fold(f64::INFINITY, f64::min)
        })
        .collect()
}

pub fn pair(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Pair {
    Pair::new(pred, gt).unwrap()
}

pub fn grid(p: &Pair) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let rows = |v: Vec<f64>| v.chunks(p.w).map(|r| r.to_vec()).collect();
    (rows(p.pred.clone()), rows(p.gt.iter().map(|&g| if g { 1.0 } else { 0.0 }).collect()))
}

pub fn brute_f(prec: f64, rec: f64) -> f64 {
    if prec == 0.0 && rec == 0.0 {
        0.0
    } else {
        1.3 * prec * rec / (0.3 * prec + rec)
    }
}

pub fn std1(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

/// Structure measure, transcribed from the reference definition with
/// 1-based centroid indices.
pub fn s_measure_oracle(pred: &[Vec<f64>], gt: &[Vec<f64>]) -> f64 {
    let eps = f64::EPSILON;
    let (h, w) = (gt.len(), gt[0].len());
    let total: f64 = gt.iter().flatten().sum();
    let y_mean = total / (h * w) as f64;
    let p_mean = pred.iter().flatten().sum::<f64>() / (h * w) as f64;
    if y_mean == 0.0 {
        return 1.0 - p_mean;
    }
    if y_mean == 1.0 {
        return p_mean;
    }
    let s_obj = |vals: Vec<f64>| {
        let x = vals.iter().sum::<f64>() / vals.len() as f64;
        let sx = if vals.len() > 1 { std1(&vals) } else { 0.0 };
        2.0 * x / (x * x + 1.0 + sx + eps)
    };
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if gt[y][x] == 1.0 {
                fg.push(pred[y][x]);
            } else {
                bg.push(1.0 - pred[y][x]);
            }
        }
    }
    let object = y_mean * s_obj(fg) + (1.0 - y_mean) * s_obj(bg);

    let (mut sx, mut sy) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            sx += gt[y][x] * x as f64;
            sy += gt[y][x] * y as f64;
        }
    }
    let cx = (sx / total).round_ties_even() as usize + 1;
    let cy = (sy / total).round_ties_even() as usize + 1;
    let ssim = |ys: std::ops::Range<usize>, xs: std::ops::Range<usize>| {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for y in ys {
            for x in xs.clone() {
                a.push(pred[y][x]);
                b.push(gt[y][x]);
            }
        }
        let n = a.len() as f64;
        let mx = a.iter().sum::<f64>() / n;
        let my = b.iter().sum::<f64>() / n;
        let vx = a.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / (n - 1.0);
        let vy = b.iter().map(|v| (v - my).powi(2)).sum::<f64>() / (n - 1.0);
        let cxy = a.iter().zip(&b).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / (n - 1.0);
        let alpha = 4.0 * mx * my * cxy;
        let beta = (mx * mx + my * my) * (vx + vy);
        if alpha != 0.0 {
            alpha / (beta + eps)
        } else if beta == 0.0 {
            1.0
        } else {
            0.0
        }
    };
    let area = (h * w) as f64;
    let w1 = (cx * cy) as f64 / area;
    let w2 = ((w - cx) * cy) as f64 / area;
    let w3 = (cx * (h - cy)) as f64 / area;
    let w4 = 1.0 - w1 - w2 - w3;
    let region = w1 * ssim(0..cy, 0..cx) + w2 * ssim(0..cy, cx..w) + w3 * ssim(cy..h, 0..cx) + w4 * ssim(cy..h, cx..w);
    (0.5 * object + 0.5 * region).max(0.0)
}

/// Enhanced-alignment measure, evaluated pixel by pixel.
pub fn e_measure_oracle(pred: &[Vec<f64>], gt: &[Vec<f64>]) -> f64 {
    let (h, w) = (gt.len(), gt[0].len());
    let n = (h * w) as f64;
    let thr = (2.0 * pred.iter().flatten().sum::<f64>() / n).min(1.0);
    let fm: Vec<Vec<f64>> = pred.iter().map(|r| r.iter().map(|&v| if v >= thr { 1.0 } else { 0.0 }).collect()).collect();
    let gt_sum: f64 = gt.iter().flatten().sum();
    let mut enhanced = 0.0;
    if gt_sum == 0.0 {
        enhanced = fm.iter().flatten().map(|v| 1.0 - v).sum();
    } else if gt_sum == n {
        enhanced = fm.iter().flatten().sum();
    } else {
        let mf = fm.iter().flatten().sum::<f64>() / n;
        let mg = gt_sum / n;
        for y in 0..h {
            for x in 0..w {
                let a = fm[y][x] - mf;
                let b = gt[y][x] - mg;
                let align = 2.0 * a * b / (a * a + b * b + f64::EPSILON);
                enhanced += (align + 1.0).powi(2) / 4.0;
            }
        }
    }
    enhanced / n
}

/// Weighted F-measure with brute-force nearest-foreground search.
pub fn weighted_f_oracle(pred: &[Vec<f64>], gt: &[Vec<f64>]) -> f64 {
    let eps = f64::EPSILON;
    let (h, w) = (gt.len(), gt[0].len());
    let e: Vec<Vec<f64>> = (0..h).map(|y| (0..w).map(|x| (pred[y][x] - gt[y][x]).abs()).collect()).collect();
    let mut dist = vec![vec![0.0; w]; h];
    let mut et = e.clone();
    for y in 0..h {
        for x in 0..w {
            if gt[y][x] == 1.0 {
                continue;
            }
            let mut best = (f64::INFINITY, 0, 0);
            for fx in 0..w {
                for fy in 0..h {
                    if gt[fy][fx] == 1.0 {
                        let d = ((fy as f64 - y as f64).powi(2) + (fx as f64 - x as f64).powi(2)).sqrt();
                        if d < best.0 {
                            best = (d, fy, fx);
                        }
                    }
                }
            }
            dist[y][x] = best.0;
            et[y][x] = e[best.1][best.2];
        }
    }
    let sigma = 5.0f64;
    let mut k = [[0.0f64; 7]; 7];
    let mut ks = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (a, b) = (i as f64 - 3.0, j as f64 - 3.0);
            *v = (-(a * a + b * b) / (2.0 * sigma * sigma)).exp();
            ks += *v;
        }
    }
    let (mut ew_fg, mut ew_bg, mut n_fg) = (0.0, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if gt[y][x] == 1.0 {
                let mut ea = 0.0;
                for i in 0..7 {
                    for j in 0..7 {
                        let (sy, sx) = (y as isize + i as isize - 3, x as isize + j as isize - 3);
                        if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                            ea += k[i][j] / ks * et[sy as usize][sx as usize];
                        }
                    }
                }
                ew_fg += ea.min(e[y][x]);
                n_fg += 1.0;
            } else {
                ew_bg += e[y][x] * (2.0 - (0.5f64.ln() / 5.0 * dist[y][x]).exp());
            }
        }
    }
    let tpw = n_fg - ew_fg;
    let r = 1.0 - ew_fg / n_fg;
    let p = tpw / (eps + tpw + ew_bg);
    2.0 * r * p / (eps + r + p)
}

/// Largest relative error between the analytic gradient of `f` at `x` and
/// central differences.
pub fn max_gradient_error(f: Objective, x: &Tensor<f64>) -> f64 {
    let g = Graph::eval_with_grad();
    let v = g.leaf(x.clone());
    let loss = f(&g, &v);
    let analytic = g.backward(&loss).unwrap().wrt(&v).unwrap().clone();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..x.data().len() {
        let shifted = |d: f64| {
            let mut t = x.clone();
            t.data_mut()[i] += d;
            let g = Graph::inference();
            f(&g, &g.constant(t)).value().item()
        };
        let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / numeric.abs().max(a.abs()).max(1e-3));
    }
    worst
}
