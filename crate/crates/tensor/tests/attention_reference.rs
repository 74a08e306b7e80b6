//! Window attention against a direct roll / partition / mask reference.

use mcnet_tensor::ops::attention::window_attention_probs;
use mcnet_tensor::{Graph, Initializer, Tensor, WindowSpec};

/// Reference built the usual way: roll the grid by -shift, label regions
/// with slice assignments, partition into windows, attend, roll back.
fn reference(qkv: &Tensor<f64>, table: &Tensor<f64>, heads: usize, ws: usize, shift: usize) -> Tensor<f64> {
    let [n, c3, h, w] = qkv.dims4().unwrap();
    let c = c3 / 3;
    let dh = c / heads;
    let rolled = |s: usize, ch: usize, y: usize, x: usize| qkv.at4(s, ch, (y + shift) % h, (x + shift) % w);
    let mut region = vec![0usize; h * w];
    if shift > 0 {
        let hs = [(0, h - ws), (h - ws, h - shift), (h - shift, h)];
        let wsl = [(0, w - ws), (w - ws, w - shift), (w - shift, w)];
        let mut cnt = 0;
        for &(y0, y1) in &hs {
            for &(x0, x1) in &wsl {
                for y in y0..y1 {
                    for x in x0..x1 {
                        region[y * w + x] = cnt;
                    }
                }
                cnt += 1;
            }
        }
    }
    let mut shifted_out = vec![0.0; n * c * h * w];
    let span = 2 * ws - 1;
    for s in 0..n {
        for wy in 0..h / ws {
            for wx in 0..w / ws {
                let toks: Vec<(usize, usize)> =
                    (0..ws * ws).map(|t| (wy * ws + t / ws, wx * ws + t % ws)).collect();
                for hd in 0..heads {
                    for &(ya, xa) in &toks {
                        let mut logits = Vec::new();
                        for &(yb, xb) in &toks {
                            let mut dot = 0.0;
                            for d in 0..dh {
                                dot += rolled(s, hd * dh + d, ya, xa) * rolled(s, c + hd * dh + d, yb, xb);
                            }
                            let ry = ya % ws + ws - 1 - yb % ws;
                            let rx = xa % ws + ws - 1 - xb % ws;
                            let mut l = dot / (dh as f64).sqrt() + table.at2(ry * span + rx, hd);
                            if region[ya * w + xa] != region[yb * w + xb] {
                                l -= 100.0;
                            }
                            logits.push(l);
                        }
                        let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
                        let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
                        for d in 0..dh {
                            let mut acc = 0.0;
                            for (k, &(yb, xb)) in toks.iter().enumerate() {
                                acc += (logits[k] - mx).exp() / z * rolled(s, 2 * c + hd * dh + d, yb, xb);
                            }
                            shifted_out[((s * c + hd * dh + d) * h + ya) * w + xa] = acc;
                        }
                    }
                }
            }
        }
    }
    // roll back by +shift
    Tensor::from_fn(vec![n, c, h, w], |i| {
        let x = i % w;
        let y = (i / w) % h;
        let rest = i / (h * w);
        let (ys, xs) = ((y + h - shift) % h, (x + w - shift) % w);
        shifted_out[(rest * h + ys) * w + xs]
    })
}

#[test]
fn matches_reference_with_and_without_shift() {
    let mut init = Initializer::new(11);
    for (grid, ws, shift, heads, c) in [(4, 2, 0, 2, 4), (4, 2, 1, 2, 4), (6, 3, 1, 3, 6), (8, 4, 2, 2, 8)] {
        let qkv: Tensor<f64> = init.uniform(vec![2, 3 * c, grid, grid], 1.5);
        let span = 2 * ws - 1;
        let table: Tensor<f64> = init.uniform(vec![span * span, heads], 0.5);
        let g = Graph::inference();
        let out = g
            .window_attention(&g.constant(qkv.clone()), &g.constant(table.clone()), WindowSpec { heads, window: ws, shift })
            .unwrap();
        let want = reference(&qkv, &table, heads, ws, shift);
        assert!(out.value().max_abs_diff(&want) < 1e-12, "grid {grid} ws {ws} shift {shift}");
    }
}

#[test]
fn attention_rows_are_distributions_and_respect_masks() {
    let mut init = Initializer::new(12);
    let (grid, ws, shift) = (6, 3, 1);
    let qkv: Tensor<f64> = init.uniform(vec![1, 12, grid, grid], 2.0);
    let table: Tensor<f64> = init.uniform(vec![25, 2], 0.5);
    let probs = window_attention_probs(&qkv, &table, WindowSpec { heads: 2, window: ws, shift }).unwrap();
    let nt = ws * ws;
    for (r, row) in probs.data().chunks(nt).enumerate() {
        assert!(row.iter().all(|&p| p >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // last window (bottom-right) mixes regions; its cross-region weights vanish
        let window = (r / nt / 2) % 4;
        if window == 3 {
            let t = r % nt;
            for (u, &p) in row.iter().enumerate() {
                let a = (3 + t / ws, 3 + t % ws);
                let b = (3 + u / ws, 3 + u % ws);
                if !mcnet_tensor::ops::attention::same_shift_region(grid, grid, ws, shift, a, b) {
                    assert!(p < 1e-30, "masked weight {p}");
                }
            }
        }
    }
}
