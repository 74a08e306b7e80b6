//! Decoupling of a binary mask into a skeleton map (normalized interior
//! distance) and a contour map (the remainder).

use std::fs;
use std::path::{Path, PathBuf};

use mcnet_tensor::{Scalar, Tensor};

use crate::error::{io_err, McError, Result};
use crate::imageio::{has_image_extension, read_mask, write_gray};

/// How the distance field is scaled into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Divide by the largest distance in the image.
    #[default]
    Global,
    /// Divide by the largest distance within each 8-connected component.
    PerComponent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoupledLabels<T> {
    pub gt: Tensor<T>,
    pub skeleton: Tensor<T>,
    pub contour: Tensor<T>,
}

fn binary_mask<T: Scalar>(mask: &Tensor<T>) -> Result<(usize, usize, Vec<bool>)> {
    let [h, w] = mask.dims2()?;
    let mut out = Vec::with_capacity(h * w);
    for &v in mask.data() {
        if v == T::one() {
            out.push(true);
        } else if v == T::zero() {
            out.push(false);
        } else {
            return Err(McError::Input(format!("mask is not binary (found value {v})")));
        }
    }
    Ok((h, w, out))
}

/// Lower envelope of parabolas: `d[q] = min_p (q - p)^2 + f[p]` for finite `f`.
fn envelope_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        loop {
            let p = v[k] as f64;
            let s = ((f[q] + qf * qf) - (f[v[k]] + p * p)) / (2.0 * (qf - p));
            if s <= z[k] {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        *out = dq * dq + f[v[k]];
    }
}

/// Exact squared Euclidean distance from every `true` pixel to the nearest
/// `false` pixel, where everything outside the image counts as `false`.
pub fn squared_edt(h: usize, w: usize, fg: &[bool]) -> Vec<f64> {
    // columns: 1-D distance to the nearest background row, border included
    let mut col = vec![0.0; h * w];
    for x in 0..w {
        let mut last: isize = -1;
        for y in 0..h {
            if !fg[y * w + x] {
                last = y as isize;
            }
            col[y * w + x] = (y as isize - last) as f64;
        }
        let mut next = h as isize;
        for y in (0..h).rev() {
            if !fg[y * w + x] {
                next = y as isize;
            }
            let d = col[y * w + x].min((next - y as isize) as f64);
            col[y * w + x] = d * d;
        }
    }
    // rows, with one background column on each side
    let n = w + 2;
    let (mut f, mut d) = (vec![0.0; n], vec![0.0; n]);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0; n + 1]);
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        f[0] = 0.0;
        f[n - 1] = 0.0;
        f[1..=w].copy_from_slice(&col[y * w..(y + 1) * w]);
        envelope_1d(&f, &mut d, &mut v, &mut z);
        out[y * w..(y + 1) * w].copy_from_slice(&d[1..=w]);
    }
    out
}

/// Euclidean distance from each foreground pixel of a binary `[H, W]` mask
/// to the nearest background pixel (image border counts as background); 0 on
/// background.
pub fn distance_transform<T: Scalar>(mask: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, fg) = binary_mask(mask)?;
    let sq = squared_edt(h, w, &fg);
    Ok(Tensor::new(vec![h, w], sq.iter().map(|&d| T::lit(d.sqrt())).collect())?)
}

/// 8-connected component labels of the foreground, `0` on background.
pub fn components(h: usize, w: usize, fg: &[bool]) -> (Vec<usize>, usize) {
    let mut label = vec![0usize; h * w];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !fg[start] || label[start] != 0 {
            continue;
        }
        count += 1;
        label[start] = count;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if fg[j] && label[j] == 0 {
                        label[j] = count;
                        stack.push(j);
                    }
                }
            }
        }
    }
    (label, count)
}

pub fn decouple<T: Scalar>(gt: &Tensor<T>) -> Result<DecoupledLabels<T>> {
    decouple_with(gt, Normalization::Global)
}

/// Skeleton = normalized distance transform, contour = gt - skeleton.
pub fn decouple_with<T: Scalar>(gt: &Tensor<T>, norm: Normalization) -> Result<DecoupledLabels<T>> {
    let (h, w, fg) = binary_mask(gt)?;
    let dist: Vec<f64> = squared_edt(h, w, &fg).into_iter().map(f64::sqrt).collect();
    let scale: Vec<f64> = match norm {
        Normalization::Global => {
            let m = dist.iter().copied().fold(0.0, f64::max);
            vec![m; h * w]
        }
        Normalization::PerComponent => {
            let (label, count) = components(h, w, &fg);
            let mut maxes = vec![0.0f64; count + 1];
            for (i, &l) in label.iter().enumerate() {
                maxes[l] = maxes[l].max(dist[i]);
            }
            label.iter().map(|&l| maxes[l]).collect()
        }
    };
    let skeleton = Tensor::new(
        vec![h, w],
        dist.iter().zip(&scale).map(|(&d, &m)| if m > 0.0 { T::lit(d / m) } else { T::zero() }).collect(),
    )?;
    let contour = gt.zip_map(&skeleton, |g, s| g - s)?;
    Ok(DecoupledLabels { gt: gt.clone(), skeleton, contour })
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct DecoupleSummary {
    pub processed: usize,
    pub written: Vec<PathBuf>,
    /// Unreadable inputs with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

/// Decouples every mask image in `gt_dir` (binarized at 128), writing
/// `<name>_skeleton.png` and `<name>_contour.png` to `out_dir`.
pub fn decouple_directory(gt_dir: &Path, out_dir: &Path) -> Result<DecoupleSummary> {
    let mut files: Vec<PathBuf> = fs::read_dir(gt_dir)
        .map_err(io_err(gt_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && has_image_extension(p))
        .collect();
    files.sort();
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut summary = DecoupleSummary::default();
    for path in files {
        let mask = match read_mask::<f64>(&path) {
            Ok(m) => m,
            Err(e) => {
                summary.skipped.push((path, e.to_string()));
                continue;
            }
        };
        let labels = decouple(&mask)?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for (suffix, map) in [("skeleton", &labels.skeleton), ("contour", &labels.contour)] {
            let out = out_dir.join(format!("{stem}_{suffix}.png"));
            write_gray(&out, map)?;
            summary.written.push(out);
        }
        summary.processed += 1;
    }
    Ok(summary)
}
