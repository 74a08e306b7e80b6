//! RGB-T dataset scanning, loading, augmentation and batching.
//!
//! A dataset root holds `RGB/`, `T/` and `GT/` with matching file stems.
//! Pairs are kept in `[0, 1]`; the fixed per-channel normalization is
//! applied when a batch is assembled.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mcnet_tensor::{Scalar, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{io_err, McError, Result};
use crate::imageio::{has_image_extension, read_mask, read_rgb, resize_bilinear, resize_nearest};
use crate::labels::decouple;

pub const RGB_DIR: &str = "RGB";
pub const THERMAL_DIR: &str = "T";
pub const GT_DIR: &str = "GT";
/// Per-channel mean and standard deviation applied to both modalities.
pub const NORM_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const NORM_STD: [f64; 3] = [0.229, 0.224, 0.225];
/// Largest border crop, as a fraction of the side length.
pub const MAX_CROP: f64 = 0.1;
pub const WORKERS_ENV: &str = "MCNET_NUM_WORKERS";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub name: String,
    pub rgb: PathBuf,
    pub thermal: PathBuf,
    /// Absent for prediction-only folders.
    pub gt: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    /// Sorted by name.
    pub entries: Vec<Entry>,
    /// `(subdirectory, stem)` of files without a counterpart.
    pub orphans: Vec<(String, String)>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }
}

fn stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(McError::Dataset(format!("missing directory {}", dir.display())));
    }
    let mut out = BTreeMap::new();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && has_image_extension(p))
        .collect();
    files.sort();
    for p in files {
        if let Some(stem) = p.file_stem() {
            out.entry(stem.to_string_lossy().into_owned()).or_insert(p);
        }
    }
    Ok(out)
}

fn scan(root: &Path, with_gt: bool) -> Result<DatasetManifest> {
    let rgb = stems(&root.join(RGB_DIR))?;
    let thermal = stems(&root.join(THERMAL_DIR))?;
    let gt = if with_gt { Some(stems(&root.join(GT_DIR))?) } else { None };
    let mut entries = Vec::new();
    let mut orphans = Vec::new();
    for (name, r) in &rgb {
        let t = thermal.get(name);
        let g = gt.as_ref().map(|g| g.get(name));
        match (t, g) {
            (Some(t), None) => entries.push(Entry { name: name.clone(), rgb: r.clone(), thermal: t.clone(), gt: None }),
            (Some(t), Some(Some(g))) => {
                entries.push(Entry { name: name.clone(), rgb: r.clone(), thermal: t.clone(), gt: Some(g.clone()) })
            }
            _ => orphans.push((RGB_DIR.to_string(), name.clone())),
        }
    }
    let complete = |name: &String| entries.iter().any(|e| &e.name == name);
    for name in thermal.keys().filter(|n| !complete(n)) {
        orphans.push((THERMAL_DIR.to_string(), name.clone()));
    }
    if let Some(gt) = &gt {
        for name in gt.keys().filter(|n| !complete(n)) {
            orphans.push((GT_DIR.to_string(), name.clone()));
        }
    }
    Ok(DatasetManifest { root: root.to_path_buf(), entries, orphans })
}

/// Matches `RGB/`, `T/` and `GT/` by file stem, ignoring extensions.
pub fn scan_dataset(root: &Path) -> Result<DatasetManifest> {
    scan(root, true)
}

/// Like [`scan_dataset`] but only `RGB/` and `T/` are required.
pub fn scan_inputs(root: &Path) -> Result<DatasetManifest> {
    scan(root, false)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RgbtPair<T> {
    pub name: String,
    /// `[3, S, S]` in `[0, 1]`.
    pub rgb: Tensor<T>,
    pub thermal: Tensor<T>,
    /// `[S, S]`.
    pub gt: Tensor<T>,
    pub skeleton: Tensor<T>,
    pub contour: Tensor<T>,
    /// `(height, width)` of the RGB file.
    pub original_size: (usize, usize),
}

/// Reads an entry and resizes it to `size x size`: bilinear for the
/// images, nearest for the mask. Without a mask the labels are zero.
pub fn load_pair<T: Scalar>(entry: &Entry, size: usize) -> Result<RgbtPair<T>> {
    let rgb = read_rgb::<T>(&entry.rgb)?;
    let thermal = read_rgb::<T>(&entry.thermal)?;
    let (h, w) = (rgb.shape()[1], rgb.shape()[2]);
    if thermal.shape() != rgb.shape() {
        return Err(McError::Dataset(format!(
            "{}: RGB is {}x{} but thermal is {}x{}",
            entry.name,
            h,
            w,
            thermal.shape()[1],
            thermal.shape()[2]
        )));
    }
    let gt = match &entry.gt {
        Some(p) => resize_nearest(&read_mask::<T>(p)?, size, size),
        None => Tensor::zeros(vec![size, size]),
    };
    let labels = decouple(&gt)?;
    Ok(RgbtPair {
        name: entry.name.clone(),
        rgb: resize_bilinear(&rgb, size, size),
        thermal: resize_bilinear(&thermal, size, size),
        gt,
        skeleton: labels.skeleton,
        contour: labels.contour,
        original_size: (h, w),
    })
}

/// Keeps rows `top..h-bottom` and columns `left..w-right` of `[.., h, w]`.
pub fn crop<T: Scalar>(x: &Tensor<T>, top: usize, bottom: usize, left: usize, right: usize) -> Tensor<T> {
    let s = x.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let (oh, ow) = (h - top - bottom, w - left - right);
    let mut shape = s[..s.len() - 2].to_vec();
    shape.extend([oh, ow]);
    Tensor::from_fn(shape, |i| {
        let (p, r) = (i / (oh * ow), i % (oh * ow));
        x.data()[(p * h + r / ow + top) * w + r % ow + left]
    })
}

/// Mirrors `[.., h, w]` left to right.
pub fn flip_horizontal<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let w = s[s.len() - 1];
    Tensor::from_fn(s.to_vec(), |i| x.data()[i - i % w + (w - 1 - i % w)])
}

/// Rotates square `[.., s, s]` planes by `k` quarter turns counter-clockwise.
pub fn rot90<T: Scalar>(x: &Tensor<T>, k: u8) -> Tensor<T> {
    let mut out = x.clone();
    for _ in 0..k % 4 {
        let s = out.shape().to_vec();
        let n = s[s.len() - 1];
        let src = out.clone();
        out = Tensor::from_fn(s, |i| {
            let (p, r) = (i / (n * n), i % (n * n));
            let (y, x) = (r / n, r % n);
            src.data()[p * n * n + x * n + (n - 1 - y)]
        });
    }
    out
}

/// One draw of the training-time geometric augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AugmentOps {
    /// Pixels removed from the top, bottom, left and right.
    pub crop: [usize; 4],
    pub flip: bool,
    /// Counter-clockwise quarter turns.
    pub rot: u8,
}

impl AugmentOps {
    /// Crops of up to [`MAX_CROP`] per side, a fair flip and a uniform
    /// right-angle rotation.
    pub fn sample(rng: &mut impl Rng, size: usize) -> Self {
        let max = (size as f64 * MAX_CROP).floor() as usize;
        let crop = [0; 4].map(|_| rng.random_range(0..=max));
        AugmentOps { crop, flip: rng.random_bool(0.5), rot: rng.random_range(0..4) }
    }

    fn geometric<T: Scalar>(&self, x: &Tensor<T>, nearest: bool) -> Tensor<T> {
        let s = x.shape();
        let size = s[s.len() - 1];
        let [t, b, l, r] = self.crop;
        let mut y = x.clone();
        if self.crop != [0; 4] {
            let c = crop(x, t, b, l, r);
            y = if nearest { resize_nearest(&c, size, size) } else { resize_bilinear(&c, size, size) };
        }
        if self.flip {
            y = flip_horizontal(&y);
        }
        rot90(&y, self.rot)
    }

    /// Where output pixel `(oy, ox)` of a nearest-sampled plane of side
    /// `size` is read from in the input.
    pub fn source_pixel(&self, size: usize, oy: usize, ox: usize) -> (usize, usize) {
        // undo the rotation: output (y, x) of one quarter turn reads (x, n-1-y)
        let (mut y, mut x) = (oy, ox);
        for _ in 0..self.rot % 4 {
            (y, x) = (x, size - 1 - y);
        }
        if self.flip {
            x = size - 1 - x;
        }
        let [t, b, l, r] = self.crop;
        let (ch, cw) = (size - t - b, size - l - r);
        (y * ch / size + t, x * cw / size + l)
    }

    /// Applies the same transform to every map, then recomputes the label
    /// decoupling from the transformed mask.
    pub fn apply<T: Scalar>(&self, pair: &RgbtPair<T>) -> Result<RgbtPair<T>> {
        let gt = self.geometric(&pair.gt, true);
        let labels = decouple(&gt)?;
        Ok(RgbtPair {
            name: pair.name.clone(),
            rgb: self.geometric(&pair.rgb, false),
            thermal: self.geometric(&pair.thermal, false),
            gt,
            skeleton: labels.skeleton,
            contour: labels.contour,
            original_size: pair.original_size,
        })
    }
}

/// Seed of one sample's augmentation, independent of worker scheduling.
pub fn sample_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng.random()
}

pub fn augment<T: Scalar>(pair: &RgbtPair<T>, seed: u64) -> Result<RgbtPair<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AugmentOps::sample(&mut rng, pair.gt.shape()[1]).apply(pair)
}

/// `(x - mean) / std` per channel of `[3, H, W]`.
pub fn normalize<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let plane = x.shape()[1] * x.shape()[2];
    Tensor::from_fn(x.shape().to_vec(), |i| {
        let c = i / plane;
        (x.data()[i] - T::lit(NORM_MEAN[c])) / T::lit(NORM_STD[c])
    })
}

/// Stacked, normalized samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub names: Vec<String>,
    /// `[n, 3, S, S]`.
    pub rgb: Tensor<T>,
    pub thermal: Tensor<T>,
    /// `[n, 1, S, S]`.
    pub gt: Tensor<T>,
    pub skeleton: Tensor<T>,
    pub contour: Tensor<T>,
}

impl<T: Scalar> Batch<T> {
    pub fn from_pairs(pairs: &[RgbtPair<T>]) -> Result<Self> {
        let planes = |f: fn(&RgbtPair<T>) -> &Tensor<T>| -> Result<Tensor<T>> {
            let items: Vec<Tensor<T>> = pairs
                .iter()
                .map(|p| {
                    let t = f(p);
                    t.clone().reshape(vec![1, 1, t.shape()[0], t.shape()[1]])
                })
                .collect::<std::result::Result<_, _>>()?;
            Ok(Tensor::stack(&items)?)
        };
        Ok(Batch {
            names: pairs.iter().map(|p| p.name.clone()).collect(),
            rgb: Tensor::stack(&pairs.iter().map(|p| normalize(&p.rgb)).collect::<Vec<_>>())?,
            thermal: Tensor::stack(&pairs.iter().map(|p| normalize(&p.thermal)).collect::<Vec<_>>())?,
            gt: planes(|p| &p.gt)?,
            skeleton: planes(|p| &p.skeleton)?,
            contour: planes(|p| &p.contour)?,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Visiting order of one epoch.
pub fn epoch_order(n: usize, shuffle: bool, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000_0000_0000);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
    }
    order
}

/// Index groups of one epoch; the last group may be short.
pub fn batch_indices(n: usize, batch_size: usize, shuffle: bool, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(McError::Dataset("empty manifest".into()));
    }
    if batch_size == 0 {
        return Err(McError::Config("batch_size must be at least 1".into()));
    }
    Ok(epoch_order(n, shuffle, seed, epoch).chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Worker count: available parallelism, capped by `MCNET_NUM_WORKERS`.
pub fn worker_count() -> usize {
    let avail = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var(WORKERS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        Some(cap) if cap > 0 => avail.min(cap),
        _ => avail,
    }
}

/// Loads, augments and batches samples. Resized pairs are read once and
/// kept in memory.
pub struct Loader<T> {
    pub manifest: DatasetManifest,
    pub size: usize,
    pub batch_size: usize,
    pub shuffle: bool,
    pub augment: bool,
    pub seed: u64,
    pairs: Vec<RgbtPair<T>>,
    pool: rayon::ThreadPool,
}

impl<T: Scalar> Loader<T> {
    pub fn new(manifest: DatasetManifest, size: usize, batch_size: usize, shuffle: bool, augment: bool, seed: u64) -> Result<Self> {
        if manifest.is_empty() {
            return Err(McError::Dataset(format!("no complete samples under {}", manifest.root.display())));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(worker_count())
            .build()
            .map_err(|e| McError::Config(format!("worker pool: {e}")))?;
        let pairs = pool.install(|| manifest.entries.par_iter().map(|e| load_pair(e, size)).collect::<Result<Vec<_>>>())?;
        Ok(Loader { manifest, size, batch_size, shuffle, augment, seed, pairs, pool })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.pairs.len().div_ceil(self.batch_size)
    }

    /// Un-augmented pairs, in manifest order.
    pub fn pairs(&self) -> &[RgbtPair<T>] {
        &self.pairs
    }

    pub fn epoch_batches(&self, epoch: usize) -> Result<Vec<Vec<usize>>> {
        batch_indices(self.pairs.len(), self.batch_size, self.shuffle, self.seed, epoch)
    }

    /// Samples `indices` for `epoch`; results do not depend on how the
    /// workers are scheduled.
    pub fn batch(&self, epoch: usize, indices: &[usize]) -> Result<Batch<T>> {
        let pairs = self.pool.install(|| {
            indices
                .par_iter()
                .map(|&i| {
                    let p = &self.pairs[i];
                    if self.augment {
                        augment(p, sample_seed(self.seed, epoch, i))
                    } else {
                        Ok(p.clone())
                    }
                })
                .collect::<Result<Vec<_>>>()
        })?;
        Batch::from_pairs(&pairs)
    }

    /// Every batch of `epoch`, in order.
    pub fn iter_epoch(&self, epoch: usize) -> Result<impl Iterator<Item = Result<Batch<T>>> + '_> {
        Ok(self.epoch_batches(epoch)?.into_iter().map(move |idx| self.batch(epoch, &idx)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_keep_the_remainder() {
        let b = batch_indices(10, 4, false, 0, 0).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        assert!(batch_indices(0, 4, false, 0, 0).is_err());
    }

    #[test]
    fn shuffle_is_seeded_and_a_partition() {
        let a = batch_indices(17, 5, true, 3, 1).unwrap();
        assert_eq!(a, batch_indices(17, 5, true, 3, 1).unwrap());
        assert_ne!(a, batch_indices(17, 5, true, 3, 2).unwrap());
        let mut all: Vec<usize> = a.concat();
        all.sort();
        assert_eq!(all, (0..17).collect::<Vec<_>>());
    }

    #[test]
    fn flip_is_an_involution_and_four_turns_are_identity() {
        let x = Tensor::from_fn(vec![2, 5, 5], |i| i as f64);
        assert_eq!(flip_horizontal(&flip_horizontal(&x)), x);
        assert_eq!(rot90(&x, 4), x);
        assert_eq!(rot90(&rot90(&x, 1), 3), x);
    }

    #[test]
    fn quarter_turn_moves_top_right_to_top_left() {
        let x = Tensor::from_fn(vec![3, 3], |i| if i == 2 { 1.0 } else { 0.0 });
        assert_eq!(rot90(&x, 1).at2(0, 0), 1.0);
    }
}
