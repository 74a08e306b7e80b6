#![allow(dead_code)]

pub mod oracles;

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use mcnet_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Union of 1 to 3 random ellipses on an `h x w` grid.
pub fn blob_mask(rng: &mut impl Rng, h: usize, w: usize) -> Vec<bool> {
    let mut m = vec![false; h * w];
    for _ in 0..rng.random_range(1..=3) {
        let cy = rng.random_range(0.2..0.8) * h as f64;
        let cx = rng.random_range(0.2..0.8) * w as f64;
        let ry = rng.random_range(0.08..0.3) * h as f64;
        let rx = rng.random_range(0.08..0.3) * w as f64;
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = ((y as f64 - cy) / ry, (x as f64 - cx) / rx);
                if dy * dy + dx * dx <= 1.0 {
                    m[y * w + x] = true;
                }
            }
        }
    }
    m
}

pub fn mask_tensor(h: usize, w: usize, m: &[bool]) -> Tensor<f64> {
    Tensor::new(vec![h, w], m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).unwrap()
}

pub fn random_map(rng: &mut impl Rng, h: usize, w: usize) -> Tensor<f64> {
    Tensor::from_fn(vec![h, w], |_| rng.random::<f64>())
}

pub fn random_gt(rng: &mut impl Rng, h: usize, w: usize, p: f64) -> Tensor<f64> {
    Tensor::from_fn(vec![h, w], |_| if rng.random_bool(p) { 1.0 } else { 0.0 })
}

/// Writes `n` aligned triples under `root/{RGB,T,GT}`: the object is a
/// bright, warm blob over a noisy darker background.
pub fn write_dataset(root: &Path, n: usize, h: usize, w: usize, seed: u64) -> Vec<String> {
    for d in ["RGB", "T", "GT"] {
        std::fs::create_dir_all(root.join(d)).unwrap();
    }
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let name = format!("s{i:03}");
            let m = blob_mask(&mut r, h, w);
            let mut rgb = RgbImage::new(w as u32, h as u32);
            let mut t = GrayImage::new(w as u32, h as u32);
            let mut gt = GrayImage::new(w as u32, h as u32);
            let hue: [u8; 3] = [r.random_range(150..255), r.random_range(100..255), r.random_range(0..120)];
            for y in 0..h {
                for x in 0..w {
                    let fg = m[y * w + x];
                    let noise = r.random_range(0..40u8);
                    let px = if fg { hue.map(|c| c.saturating_sub(noise / 2)) } else { [noise + 20, noise + 30, noise + 40] };
                    rgb.put_pixel(x as u32, y as u32, Rgb(px));
                    t.put_pixel(x as u32, y as u32, Luma([if fg { 210 - noise } else { 40 + noise }]));
                    gt.put_pixel(x as u32, y as u32, Luma([if fg { 255 } else { 0 }]));
                }
            }
            rgb.save(root.join("RGB").join(format!("{name}.png"))).unwrap();
            t.save(root.join("T").join(format!("{name}.png"))).unwrap();
            gt.save(root.join("GT").join(format!("{name}.png"))).unwrap();
            name
        })
        .collect()
}
