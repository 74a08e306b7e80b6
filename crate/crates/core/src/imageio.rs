//! Image file reading and writing, and plain-array resizing.

use std::path::Path;

use image::{GrayImage, ImageReader, Luma};
use mcnet_tensor::ops::pool::resize_bilinear_planes;
use mcnet_tensor::{Scalar, Tensor};

use crate::error::{McError, Result};

pub const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "bmp", "tif"];

fn open(path: &Path) -> Result<image::DynamicImage> {
    let img_err = |msg: String| McError::Image { path: path.to_path_buf(), msg };
    ImageReader::open(path)
        .map_err(|e| McError::Io { path: path.to_path_buf(), source: e })?
        .with_guessed_format()
        .map_err(|e| McError::Io { path: path.to_path_buf(), source: e })?
        .decode()
        .map_err(|e| img_err(e.to_string()))
}

/// `[3, H, W]` in `[0, 1]`. Grayscale files are replicated to three channels.
pub fn read_rgb<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let img = open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    let inv = T::lit(1.0 / 255.0);
    Ok(Tensor::from_fn(vec![3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        T::lit(raw[p * 3 + c] as f64) * inv
    }))
}

/// Luma bytes, `(height, width, data)`.
pub fn read_luma(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = open(path)?.to_luma8();
    Ok((img.height() as usize, img.width() as usize, img.into_raw()))
}

/// `[H, W]` in `[0, 1]`.
pub fn read_gray<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let (h, w, raw) = read_luma(path)?;
    Ok(Tensor::new(vec![h, w], raw.iter().map(|&v| T::lit(v as f64 / 255.0)).collect())?)
}

/// `[H, W]` mask, 1 where the stored value is at least 128.
pub fn read_mask<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let (h, w, raw) = read_luma(path)?;
    Ok(Tensor::new(vec![h, w], raw.iter().map(|&v| if v >= 128 { T::one() } else { T::zero() }).collect())?)
}

/// Quantizes `[0, 1]` values to 8 bits: `round(255 v)`, clamped.
pub fn quantize<T: Scalar>(v: T) -> u8 {
    (v.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an `[H, W]` map in `[0, 1]` as 8-bit grayscale.
pub fn write_gray<T: Scalar>(path: &Path, map: &Tensor<T>) -> Result<()> {
    let [h, w] = map.dims2()?;
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([quantize(map.at2(y as usize, x as usize))]));
    save(path, &img)
}

pub fn save(path: &Path, img: &GrayImage) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| McError::Io { path: dir.to_path_buf(), source: e })?;
    }
    img.save(path).map_err(|e| McError::Image { path: path.to_path_buf(), msg: e.to_string() })
}

/// Bilinear resize of `[c, h, w]` (or `[h, w]`) to `oh x ow`.
pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, oh: usize, ow: usize) -> Tensor<T> {
    let s = x.shape();
    let (lead, h, w) = (&s[..s.len() - 2], s[s.len() - 2], s[s.len() - 1]);
    if (h, w) == (oh, ow) {
        return x.clone();
    }
    let planes: usize = lead.iter().product();
    let mut shape = lead.to_vec();
    shape.extend([oh, ow]);
    Tensor::new(shape, resize_bilinear_planes(x.data(), planes, h, w, oh, ow)).expect("shape")
}

/// Nearest-neighbour resize of `[h, w]` (or `[c, h, w]`), sampling
/// `floor(o * in / out)`.
pub fn resize_nearest<T: Scalar>(x: &Tensor<T>, oh: usize, ow: usize) -> Tensor<T> {
    let s = x.shape();
    let (lead, h, w) = (&s[..s.len() - 2], s[s.len() - 2], s[s.len() - 1]);
    let mut shape = lead.to_vec();
    shape.extend([oh, ow]);
    Tensor::from_fn(shape, |i| {
        let (p, r) = (i / (oh * ow), i % (oh * ow));
        let (oy, ox) = (r / ow, r % ow);
        let (y, x0) = (oy * h / oh, ox * w / ow);
        x.data()[(p * h + y) * w + x0]
    })
}

pub fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}
