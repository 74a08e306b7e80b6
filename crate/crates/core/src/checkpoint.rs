//! Tensor archives in the safetensors format.
//!
//! Files are written to a temporary sibling and renamed into place, so a
//! crash never leaves a truncated archive behind.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use mcnet_tensor::{DType, NamedTensors, Scalar, Tensor};
use safetensors::tensor::TensorView;
use safetensors::{Dtype, SafeTensors};

use crate::error::{io_err, McError, Result};

pub const FORMAT_KEY: &str = "format";
pub const FORMAT_NAME: &str = "mcnet";
pub const VERSION_KEY: &str = "format_version";
pub const FORMAT_VERSION: &str = "1";

fn ckpt_err(path: &Path, msg: impl ToString) -> McError {
    McError::Checkpoint { path: path.to_path_buf(), msg: msg.to_string() }
}

fn to_bytes<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(t.numel() * T::DTYPE.size_of());
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

/// Writes `entries` plus string metadata (a format tag and version are
/// always added).
pub fn write_tensors<T: Scalar>(
    path: &Path,
    entries: &[(String, Tensor<T>)],
    metadata: &HashMap<String, String>,
) -> Result<()> {
    let dtype = match T::DTYPE {
        DType::F32 => Dtype::F32,
        DType::F64 => Dtype::F64,
    };
    let bytes: Vec<(String, Vec<usize>, Vec<u8>)> =
        entries.iter().map(|(k, t)| (k.clone(), t.shape().to_vec(), to_bytes(t))).collect();
    let views = bytes
        .iter()
        .map(|(k, s, b)| Ok((k.as_str(), TensorView::new(dtype, s.clone(), b).map_err(|e| ckpt_err(path, e))?)))
        .collect::<Result<Vec<_>>>()?;
    let mut meta = metadata.clone();
    meta.insert(FORMAT_KEY.into(), FORMAT_NAME.into());
    meta.insert(VERSION_KEY.into(), FORMAT_VERSION.into());
    let buf = safetensors::serialize(views, &Some(meta)).map_err(|e| ckpt_err(path, e))?;
    write_atomic(path, &buf)
}

/// Writes `data` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, data: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = PathBuf::from(path);
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    tmp.set_file_name(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, data).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// The string metadata of a safetensors file.
pub fn read_metadata(path: &Path) -> Result<HashMap<String, String>> {
    let buf = fs::read(path).map_err(io_err(path))?;
    let (_, header) = SafeTensors::read_metadata(&buf).map_err(|e| ckpt_err(path, e))?;
    Ok(header.metadata().clone().unwrap_or_default())
}

/// Reads every tensor (converted to `T`) in file order, and the metadata.
pub fn read_tensors<T: Scalar>(path: &Path) -> Result<(NamedTensors<T>, HashMap<String, String>)> {
    let buf = fs::read(path).map_err(io_err(path))?;
    let (_, header) = SafeTensors::read_metadata(&buf).map_err(|e| ckpt_err(path, e))?;
    let meta = header.metadata().clone().unwrap_or_default();
    let st = SafeTensors::deserialize(&buf).map_err(|e| ckpt_err(path, e))?;
    let mut out = Vec::new();
    for (name, view) in st.tensors() {
        let shape = view.shape().to_vec();
        let data: Vec<T> = match view.dtype() {
            Dtype::F32 => view.data().chunks_exact(4).map(|b| T::lit(f32::read_le(b) as f64)).collect(),
            Dtype::F64 => view.data().chunks_exact(8).map(|b| T::lit(f64::read_le(b))).collect(),
            other => return Err(ckpt_err(path, format!("tensor `{name}` has unsupported dtype {other:?}"))),
        };
        out.push((name, Tensor::new(shape, data)?));
    }
    // file order, not hash order
    let mut offsets: HashMap<String, usize> = HashMap::new();
    for (name, info) in header.tensors() {
        offsets.insert(name, info.data_offsets.0);
    }
    out.sort_by_key(|(n, _)| offsets.get(n).copied().unwrap_or(usize::MAX));
    Ok((out, meta))
}
