//! On-disk data containers.
//!
//! Every tensor is a raw little-endian block next to a JSON sidecar
//! (`<file>.json`) that records the format version, dtype, shape, a config
//! hash and free-form metadata. Real data is f32; complex data is
//! interleaved (re, im) f32 pairs with dtype "c32le".

use crate::error::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SidecarMeta {
    pub format_version: u32,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub config_hash: String,
    #[serde(default)]
    pub extra: serde_json::Value,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    os.into()
}

/// SHA-256 hex digest of a canonical JSON value (serde_json sorts object
/// keys, so equal values hash equally).
pub fn json_hash(value: &serde_json::Value) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(value.to_string().as_bytes());
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn write_sidecar(path: &Path, meta: &SidecarMeta) -> Result<()> {
    let json = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    std::fs::write(sidecar_path(path), json)
        .map_err(|e| Error::io(sidecar_path(path).display().to_string(), e))
}

fn read_sidecar(path: &Path) -> Result<SidecarMeta> {
    let sp = sidecar_path(path);
    let raw = std::fs::read_to_string(&sp).map_err(|e| Error::io(sp.display().to_string(), e))?;
    let meta: SidecarMeta = serde_json::from_str(&raw)
        .map_err(|e| Error::format(sp.display().to_string(), e.to_string()))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::format(
            sp.display().to_string(),
            format!("format version {} != {}", meta.format_version, FORMAT_VERSION),
        ));
    }
    Ok(meta)
}

/// Write an f32 tensor and its sidecar.
pub fn write_f32_tensor(
    path: &Path,
    shape: &[usize],
    data: &[f32],
    config_hash: &str,
    extra: serde_json::Value,
) -> Result<()> {
    let count: usize = shape.iter().product();
    if count != data.len() {
        return Err(Error::shape(format!(
            "shape {:?} holds {count} values, got {}",
            shape,
            data.len()
        )));
    }
    let mut buf = Vec::with_capacity(data.len() * 4);
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, &buf).map_err(|e| Error::io(path.display().to_string(), e))?;
    write_sidecar(
        path,
        &SidecarMeta {
            format_version: FORMAT_VERSION,
            dtype: "f32le".to_string(),
            shape: shape.to_vec(),
            config_hash: config_hash.to_string(),
            extra,
        },
    )
}

/// Read an f32 tensor written by `write_f32_tensor`.
pub fn read_f32_tensor(path: &Path) -> Result<(SidecarMeta, Vec<f32>)> {
    let meta = read_sidecar(path)?;
    if meta.dtype != "f32le" {
        return Err(Error::format(
            path.display().to_string(),
            format!("dtype {} where f32le expected", meta.dtype),
        ));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let count: usize = meta.shape.iter().product();
    if bytes.len() != count * 4 {
        return Err(Error::format(
            path.display().to_string(),
            format!("expected {} bytes, found {}", count * 4, bytes.len()),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((meta, data))
}

/// Write a complex tensor as interleaved f32 pairs.
pub fn write_c32_tensor(
    path: &Path,
    shape: &[usize],
    data: &[Complex64],
    config_hash: &str,
    extra: serde_json::Value,
) -> Result<()> {
    let count: usize = shape.iter().product();
    if count != data.len() {
        return Err(Error::shape(format!(
            "shape {:?} holds {count} values, got {}",
            shape,
            data.len()
        )));
    }
    let mut buf = Vec::with_capacity(data.len() * 8);
    for v in data {
        buf.extend_from_slice(&(v.re as f32).to_le_bytes());
        buf.extend_from_slice(&(v.im as f32).to_le_bytes());
    }
    std::fs::write(path, &buf).map_err(|e| Error::io(path.display().to_string(), e))?;
    write_sidecar(
        path,
        &SidecarMeta {
            format_version: FORMAT_VERSION,
            dtype: "c32le".to_string(),
            shape: shape.to_vec(),
            config_hash: config_hash.to_string(),
            extra,
        },
    )
}

/// Read a complex tensor written by `write_c32_tensor`.
pub fn read_c32_tensor(path: &Path) -> Result<(SidecarMeta, Vec<Complex64>)> {
    let meta = read_sidecar(path)?;
    if meta.dtype != "c32le" {
        return Err(Error::format(
            path.display().to_string(),
            format!("dtype {} where c32le expected", meta.dtype),
        ));
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let count: usize = meta.shape.iter().product();
    if bytes.len() != count * 8 {
        return Err(Error::format(
            path.display().to_string(),
            format!("expected {} bytes, found {}", count * 8, bytes.len()),
        ));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes(c[..4].try_into().unwrap());
            let im = f32::from_le_bytes(c[4..].try_into().unwrap());
            Complex64::new(re as f64, im as f64)
        })
        .collect();
    Ok((meta, data))
}
