//! On-disk artifact conventions.
//!
//! Complex arrays are stored as little-endian interleaved `(re, im)` `f64`
//! pairs, row-major, with no header. Every binary file `name.bin` has a JSON
//! sidecar `name.json` describing its shape and provenance.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format {
        path: path.to_owned(),
        reason: e.to_string(),
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format { path: path.to_owned(), reason: e.to_string() })
}

pub fn encode_complex(values: &[Complex64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 16);
    for v in values {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    out
}

pub fn decode_complex(bytes: &[u8]) -> std::result::Result<Vec<Complex64>, String> {
    if bytes.len() % 16 != 0 {
        return Err(format!("length {} is not a multiple of 16 bytes", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            Complex64::new(re, im)
        })
        .collect())
}

pub fn write_complex(path: &Path, values: &[Complex64]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&encode_complex(values)).map_err(|e| Error::io(path, e))
}

pub fn read_complex(path: &Path, expected_len: usize) -> Result<Vec<Complex64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let values = decode_complex(&bytes).map_err(|reason| Error::Format { path: path.to_owned(), reason })?;
    if values.len() != expected_len {
        return Err(Error::Format {
            path: path.to_owned(),
            reason: format!("expected {expected_len} complex values, found {}", values.len()),
        });
    }
    Ok(values)
}

/// Writes a row-major real image as CSV, one image row per line.
pub fn write_csv_image(path: &Path, width: usize, values: &[f64]) -> Result<()> {
    let mut text = String::new();
    for row in values.chunks(width.max(1)) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        text.push_str(&line.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Binary (P5) 8-bit PGM. Values are mapped linearly from `[0, scale]` to
/// `[0, 255]` and clamped.
pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64], scale: f64) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::DimensionMismatch(format!(
            "{} pixels for a {width}x{height} image",
            values.len()
        )));
    }
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend(values.iter().map(|&v| {
        let level = if scale > 0.0 { (v / scale * 255.0).round() } else { 0.0 };
        level.clamp(0.0, 255.0) as u8
    }));
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
