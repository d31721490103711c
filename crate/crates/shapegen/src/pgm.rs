//! Binary PGM (P5) export for depth images and score maps.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

/// 16-bit P5 with maxval 65535; samples are written big-endian as the format
/// requires. `values` are clamped to [0, 1] and scaled; rounding is
/// half-away-from-zero.
pub fn write_pgm16(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    write_pgm(path, width, height, values, 65535)
}

/// 8-bit P5 with maxval 255.
pub fn write_pgm8(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    write_pgm(path, width, height, values, 255)
}

fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64], maxval: u32) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::InvalidConfig(format!(
            "{}x{} image needs {} samples, got {}",
            width,
            height,
            width * height,
            values.len()
        )));
    }
    let mut buf = Vec::with_capacity(32 + values.len() * 2);
    write!(&mut buf, "P5\n{width} {height}\n{maxval}\n").expect("in-memory write");
    for &v in values {
        let level = (v.clamp(0.0, 1.0) * maxval as f64).round() as u32;
        if maxval > 255 {
            buf.extend_from_slice(&(level as u16).to_be_bytes());
        } else {
            buf.push(level as u8);
        }
    }
    fs::write(path, &buf).map_err(|e| io_err(path, e))
}
