//! Binary PGM emission for depth views and score heat maps.
//!
//! Scores and depths live in [0, 1] and map linearly onto 0..=255, rounding
//! to nearest with halves away from zero. Score grids are upsampled to the
//! input resolution by nearest neighbor, which keeps their blockwise or
//! striped structure visible instead of smearing it.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use shapegen::DepthImage;

/// Linear [0, 1] -> 0..=255; `f64::round` ties go away from zero, so 0.5
/// lands on 128.
pub fn scale_byte(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// A length-c score vector as vertical bars: column x shows channel
/// floor(x * c / res).
pub fn rasterize_channel(pre: &[f64], res: usize) -> Vec<u8> {
    let c = pre.len();
    let row: Vec<u8> = (0..res).map(|x| scale_byte(pre[x * c / res])).collect();
    row.iter().copied().cycle().take(res * res).collect()
}

/// An h x w score map blown up to res x res; each cell covers a
/// (res/h) x (res/w) block.
pub fn rasterize_part(pre: &[f64], h: usize, w: usize, res: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(res * res);
    for y in 0..res {
        let row = y * h / res;
        for x in 0..res {
            out.push(scale_byte(pre[row * w + x * w / res]));
        }
    }
    out
}

/// One scalar score over the whole frame.
pub fn rasterize_uniform(score: f64, res: usize) -> Vec<u8> {
    vec![scale_byte(score); res * res]
}

pub fn depth_bytes(img: &DepthImage) -> Vec<u8> {
    img.depths().iter().map(|&d| scale_byte(d)).collect()
}

pub fn pgm_bytes(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height, "pixel count vs dimensions");
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    fs::write(path, pgm_bytes(width, height, pixels))
        .with_context(|| format!("writing {}", path.display()))
}
