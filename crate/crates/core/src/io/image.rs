//! Binary PGM/PPM encoding.

use std::path::Path;

use super::container::write_atomic;
use crate::error::{Error, Result};

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// `P5` grayscale image of row-major values in `[0, 1]` (clamped).
pub fn pgm_bytes(width: usize, height: usize, values: &[f64]) -> Result<Vec<u8>> {
    if values.len() != width * height {
        return Err(Error::Format(format!("{} values for a {width}x{height} image", values.len())));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| to_byte(v)));
    Ok(out)
}

/// `P6` colour image of interleaved RGB values in `[0, 1]` (clamped).
pub fn ppm_bytes(width: usize, height: usize, rgb: &[f64]) -> Result<Vec<u8>> {
    if rgb.len() != width * height * 3 {
        return Err(Error::Format(format!("{} values for a {width}x{height} RGB image", rgb.len())));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend(rgb.iter().map(|&v| to_byte(v)));
    Ok(out)
}

pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    write_atomic(path, &pgm_bytes(width, height, values)?)
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[f64]) -> Result<()> {
    write_atomic(path, &ppm_bytes(width, height, rgb)?)
}

/// Rescales values linearly so the smallest maps to 0 and the largest to 1.
pub fn normalize_range(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}
