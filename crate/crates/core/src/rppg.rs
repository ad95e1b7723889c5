//! Chrominance-based rPPG ground truth.
//!
//! Pipeline: mean RGB over a tracked forehead patch, per-channel division by
//! the temporal mean, zero-phase FIR bandpass, chrominance combination and a
//! 50-bin magnitude spectrum.

use crate::clip::Frames;
use crate::error::{Error, Result};
use crate::face::PosedShape;
use crate::ops::dft;
use crate::scalar::{from_usize, lit, Scalar};
use crate::tensor::Tensor;

pub const SPECTRUM_BINS: usize = 50;
pub const RESAMPLE_LEN: usize = 128;
pub const PASSBAND_HZ: (f64, f64) = (0.7, 4.0);
pub const FILTER_TAPS: usize = 61;
pub const MIN_FPS: f64 = 8.0;
pub const MIN_BANDPASS_LEN: usize = 32;
pub const MIN_SPECTRUM_LEN: usize = 50;
const DEGENERATE_SIGMA: f64 = 1e-12;
const ZERO_NORM: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct RgbTrace<T> {
    pub r: Vec<T>,
    pub g: Vec<T>,
    pub b: Vec<T>,
    pub fps: T,
}

impl<T: Scalar> RgbTrace<T> {
    pub fn new(r: Vec<T>, g: Vec<T>, b: Vec<T>, fps: T) -> Result<Self> {
        if r.len() != g.len() || r.len() != b.len() {
            return Err(Error::Rppg("trace channels differ in length".into()));
        }
        if !(fps > T::zero()) {
            return Err(Error::Rppg("fps must be positive".into()));
        }
        Ok(Self { r, g, b, fps })
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChromSignals<T> {
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub gamma: T,
    /// Set when `sigma(y)` was too small and `gamma` fell back to 1.
    pub degenerate: bool,
}

/// Unit-norm (or all-zero) magnitude spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct RppgSpectrum<T> {
    values: Vec<T>,
}

impl<T: Scalar> RppgSpectrum<T> {
    pub fn zeros() -> Self {
        Self { values: vec![T::zero(); SPECTRUM_BINS] }
    }

    /// Normalizes `raw` to unit L2 norm, or returns zeros when its norm is
    /// below `1e-9`.
    pub fn normalized(raw: &[T]) -> Result<Self> {
        if raw.len() != SPECTRUM_BINS {
            return Err(Error::Rppg(format!("spectrum needs {SPECTRUM_BINS} bins, got {}", raw.len())));
        }
        let norm = l2(raw);
        if norm > lit(ZERO_NORM) {
            Ok(Self { values: raw.iter().map(|&v| v / norm).collect() })
        } else {
            Ok(Self::zeros())
        }
    }

    /// Wraps stored values, checking the unit-or-zero norm invariant.
    pub fn from_values(values: Vec<T>) -> Result<Self> {
        if values.len() != SPECTRUM_BINS {
            return Err(Error::Rppg(format!("spectrum needs {SPECTRUM_BINS} bins, got {}", values.len())));
        }
        let n = l2(&values);
        if n != T::zero() && (n - T::one()).abs() > lit(1e-6) {
            return Err(Error::Rppg(format!("spectrum norm {n} is neither 0 nor 1")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn norm(&self) -> T {
        l2(&self.values)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == T::zero())
    }

    /// 1-based bin index of the largest magnitude (bin k is k cycles per clip).
    pub fn peak_bin(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best + 1
    }
}

fn l2<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

fn mean<T: Scalar>(v: &[T]) -> T {
    v.iter().copied().sum::<T>() / from_usize(v.len())
}

/// Population standard deviation.
fn std_dev<T: Scalar>(v: &[T]) -> T {
    let m = mean(v);
    (v.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / from_usize(v.len())).sqrt()
}

/// Mean colour per frame over the pixels hit by the patch vertices.
pub fn track_region<T: Scalar>(frames: &Frames, shapes: &[PosedShape<T>], patch: &[usize], fps: T) -> Result<RgbTrace<T>> {
    if shapes.len() != frames.count() {
        return Err(Error::Rppg(format!("{} shapes for {} frames", shapes.len(), frames.count())));
    }
    let (h, w) = (frames.height(), frames.width());
    let mut r = Vec::with_capacity(frames.count());
    let mut g = Vec::with_capacity(frames.count());
    let mut b = Vec::with_capacity(frames.count());
    let mut seen = vec![false; h * w];
    let mut pixels = Vec::new();
    for (t, shape) in shapes.iter().enumerate() {
        seen.fill(false);
        pixels.clear();
        for &vi in patch {
            let v = shape
                .vertices
                .get(vi)
                .ok_or_else(|| Error::Rppg(format!("patch vertex {vi} out of range")))?;
            let (x, y) = (v[0].floor(), v[1].floor());
            if x < T::zero() || y < T::zero() {
                continue;
            }
            let (Some(x), Some(y)) = (x.to_usize(), y.to_usize()) else { continue };
            if x < w && y < h && !seen[y * w + x] {
                seen[y * w + x] = true;
                pixels.push((y, x));
            }
        }
        if pixels.is_empty() {
            return Err(Error::Rppg(format!("tracked patch is empty in frame {t}")));
        }
        let mut acc = [T::zero(); 3];
        for &(y, x) in &pixels {
            let p = frames.pixel(t, y, x);
            for c in 0..3 {
                acc[c] += T::from_f32(p[c]).unwrap_or_else(T::zero);
            }
        }
        let n = from_usize::<T>(pixels.len());
        r.push(acc[0] / n);
        g.push(acc[1] / n);
        b.push(acc[2] / n);
    }
    RgbTrace::new(r, g, b, fps)
}

/// Divides each channel by its temporal mean.
pub fn skin_tone_normalize<T: Scalar>(trace: &RgbTrace<T>) -> Result<RgbTrace<T>> {
    let norm = |c: &[T], name: &str| -> Result<Vec<T>> {
        let m = mean(c);
        if !(m > T::zero()) {
            return Err(Error::Rppg(format!("channel {name} has non-positive mean")));
        }
        Ok(c.iter().map(|&v| v / m).collect())
    };
    RgbTrace::new(norm(&trace.r, "r")?, norm(&trace.g, "g")?, norm(&trace.b, "b")?, trace.fps)
}

/// 61-tap Hamming-windowed sinc bandpass for `[0.7, 4.0]` Hz at `fps`.
///
/// The taps are corrected by a scaled copy of the window so their sum is
/// exactly zero (no DC leakage).
pub fn design_bandpass<T: Scalar>(fps: T) -> Result<Vec<T>> {
    if !(fps >= lit(MIN_FPS)) {
        return Err(Error::Rppg(format!("fps {fps} is below {MIN_FPS} Hz; passband exceeds Nyquist")));
    }
    let fps = fps.to_f64().unwrap_or(0.0);
    let (f1, f2) = (PASSBAND_HZ.0 / fps, PASSBAND_HZ.1 / fps);
    let half = (FILTER_TAPS / 2) as f64;
    let sinc = |x: f64| if x == 0.0 { 1.0 } else { (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x) };
    let window: Vec<f64> = (0..FILTER_TAPS)
        .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (FILTER_TAPS - 1) as f64).cos())
        .collect();
    let mut taps: Vec<f64> = (0..FILTER_TAPS)
        .map(|n| {
            let m = n as f64 - half;
            (2.0 * f2 * sinc(2.0 * f2 * m) - 2.0 * f1 * sinc(2.0 * f1 * m)) * window[n]
        })
        .collect();
    let k = taps.iter().sum::<f64>() / window.iter().sum::<f64>();
    for (t, w) in taps.iter_mut().zip(&window) {
        *t -= k * w;
    }
    Ok(taps.into_iter().map(lit).collect())
}

/// `|H(f)|` of an FIR filter, evaluated directly from its taps.
pub fn frequency_response<T: Scalar>(taps: &[T], freq_hz: f64, fps: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * freq_hz / fps;
    let (mut re, mut im) = (0.0, 0.0);
    for (n, t) in taps.iter().enumerate() {
        let t = t.to_f64().unwrap_or(0.0);
        re += t * (w * n as f64).cos();
        im -= t * (w * n as f64).sin();
    }
    (re * re + im * im).sqrt()
}

/// Zero-phase bandpass: the symmetric FIR is applied centred, with the
/// signal reflected at both ends to cover the filter support.
pub fn bandpass<T: Scalar>(signal: &[T], fps: T) -> Result<Vec<T>> {
    let taps = design_bandpass(fps)?;
    if signal.len() < MIN_BANDPASS_LEN {
        return Err(Error::Rppg(format!("bandpass needs >= {MIN_BANDPASS_LEN} samples, got {}", signal.len())));
    }
    let n = signal.len() as isize;
    let half = (FILTER_TAPS / 2) as isize;
    let reflect = |i: isize| -> T {
        // whole-sample symmetric reflection about the end samples
        let mut i = i;
        loop {
            if i < 0 {
                i = -i;
            } else if i >= n {
                i = 2 * (n - 1) - i;
            } else {
                return signal[i as usize];
            }
        }
    };
    Ok((0..n)
        .map(|i| {
            taps.iter()
                .enumerate()
                .map(|(k, &h)| h * reflect(i + half - k as isize))
                .sum()
        })
        .collect())
}

/// Chrominance combination of bandpassed, tone-normalized channels.
pub fn chrom_combine<T: Scalar>(r: &[T], g: &[T], b: &[T]) -> Result<(ChromSignals<T>, Vec<T>)> {
    if r.len() != g.len() || r.len() != b.len() || r.is_empty() {
        return Err(Error::Rppg("chrom_combine needs equal, non-empty channels".into()));
    }
    let (c15, c2, c3) = (lit::<T>(1.5), lit::<T>(2.0), lit::<T>(3.0));
    let x: Vec<T> = r.iter().zip(g).map(|(&r, &g)| c3 * r - c2 * g).collect();
    let y: Vec<T> = r.iter().zip(g).zip(b).map(|((&r, &g), &b)| c15 * r + g - c15 * b).collect();
    let sy = std_dev(&y);
    let (gamma, degenerate) = if sy < lit(DEGENERATE_SIGMA) {
        log::warn!("chrom_combine: sigma(y) below threshold, using gamma = 1");
        (T::one(), true)
    } else {
        (std_dev(&x) / sy, false)
    };
    let half = gamma / c2;
    let p = r
        .iter()
        .zip(g)
        .zip(b)
        .map(|((&r, &g), &b)| c3 * (T::one() - half) * r - c2 * (T::one() + half) * g + c3 * half * b)
        .collect();
    Ok((ChromSignals { x, y, gamma, degenerate }, p))
}

/// Resamples `p` to 128 points spanning the clip (sample `i` at frame
/// position `i * T / 128`) and returns DFT magnitudes of bins `1..=50`
/// before normalization. Bin `k` corresponds to `k * fps / T` Hz.
pub fn raw_spectrum<T: Scalar>(p: &[T]) -> Result<Vec<T>> {
    if p.len() < MIN_SPECTRUM_LEN {
        return Err(Error::Rppg(format!("spectrum needs >= {MIN_SPECTRUM_LEN} samples, got {}", p.len())));
    }
    let t = p.len();
    let resampled: Vec<T> = (0..RESAMPLE_LEN)
        .map(|i| {
            let pos = from_usize::<T>(i * t) / from_usize::<T>(RESAMPLE_LEN);
            let lo = pos.floor().to_usize().unwrap_or(0).min(t - 1);
            if lo + 1 >= t {
                return p[t - 1];
            }
            let f = pos - from_usize::<T>(lo);
            p[lo] * (T::one() - f) + p[lo + 1] * f
        })
        .collect();
    let (mags, _) = dft::forward(&Tensor::new(&[RESAMPLE_LEN], resampled)?)?;
    Ok(mags.data()[..SPECTRUM_BINS].to_vec())
}

pub fn spectrum<T: Scalar>(p: &[T]) -> Result<RppgSpectrum<T>> {
    RppgSpectrum::normalized(&raw_spectrum(p)?)
}

/// Everything [`extract`] computes, for diagnostics.
#[derive(Clone, Debug)]
pub struct Extraction<T> {
    pub trace: RgbTrace<T>,
    pub chrom: ChromSignals<T>,
    pub pulse: Vec<T>,
    pub raw: Vec<T>,
    pub spectrum: RppgSpectrum<T>,
}

impl<T: Scalar> Extraction<T> {
    /// L2 norm of the spectrum before normalization.
    pub fn raw_energy(&self) -> T {
        l2(&self.raw)
    }
}

pub fn extract_detailed<T: Scalar>(frames: &Frames, shapes: &[PosedShape<T>], patch: &[usize], fps: T) -> Result<Extraction<T>> {
    let trace = track_region(frames, shapes, patch, fps)?;
    let norm = skin_tone_normalize(&trace)?;
    let rf = bandpass(&norm.r, fps)?;
    let gf = bandpass(&norm.g, fps)?;
    let bf = bandpass(&norm.b, fps)?;
    let (chrom, pulse) = chrom_combine(&rf, &gf, &bf)?;
    let raw = raw_spectrum(&pulse)?;
    let spectrum = RppgSpectrum::normalized(&raw)?;
    Ok(Extraction { trace, chrom, pulse, raw, spectrum })
}

/// Ground-truth rPPG spectrum of a clip from its tracked forehead patch.
pub fn extract<T: Scalar>(frames: &Frames, shapes: &[PosedShape<T>], patch: &[usize], fps: T) -> Result<RppgSpectrum<T>> {
    Ok(extract_detailed(frames, shapes, patch, fps)?.spectrum)
}

/// Frequency in Hz of 1-based bin `k` for a clip of `len` frames.
pub fn bin_frequency(k: usize, len: usize, fps: f64) -> f64 {
    k as f64 * fps / len as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn tone_normalization() {
        let t = RgbTrace::new(vec![2.0, 2.0], vec![1.0, 3.0], vec![0.5, 0.5], 30.0).unwrap();
        let n = skin_tone_normalize(&t).unwrap();
        assert_eq!(n.r, vec![1.0, 1.0]);
        assert_eq!(n.g, vec![0.5, 1.5]);
        assert_eq!(skin_tone_normalize(&n).unwrap(), n);
        let scaled = RgbTrace::new(vec![10.0, 10.0], vec![5.0, 15.0], vec![2.5, 2.5], 30.0).unwrap();
        assert_eq!(skin_tone_normalize(&scaled).unwrap(), n);
        let dead = RgbTrace::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![1.0, 1.0], 30.0).unwrap();
        assert!(skin_tone_normalize(&dead).is_err());
    }

    #[test]
    fn chrom_closed_forms() {
        let (c, p) = chrom_combine(&[1.0, -1.0], &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!(close(&c.x, &[3.0, -3.0], 1e-12));
        assert!(close(&c.y, &[1.5, -1.5], 1e-12));
        assert!((c.gamma - 2.0).abs() < 1e-12);
        assert!(close(&p, &[0.0, 0.0], 1e-12));

        let s = [1.0, -1.0];
        let (c, p) = chrom_combine(&s, &s, &s).unwrap();
        assert!(close(&c.x, &s, 1e-12) && close(&c.y, &s, 1e-12));
        assert!((c.gamma - 1.0).abs() < 1e-12);
        assert!(close(&p, &[0.0, 0.0], 1e-12));
    }

    #[test]
    fn degenerate_y_falls_back_to_unit_gamma() {
        let (c, _) = chrom_combine(&[1.0, 1.0], &[1.0, 1.0], &[2.5, 2.5]).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.gamma, 1.0);
    }

    #[test]
    fn bandpass_rejects_dc_and_low_fps() {
        let out = bandpass(&vec![1.0f64; 200], 30.0).unwrap();
        assert!(out.iter().all(|v| v.abs() < 1e-6));
        assert!(bandpass(&[1.0; 200], 7.5).is_err());
        assert!(bandpass(&[1.0; 20], 30.0).is_err());
    }

    #[test]
    fn zero_pulse_gives_zero_spectrum() {
        let s = spectrum(&vec![0.0; 120]).unwrap();
        assert!(s.is_zero());
        assert!(spectrum(&vec![0.0; 49]).is_err());
    }

    #[test]
    fn spectrum_is_scale_invariant() {
        let p: Vec<f64> = (0..150).map(|i| (i as f64 * 0.3).sin() + 0.2 * (i as f64 * 0.05).cos()).collect();
        let a = spectrum(&p).unwrap();
        let b = spectrum(&p.iter().map(|v| v * 7.0).collect::<Vec<_>>()).unwrap();
        assert!(close(a.values(), b.values(), 1e-12));
        assert!((a.norm() - 1.0).abs() < 1e-12);
    }
}
