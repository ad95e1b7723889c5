//! Magnitude spectrum layer.
//!
//! Rows of length `N` map to `|X_k|` for `k = 1..=N/2` under the unnormalized
//! DFT `X_k = sum_n x_n exp(-2 pi i k n / N)`. The DC bin is dropped.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn rows<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize)> {
    let (n, len) = match *x.shape() {
        [len] => (1, len),
        [n, len] => (n, len),
        _ => return Err(shape_err!("dft_magnitude expects [N] or [B, N], got {:?}", x.shape())),
    };
    if len % 2 != 0 {
        return Err(shape_err!("dft_magnitude length must be even, got {}", len));
    }
    Ok((n, len))
}

/// Forward pass. Returns magnitudes and the complex bins `1..=N/2` needed by
/// the backward pass.
pub fn forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<Complex<T>>)> {
    let (n, len) = rows(x)?;
    let half = len / 2;
    let fft = FftPlanner::<T>::new().plan_fft_forward(len);
    let mut mags = Vec::with_capacity(n * half);
    let mut bins = Vec::with_capacity(n * half);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); len];
    for row in x.data().chunks(len) {
        for (b, &v) in buf.iter_mut().zip(row) {
            *b = Complex::new(v, T::zero());
        }
        fft.process(&mut buf);
        for z in &buf[1..=half] {
            bins.push(*z);
            mags.push(z.norm());
        }
    }
    let shape = if x.rank() == 1 { vec![half] } else { vec![n, half] };
    Ok((Tensor::new(&shape, mags)?, bins))
}

/// Backward pass: `dx_n = Re(sum_k g_k X_k / |X_k| e^{+2 pi i k n / N})`,
/// evaluated with an inverse FFT. Bins with `|X_k| = 0` contribute nothing.
pub fn backward<T: Scalar>(input_shape: &[usize], bins: &[Complex<T>], dout: &Tensor<T>) -> Result<Tensor<T>> {
    let len = *input_shape.last().ok_or_else(|| shape_err!("empty shape"))?;
    let half = len / 2;
    let ifft = FftPlanner::<T>::new().plan_fft_inverse(len);
    let mut dx = Vec::with_capacity(bins.len() * 2);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); len];
    for (zs, gs) in bins.chunks(half).zip(dout.data().chunks(half)) {
        buf.fill(Complex::new(T::zero(), T::zero()));
        for (k, (z, &g)) in zs.iter().zip(gs).enumerate() {
            let mag = z.norm();
            if mag > T::zero() {
                buf[k + 1] = *z * (g / mag);
            }
        }
        ifft.process(&mut buf);
        dx.extend(buf.iter().map(|c| c.re));
    }
    Tensor::new(input_shape, dx)
}
