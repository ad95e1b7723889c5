//! Align-corners bilinear resampling over NCHW tensors.

use super::dims4;
use crate::error::{shape_err, Result};
use crate::scalar::{from_usize, Scalar};
use crate::tensor::Tensor;

/// Source coordinate taps for one axis: (lo, hi, weight of hi).
fn taps<T: Scalar>(input: usize, output: usize) -> Vec<(usize, usize, T)> {
    (0..output)
        .map(|i| {
            if output == 1 || input == 1 {
                return (0, 0, T::zero());
            }
            let pos = from_usize::<T>(i * (input - 1)) / from_usize::<T>(output - 1);
            let lo = pos.floor().to_usize().unwrap_or(0).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            (lo, hi, pos - from_usize::<T>(lo))
        })
        .collect()
}

pub fn forward<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = dims4(x.shape()).ok_or_else(|| shape_err!("resize input must be NCHW, got {:?}", x.shape()))?;
    if out_h == 0 || out_w == 0 {
        return Err(shape_err!("resize output dims must be >= 1"));
    }
    if out_h == h && out_w == w {
        return Ok(x.clone());
    }
    let ty = taps::<T>(h, out_h);
    let tx = taps::<T>(w, out_w);
    let xs = x.data();
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in 0..n * c {
        let p = &xs[plane * h * w..(plane + 1) * h * w];
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                let top = p[y0 * w + x0] * (T::one() - fx) + p[y0 * w + x1] * fx;
                let bot = p[y1 * w + x0] * (T::one() - fx) + p[y1 * w + x1] * fx;
                out.push(top * (T::one() - fy) + bot * fy);
            }
        }
    }
    Tensor::new(&[n, c, out_h, out_w], out)
}

pub fn backward<T: Scalar>(input_shape: &[usize], dout: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = dims4(input_shape).ok_or_else(|| shape_err!("resize input must be NCHW"))?;
    let (_, _, out_h, out_w) = dims4(dout.shape()).ok_or_else(|| shape_err!("resize grad must be NCHW"))?;
    if out_h == h && out_w == w {
        return Ok(dout.clone());
    }
    let ty = taps::<T>(h, out_h);
    let tx = taps::<T>(w, out_w);
    let ds = dout.data();
    let mut dx = vec![T::zero(); n * c * h * w];
    for plane in 0..n * c {
        let p = &mut dx[plane * h * w..(plane + 1) * h * w];
        let d = &ds[plane * out_h * out_w..(plane + 1) * out_h * out_w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let g = d[oy * out_w + ox];
                let gt = g * (T::one() - fy);
                let gb = g * fy;
                p[y0 * w + x0] += gt * (T::one() - fx);
                p[y0 * w + x1] += gt * fx;
                p[y1 * w + x0] += gb * (T::one() - fx);
                p[y1 * w + x1] += gb * fx;
            }
        }
    }
    Tensor::new(input_shape, dx)
}
