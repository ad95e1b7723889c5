//! 3x3, stride 1, zero-padded ("same") convolution via im2col + GEMM.

use rayon::prelude::*;

use super::dims4;
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const KS: usize = 3;

fn check(x: &Tensor<impl Scalar>, w: &Tensor<impl Scalar>, b: &Tensor<impl Scalar>) -> Result<(usize, usize, usize, usize, usize)> {
    let (n, c, h, wd) = dims4(x.shape()).ok_or_else(|| shape_err!("conv2d input must be NCHW, got {:?}", x.shape()))?;
    let (k, wc, kh, kw) = dims4(w.shape()).ok_or_else(|| shape_err!("conv2d weight must be KC33, got {:?}", w.shape()))?;
    if kh != KS || kw != KS {
        return Err(shape_err!("conv2d kernel must be 3x3, got {}x{}", kh, kw));
    }
    if wc != c {
        return Err(shape_err!("conv2d channel mismatch: input {} vs weight {}", c, wc));
    }
    if b.shape() != [k] {
        return Err(shape_err!("conv2d bias must be [{}], got {:?}", k, b.shape()));
    }
    Ok((n, c, h, wd, k))
}

fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..KS {
            for kx in 0..KS {
                let row = &mut cols[((ci * KS + ky) * KS + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let out = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for (xo, o) in out.iter_mut().enumerate() {
                        let sx = xo as isize + kx as isize - 1;
                        *o = if sx < 0 || sx >= w as isize { T::zero() } else { src[sx as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..KS {
            for kx in 0..KS {
                let row = &cols[((ci * KS + ky) * KS + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    for xo in 0..w {
                        let sx = xo as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] += row[y * w + xo];
                        }
                    }
                }
            }
        }
    }
}

pub fn forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, wd, k) = check(x, w, b)?;
    let hw = h * wd;
    let ck = c * KS * KS;
    let xs = x.data();
    let ws = w.data();
    let bs = b.data();
    let mut out = vec![T::zero(); n * k * hw];
    out.par_chunks_mut(k * hw).enumerate().for_each(|(ni, o)| {
        let mut cols = vec![T::zero(); ck * hw];
        im2col(&xs[ni * c * hw..(ni + 1) * c * hw], c, h, wd, &mut cols);
        for (ki, row) in o.chunks_mut(hw).enumerate() {
            row.fill(bs[ki]);
        }
        T::gemm(k, ck, hw, T::one(), ws, (ck as isize, 1), &cols, (hw as isize, 1), T::one(), o, (hw as isize, 1));
    });
    Tensor::new(&[n, k, h, wd], out)
}

pub struct ConvGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn backward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, dout: &Tensor<T>) -> Result<ConvGrads<T>> {
    let (n, c, h, wd, k) = check(x, w, b)?;
    let hw = h * wd;
    let ck = c * KS * KS;
    let xs = x.data();
    let ws = w.data();
    let ds = dout.data();
    let per_sample: Vec<(Vec<T>, Vec<T>)> = (0..n)
        .into_par_iter()
        .map(|ni| {
            let mut cols = vec![T::zero(); ck * hw];
            im2col(&xs[ni * c * hw..(ni + 1) * c * hw], c, h, wd, &mut cols);
            let d = &ds[ni * k * hw..(ni + 1) * k * hw];
            let mut dw = vec![T::zero(); k * ck];
            // dW = dout (k x hw) * cols^T (hw x ck)
            T::gemm(k, hw, ck, T::one(), d, (hw as isize, 1), &cols, (1, hw as isize), T::zero(), &mut dw, (ck as isize, 1));
            // dcols = W^T (ck x k) * dout (k x hw)
            T::gemm(ck, k, hw, T::one(), ws, (1, ck as isize), d, (hw as isize, 1), T::zero(), &mut cols, (hw as isize, 1));
            let mut dx = vec![T::zero(); c * hw];
            col2im(&cols, c, h, wd, &mut dx);
            (dx, dw)
        })
        .collect();
    let mut dx = Vec::with_capacity(n * c * hw);
    let mut dw = vec![T::zero(); k * ck];
    for (sx, sw) in per_sample {
        dx.extend_from_slice(&sx);
        for (a, b) in dw.iter_mut().zip(sw) {
            *a += b;
        }
    }
    let mut db = vec![T::zero(); k];
    for ni in 0..n {
        for (ki, acc) in db.iter_mut().enumerate() {
            *acc += ds[(ni * k + ki) * hw..(ni * k + ki + 1) * hw].iter().copied().sum::<T>();
        }
    }
    Ok(ConvGrads {
        dx: Tensor::new(x.shape(), dx)?,
        dw: Tensor::new(w.shape(), dw)?,
        db: Tensor::new(&[k], db)?,
    })
}
