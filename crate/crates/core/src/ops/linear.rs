//! Fully-connected layer `y = x W^T + b`.

use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn dims<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<(usize, usize, usize)> {
    let (n, d_in) = match *x.shape() {
        [n, d] => (n, d),
        _ => return Err(shape_err!("linear input must be [N, in], got {:?}", x.shape())),
    };
    let d_out = match *w.shape() {
        [o, i] if i == d_in => o,
        _ => return Err(shape_err!("linear weight {:?} incompatible with input width {}", w.shape(), d_in)),
    };
    if let Some(b) = b {
        if b.shape() != [d_out] {
            return Err(shape_err!("linear bias must be [{}], got {:?}", d_out, b.shape()));
        }
    }
    Ok((n, d_in, d_out))
}

pub fn forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (n, d_in, d_out) = dims(x, w, b)?;
    let mut out = vec![T::zero(); n * d_out];
    if let Some(b) = b {
        for row in out.chunks_mut(d_out) {
            row.copy_from_slice(b.data());
        }
    }
    T::gemm(n, d_in, d_out, T::one(), x.data(), (d_in as isize, 1), w.data(), (1, d_in as isize), T::one(), &mut out, (d_out as isize, 1));
    Tensor::new(&[n, d_out], out)
}

pub struct LinearGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Option<Tensor<T>>,
}

pub fn backward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, has_bias: bool, dout: &Tensor<T>) -> Result<LinearGrads<T>> {
    let (n, d_in, d_out) = dims(x, w, None)?;
    let mut dx = vec![T::zero(); n * d_in];
    // dx = dout (n x out) * W (out x in)
    T::gemm(n, d_out, d_in, T::one(), dout.data(), (d_out as isize, 1), w.data(), (d_in as isize, 1), T::zero(), &mut dx, (d_in as isize, 1));
    let mut dw = vec![T::zero(); d_out * d_in];
    // dW = dout^T (out x n) * x (n x in)
    T::gemm(d_out, n, d_in, T::one(), dout.data(), (1, d_out as isize), x.data(), (d_in as isize, 1), T::zero(), &mut dw, (d_in as isize, 1));
    let db = if has_bias {
        let mut db = vec![T::zero(); d_out];
        for row in dout.data().chunks(d_out) {
            for (a, &g) in db.iter_mut().zip(row) {
                *a += g;
            }
        }
        Some(Tensor::new(&[d_out], db)?)
    } else {
        None
    };
    Ok(LinearGrads {
        dx: Tensor::new(&[n, d_in], dx)?,
        dw: Tensor::new(&[d_out, d_in], dw)?,
        db,
    })
}
