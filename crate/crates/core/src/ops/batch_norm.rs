//! Per-channel batch normalization over NCHW tensors.

use super::dims4;
use crate::error::{shape_err, Error, Result};
use crate::scalar::{from_usize, lit, Scalar};
use crate::tensor::Tensor;

pub const EPS: f64 = 1e-5;
pub const MOMENTUM: f64 = 0.9;

/// Saved activations for the backward pass of a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    /// Biased (population) batch variance per channel.
    pub var: Vec<T>,
}

fn check<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let (n, c, h, w) = dims4(x.shape()).ok_or_else(|| shape_err!("batch_norm input must be NCHW, got {:?}", x.shape()))?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(shape_err!("batch_norm affine params must be [{}]", c));
    }
    Ok((n, c, h * w))
}

pub fn forward_train<T: Scalar>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<(Tensor<T>, BnCache<T>)> {
    let (n, c, hw) = check(x, gamma, beta)?;
    if n < 2 {
        return Err(Error::Contract("batch_norm in training mode needs batch size >= 2".into()));
    }
    let m = from_usize::<T>(n * hw);
    let xs = x.data();
    let eps = lit::<T>(EPS);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ci in 0..c {
        let mut s = T::zero();
        for ni in 0..n {
            s += xs[(ni * c + ci) * hw..(ni * c + ci + 1) * hw].iter().copied().sum::<T>();
        }
        let mu = s / m;
        let mut v = T::zero();
        for ni in 0..n {
            for &val in &xs[(ni * c + ci) * hw..(ni * c + ci + 1) * hw] {
                v += (val - mu) * (val - mu);
            }
        }
        mean[ci] = mu;
        var[ci] = v / m;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); xs.len()];
    let mut out = vec![T::zero(); xs.len()];
    let (g, b) = (gamma.data(), beta.data());
    for ni in 0..n {
        for ci in 0..c {
            let off = (ni * c + ci) * hw;
            for i in off..off + hw {
                let xh = (xs[i] - mean[ci]) * inv_std[ci];
                xhat[i] = xh;
                out[i] = g[ci] * xh + b[ci];
            }
        }
    }
    Ok((Tensor::new(x.shape(), out)?, BnCache { xhat, inv_std, mean, var }))
}

pub struct BnGrads<T> {
    pub dx: Tensor<T>,
    pub dgamma: Tensor<T>,
    pub dbeta: Tensor<T>,
}

pub fn backward_train<T: Scalar>(shape: &[usize], gamma: &Tensor<T>, cache: &BnCache<T>, dout: &Tensor<T>) -> Result<BnGrads<T>> {
    let (n, c, h, w) = dims4(shape).ok_or_else(|| shape_err!("batch_norm grad must be NCHW"))?;
    let hw = h * w;
    let m = from_usize::<T>(n * hw);
    let ds = dout.data();
    let g = gamma.data();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ni in 0..n {
        for ci in 0..c {
            let off = (ni * c + ci) * hw;
            for i in off..off + hw {
                dbeta[ci] += ds[i];
                dgamma[ci] += ds[i] * cache.xhat[i];
            }
        }
    }
    let mut dx = vec![T::zero(); ds.len()];
    for ni in 0..n {
        for ci in 0..c {
            let off = (ni * c + ci) * hw;
            let k = g[ci] * cache.inv_std[ci] / m;
            for i in off..off + hw {
                dx[i] = k * (m * ds[i] - dbeta[ci] - cache.xhat[i] * dgamma[ci]);
            }
        }
    }
    Ok(BnGrads {
        dx: Tensor::new(shape, dx)?,
        dgamma: Tensor::new(&[c], dgamma)?,
        dbeta: Tensor::new(&[c], dbeta)?,
    })
}

/// Folds running statistics into a per-channel affine map `y = scale * x + shift`.
pub fn eval_affine<T: Scalar>(gamma: &[T], beta: &[T], running_mean: &[T], running_var: &[T]) -> (Vec<T>, Vec<T>) {
    let eps = lit::<T>(EPS);
    let scale: Vec<T> = gamma
        .iter()
        .zip(running_var)
        .map(|(&g, &v)| g / (v + eps).sqrt())
        .collect();
    let shift = beta
        .iter()
        .zip(running_mean)
        .zip(&scale)
        .map(|((&b, &mu), &s)| b - s * mu)
        .collect();
    (scale, shift)
}

/// Exponential moving update of running statistics. Running variance uses the
/// unbiased batch estimate.
pub fn update_running<T: Scalar>(running_mean: &mut [T], running_var: &mut [T], cache: &BnCache<T>, count: usize) {
    let mom = lit::<T>(MOMENTUM);
    let unbias = if count > 1 {
        from_usize::<T>(count) / from_usize::<T>(count - 1)
    } else {
        T::one()
    };
    for ci in 0..running_mean.len() {
        running_mean[ci] = mom * running_mean[ci] + (T::one() - mom) * cache.mean[ci];
        running_var[ci] = mom * running_var[ci] + (T::one() - mom) * cache.var[ci] * unbias;
    }
}
