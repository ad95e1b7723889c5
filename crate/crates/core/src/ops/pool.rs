//! 2x2 max pooling with stride 2.

use super::dims4;
use crate::error::{shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Returns the pooled tensor and, per output element, the flat input index of
/// the selected maximum. Ties resolve to the first element in row-major
/// window order.
pub fn forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = dims4(x.shape()).ok_or_else(|| shape_err!("max_pool2 input must be NCHW, got {:?}", x.shape()))?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err!("max_pool2 needs even spatial dims, got {}x{}", h, w));
    }
    let (oh, ow) = (h / 2, w / 2);
    let xs = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if xs[idx] > xs[best] {
                        best = idx;
                    }
                }
                out.push(xs[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(&[n, c, oh, ow], out)?, arg))
}

pub fn backward<T: Scalar>(input_shape: &[usize], argmax: &[usize], dout: &Tensor<T>) -> Result<Tensor<T>> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(dout.data()) {
        d[i] += g;
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn picks_window_max() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn constant_input_routes_gradient_to_first_element() {
        let x = Tensor::<f64>::full(&[1, 1, 4, 4], 2.0);
        let (y, arg) = forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 2.0));
        let dx = backward(x.shape(), &arg, &Tensor::full(&[1, 1, 2, 2], 1.0)).unwrap();
        let expect = [
            1.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 0.0, //
            1.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(dx.data(), &expect);
    }

    #[test]
    fn matches_window_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..64).map(|_| rng.random()).collect();
        let x = Tensor::new(&[1, 1, 8, 8], data.clone()).unwrap();
        let (y, _) = forward(&x).unwrap();
        for oy in 0..4 {
            for ox in 0..4 {
                let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|(dy, dx)| data[(2 * oy + dy) * 8 + 2 * ox + dx])
                    .fold(f64::MIN, f64::max);
                assert_eq!(y.data()[oy * 4 + ox], m);
            }
        }
    }

    #[test]
    fn odd_dims_rejected() {
        assert!(forward(&Tensor::<f64>::zeros(&[1, 1, 3, 4])).is_err());
    }
}
