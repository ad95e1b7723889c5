//! Scalar abstraction shared by every numeric module.
//!
//! All math in the crate is written against [`Scalar`], which is implemented
//! for `f32` and `f64`. The dense kernels that dominate runtime (GEMM and the
//! FFT) are dispatched through the trait so each precision gets its native
//! backend.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use rustfft::FftNum;

/// Element type code used by the named-tensor container.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F64 = 0,
    F32 = 1,
    I64 = 2,
}

impl DType {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F64),
            1 => Some(DType::F32),
            2 => Some(DType::I64),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn size(self) -> usize {
        match self {
            DType::F64 | DType::I64 => 8,
            DType::F32 => 4,
        }
    }
}

/// Floating-point scalar usable throughout the crate.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + FftNum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    const DTYPE: DType;

    /// `c = alpha * a * b + beta * c` on strided row/column-major views.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`; strides are given in
    /// elements as (row stride, column stride).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty, $dtype:expr, $gemm:path) => {
        impl Scalar for $t {
            const DTYPE: DType = $dtype;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                check_extent(a.len(), m, k, a_strides);
                check_extent(b.len(), k, n, b_strides);
                check_extent(c.len(), m, n, c_strides);
                // SAFETY: extents were checked above against the slice lengths,
                // and `c` is uniquely borrowed.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    );
                }
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                let mut buf = [0u8; std::mem::size_of::<$t>()];
                buf.copy_from_slice(&bytes[..std::mem::size_of::<$t>()]);
                <$t>::from_le_bytes(buf)
            }
        }
    };
}

impl_scalar!(f64, DType::F64, matrixmultiply::dgemm);
impl_scalar!(f32, DType::F32, matrixmultiply::sgemm);

fn check_extent(len: usize, rows: usize, cols: usize, strides: (isize, isize)) {
    if rows == 0 || cols == 0 {
        return;
    }
    assert!(strides.0 >= 0 && strides.1 >= 0, "negative strides unsupported");
    let last = (rows - 1) * strides.0 as usize + (cols - 1) * strides.1 as usize;
    assert!(last < len, "gemm operand out of bounds");
}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("literal representable in scalar type")
}

/// Converts a count into `T`.
#[inline]
pub fn from_usize<T: Scalar>(n: usize) -> T {
    T::from_usize(n).expect("count representable in scalar type")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_product() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = [0.0f64; 4];
        f64::gemm(2, 3, 2, 1.0, &a, (3, 1), &b, (2, 1), 0.0, &mut c, (2, 1));
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);

        // transposed view of `a` (3x2 stored row-major) via strides
        let at = [1.0f32, 4.0, 2.0, 5.0, 3.0, 6.0];
        let bf = [7.0f32, 8.0, 9.0, 10.0, 11.0, 12.0];
        let mut cf = [0.0f32; 4];
        f32::gemm(2, 3, 2, 1.0, &at, (1, 2), &bf, (2, 1), 0.0, &mut cf, (2, 1));
        assert_eq!(cf, [58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn le_roundtrip() {
        let mut buf = Vec::new();
        1.25f64.write_le(&mut buf);
        (-3.5f32).write_le(&mut buf);
        assert_eq!(f64::read_le(&buf[..8]), 1.25);
        assert_eq!(f32::read_le(&buf[8..]), -3.5);
    }
}
