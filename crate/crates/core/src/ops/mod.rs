//! Forward and backward kernels on plain tensors.
//!
//! These are graph-agnostic; [`crate::graph::Graph`] wires them into the tape.

pub mod batch_norm;
pub mod conv;
pub mod dft;
pub mod linear;
pub mod pool;
pub mod resize;

pub(crate) fn dims4(shape: &[usize]) -> Option<(usize, usize, usize, usize)> {
    match *shape {
        [n, c, h, w] => Some((n, c, h, w)),
        _ => None,
    }
}
