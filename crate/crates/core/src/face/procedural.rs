//! Procedurally generated stand-in for a full 3DMM basis.
//!
//! The mean face is the front half of an ellipsoid with nose, brow, eye
//! socket and lip relief, sampled on a regular grid (about 2000 vertices).
//! Identity bases are smooth, left-right symmetric displacement fields;
//! expression bases are localized deformations around mouth, brows and
//! cheeks. Everything is deterministic.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FaceBasis, Vertex};
use crate::scalar::{lit, Scalar};

const GRID: usize = 52;
const HALF_HEIGHT: f64 = 1.2;
const BASIS_SEED: u64 = 0x3d_face;

fn gauss(dx: f64, dy: f64, sx: f64, sy: f64) -> f64 {
    (-(dx * dx) / (2.0 * sx * sx) - (dy * dy) / (2.0 * sy * sy)).exp()
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn mean_depth(x: f64, y: f64) -> f64 {
    let u = x;
    let v = y / HALF_HEIGHT;
    let r2 = (u * u + v * v).min(1.0);
    let mut z = 0.8 * (1.0 - r2).sqrt();
    z += 0.30 * gauss(x, y - 0.15, 0.09, 0.28); // nasal ridge
    z += 0.14 * gauss(x, y - 0.38, 0.1, 0.08); // nose tip
    for sx in [-1.0, 1.0] {
        z -= 0.12 * gauss(x - sx * 0.38, y + 0.22, 0.13, 0.09); // eye sockets
        z += 0.05 * gauss(x - sx * 0.42, y - 0.3, 0.14, 0.14); // cheekbones
    }
    z += 0.06 * gauss(0.0, y + 0.42, 1.0, 0.06) * (1.0 - smoothstep(0.55, 0.8, x.abs())); // brow
    z += 0.05 * gauss(x, y - 0.72, 0.2, 0.05); // lips
    z += 0.04 * gauss(x, y - 1.02, 0.2, 0.08); // chin
    z
}

/// Builds the default synthetic basis with `n_id` identity and `n_exp`
/// expression components (at most 5 distinct expression modes are
/// hand-designed; further ones are random localized bumps).
pub fn procedural_basis<T: Scalar>(n_id: usize, n_exp: usize) -> FaceBasis<T> {
    let mut index = vec![None; GRID * GRID];
    let mut mean64 = Vec::new();
    for j in 0..GRID {
        for i in 0..GRID {
            let u = -1.0 + 2.0 * i as f64 / (GRID - 1) as f64;
            let v = -1.0 + 2.0 * j as f64 / (GRID - 1) as f64;
            if u * u + v * v <= 1.0 {
                index[j * GRID + i] = Some(mean64.len());
                let (x, y) = (u, v * HALF_HEIGHT);
                mean64.push([x, y, mean_depth(x, y)]);
            }
        }
    }

    let mut triangles = Vec::new();
    for j in 0..GRID - 1 {
        for i in 0..GRID - 1 {
            let c = [
                index[j * GRID + i],
                index[j * GRID + i + 1],
                index[(j + 1) * GRID + i],
                index[(j + 1) * GRID + i + 1],
            ];
            if let [Some(a), Some(b), Some(cc), Some(d)] = c {
                triangles.push(orient(&mean64, [a, b, d]));
                triangles.push(orient(&mean64, [a, d, cc]));
            }
        }
    }

    let forehead = mean64
        .iter()
        .enumerate()
        .filter(|(_, v)| v[0].abs() < 0.3 && v[1] > -0.95 && v[1] < -0.58)
        .map(|(i, _)| i)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(BASIS_SEED);
    let id: Vec<Vec<[f64; 3]>> = (0..n_id).map(|k| identity_field(&mean64, k, &mut rng)).collect();
    let exp: Vec<Vec<[f64; 3]>> = (0..n_exp).map(|k| expression_field(&mean64, k, &mut rng)).collect();

    let conv = |vs: &[[f64; 3]]| -> Vec<Vertex<T>> { vs.iter().map(|v| [lit(v[0]), lit(v[1]), lit(v[2])]).collect() };
    FaceBasis::new(
        conv(&mean64),
        id.iter().map(|b| conv(b)).collect(),
        exp.iter().map(|b| conv(b)).collect(),
        triangles,
        forehead,
    )
    .expect("procedural basis is consistent")
}

/// Orders a triangle so its normal points toward +z at rest.
fn orient(v: &[[f64; 3]], t: [usize; 3]) -> [usize; 3] {
    let (a, b, c) = (v[t[0]], v[t[1]], v[t[2]]);
    let nz = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    if nz >= 0.0 {
        t
    } else {
        [t[0], t[2], t[1]]
    }
}

fn identity_field(mean: &[[f64; 3]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    match k {
        0 => mean.iter().map(|v| [0.08 * v[0], 0.0, 0.0]).collect(), // width
        1 => mean.iter().map(|v| [0.0, 0.07 * v[1], 0.0]).collect(), // length
        2 => mean.iter().map(|v| [0.0, 0.0, 0.1 * v[2]]).collect(), // depth
        3 => mean.iter().map(|v| [0.0, 0.0, 0.08 * gauss(v[0], v[1] - 0.25, 0.1, 0.25)]).collect(), // nose size
        _ => {
            let bumps: Vec<(f64, f64, f64, [f64; 3])> = (0..3)
                .map(|_| {
                    let cx = rng.random_range(0.0..0.7);
                    let cy = rng.random_range(-1.0..1.0);
                    let s = rng.random_range(0.15..0.4);
                    let d = [
                        rng.random_range(-0.03..0.03),
                        rng.random_range(-0.03..0.03),
                        rng.random_range(-0.08..0.08),
                    ];
                    (cx, cy, s, d)
                })
                .collect();
            mean.iter()
                .map(|v| {
                    let mut out = [0.0; 3];
                    for &(cx, cy, s, d) in &bumps {
                        for side in [-1.0, 1.0] {
                            let w = gauss(v[0] - side * cx, v[1] - cy, s, s);
                            out[0] += side * d[0] * w;
                            out[1] += d[1] * w;
                            out[2] += d[2] * w;
                        }
                    }
                    out
                })
                .collect()
        }
    }
}

fn expression_field(mean: &[[f64; 3]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    mean.iter()
        .map(|v| {
            let (x, y) = (v[0], v[1]);
            match k {
                // mouth open: lower face drops
                0 => [0.0, 0.12 * smoothstep(0.62, 0.85, y), -0.02 * smoothstep(0.62, 0.85, y)],
                // smile: mouth corners up and out
                1 => {
                    let w = gauss(x.abs() - 0.3, y - 0.7, 0.12, 0.1);
                    [0.05 * x.signum() * w, -0.06 * w, 0.02 * w]
                }
                // brow raise
                2 => [0.0, -0.06 * gauss(0.0, y + 0.5, 1.0, 0.15), 0.0],
                // cheek puff
                3 => [0.0, 0.0, 0.08 * gauss(x.abs() - 0.45, y - 0.45, 0.15, 0.15)],
                // jaw shift
                4 => [0.08 * smoothstep(0.5, 0.9, y), 0.0, 0.0],
                _ => {
                    let (cx, cy) = (rng.random_range(-0.6..0.6), rng.random_range(-0.8..1.0));
                    let w = gauss(x - cx, y - cy, 0.2, 0.2);
                    [0.0, 0.0, 0.05 * w]
                }
            }
        })
        .collect()
}
