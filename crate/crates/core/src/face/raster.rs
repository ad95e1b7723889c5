//! Triangle rasterization with a Z-buffer, used to draw synthetic faces.

use super::PosedShape;
use crate::scalar::Scalar;

/// Per-pixel output of [`rasterize`]: the covering triangle and the
/// interpolated depth, for the front-most surface.
#[derive(Clone, Debug)]
pub struct Fragments {
    pub width: usize,
    pub height: usize,
    pub triangle: Vec<Option<usize>>,
    pub depth: Vec<f64>,
    /// Barycentric weights of the covering triangle's vertices.
    pub bary: Vec<[f64; 3]>,
}

/// Rasterizes front-facing triangles (positive signed area in image
/// coordinates), sampling at pixel centres. Larger z wins.
pub fn rasterize<T: Scalar>(shape: &PosedShape<T>, triangles: &[[usize; 3]], width: usize, height: usize) -> Fragments {
    let n = width * height;
    let mut f = Fragments {
        width,
        height,
        triangle: vec![None; n],
        depth: vec![f64::NEG_INFINITY; n],
        bary: vec![[0.0; 3]; n],
    };
    let p: Vec<[f64; 3]> = shape
        .vertices
        .iter()
        .map(|v| [v[0].to_f64().unwrap_or(0.0), v[1].to_f64().unwrap_or(0.0), v[2].to_f64().unwrap_or(0.0)])
        .collect();
    for (ti, t) in triangles.iter().enumerate() {
        let (a, b, c) = (p[t[0]], p[t[1]], p[t[2]]);
        let area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        if area <= 1e-12 {
            continue;
        }
        let x0 = a[0].min(b[0]).min(c[0]).floor().max(0.0) as usize;
        let y0 = a[1].min(b[1]).min(c[1]).floor().max(0.0) as usize;
        let x1 = (a[0].max(b[0]).max(c[0]).ceil().max(0.0) as usize).min(width);
        let y1 = (a[1].max(b[1]).max(c[1]).ceil().max(0.0) as usize).min(height);
        for y in y0..y1 {
            for x in x0..x1 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let w0 = ((b[0] - px) * (c[1] - py) - (b[1] - py) * (c[0] - px)) / area;
                let w1 = ((c[0] - px) * (a[1] - py) - (c[1] - py) * (a[0] - px)) / area;
                let w2 = 1.0 - w0 - w1;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let z = w0 * a[2] + w1 * b[2] + w2 * c[2];
                let idx = y * width + x;
                if z > f.depth[idx] {
                    f.depth[idx] = z;
                    f.triangle[idx] = Some(ti);
                    f.bary[idx] = [w0, w1, w2];
                }
            }
        }
    }
    f
}
