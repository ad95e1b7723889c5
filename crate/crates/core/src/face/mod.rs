//! Linear 3D morphable face model and pseudo-depth rendering.
//!
//! Image coordinates follow the usual raster convention: `x` to the right,
//! `y` down, and `+z` toward the camera. Projection is scaled orthographic,
//! so a posed vertex's `(x, y)` is directly its pixel position.

pub mod procedural;
pub mod raster;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::io::container::Container;
use crate::scalar::{from_usize, lit, Scalar};
use crate::tensor::Tensor;

pub use procedural::procedural_basis;

/// Side length of the ground-truth depth map.
pub const DEPTH_MAP_SIZE: usize = 32;

pub type Vertex<T> = [T; 3];

/// `S_0` plus identity and expression displacement bases, each `3 x Q`.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceBasis<T> {
    mean: Vec<Vertex<T>>,
    id_bases: Vec<Vec<Vertex<T>>>,
    exp_bases: Vec<Vec<Vertex<T>>>,
    /// Mesh connectivity, when known. Only needed for image rendering.
    triangles: Vec<[usize; 3]>,
    /// Vertex subset used as the rPPG tracking patch.
    forehead: Vec<usize>,
}

impl<T: Scalar> FaceBasis<T> {
    pub fn new(
        mean: Vec<Vertex<T>>,
        id_bases: Vec<Vec<Vertex<T>>>,
        exp_bases: Vec<Vec<Vertex<T>>>,
        triangles: Vec<[usize; 3]>,
        forehead: Vec<usize>,
    ) -> Result<Self> {
        let q = mean.len();
        if q == 0 {
            return Err(shape_err!("face basis has no vertices"));
        }
        if id_bases.is_empty() || exp_bases.is_empty() {
            return Err(shape_err!("face basis needs at least one identity and one expression basis"));
        }
        if id_bases.iter().chain(&exp_bases).any(|b| b.len() != q) {
            return Err(shape_err!("all bases must have {q} vertices"));
        }
        if triangles.iter().flatten().chain(&forehead).any(|&i| i >= q) {
            return Err(shape_err!("vertex index out of range {q}"));
        }
        Ok(Self { mean, id_bases, exp_bases, triangles, forehead })
    }

    pub fn vertex_count(&self) -> usize {
        self.mean.len()
    }

    pub fn id_count(&self) -> usize {
        self.id_bases.len()
    }

    pub fn exp_count(&self) -> usize {
        self.exp_bases.len()
    }

    pub fn mean_shape(&self) -> &[Vertex<T>] {
        &self.mean
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn forehead(&self) -> &[usize] {
        &self.forehead
    }

    pub fn set_forehead(&mut self, forehead: Vec<usize>) -> Result<()> {
        if forehead.iter().any(|&i| i >= self.mean.len()) {
            return Err(shape_err!("forehead index out of range"));
        }
        self.forehead = forehead;
        Ok(())
    }

    /// Zero parameters of the right lengths.
    pub fn neutral_params(&self) -> ShapeParams<T> {
        ShapeParams {
            alpha_id: vec![T::zero(); self.id_count()],
            alpha_exp: vec![T::zero(); self.exp_count()],
        }
    }

    /// Pose that places the frontal mean shape centred in a `width x height`
    /// image, filling most of it.
    pub fn canonical_pose(&self, width: usize, height: usize) -> Pose<T> {
        let (mut lo, mut hi) = ([T::infinity(); 2], [T::neg_infinity(); 2]);
        for v in &self.mean {
            for a in 0..2 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        let (w, h) = (from_usize::<T>(width), from_usize::<T>(height));
        let extent_x = (hi[0] - lo[0]).max(lit(1e-12));
        let extent_y = (hi[1] - lo[1]).max(lit(1e-12));
        let s = (lit::<T>(0.9) * w / extent_x).min(lit::<T>(0.9) * h / extent_y);
        let two = lit::<T>(2.0);
        let cx = (lo[0] + hi[0]) / two;
        let cy = (lo[1] + hi[1]) / two;
        Pose {
            scale: s,
            rotation: identity(),
            translation: [w / two - s * cx, h / two - s * cy, T::zero()],
        }
    }

    /// Reads a basis stored as `mean`, `id_000`.., `exp_000`.. entries of
    /// shape `[3, Q]`, plus optional `triangles` (`[F, 3]` i64) and
    /// `forehead` (`[K]` i64).
    pub fn from_container(c: &Container) -> Result<Self> {
        let read = |name: &str| -> Result<Vec<Vertex<T>>> {
            let t = c.tensor::<T>(name)?;
            match *t.shape() {
                [3, q] => Ok((0..q).map(|i| [t.data()[i], t.data()[q + i], t.data()[2 * q + i]]).collect()),
                _ => Err(shape_err!("basis entry '{name}' must be [3, Q], got {:?}", t.shape())),
            }
        };
        let mean = read("mean")?;
        let collect = |prefix: &str| -> Result<Vec<Vec<Vertex<T>>>> {
            (0..)
                .map(|i| format!("{prefix}_{i:03}"))
                .take_while(|n| c.contains(n))
                .map(|n| read(&n))
                .collect()
        };
        let id = collect("id")?;
        let exp = collect("exp")?;
        let indices = |name: &str| -> Result<Vec<usize>> {
            if !c.contains(name) {
                return Ok(Vec::new());
            }
            let (_, v) = c.i64s(name)?;
            v.iter()
                .map(|&i| usize::try_from(i).map_err(|_| Error::Format(format!("negative index in '{name}'"))))
                .collect()
        };
        let tri_flat = indices("triangles")?;
        if tri_flat.len() % 3 != 0 {
            return Err(Error::Format("triangles entry length not a multiple of 3".into()));
        }
        let triangles = tri_flat.chunks(3).map(|t| [t[0], t[1], t[2]]).collect();
        Self::new(mean, id, exp, triangles, indices("forehead")?)
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        let write = |c: &mut Container, name: &str, verts: &[Vertex<T>]| -> Result<()> {
            let q = verts.len();
            let mut data = vec![T::zero(); 3 * q];
            for (i, v) in verts.iter().enumerate() {
                for a in 0..3 {
                    data[a * q + i] = v[a];
                }
            }
            c.insert_tensor(name, &Tensor::new(&[3, q], data)?)
        };
        write(&mut c, "mean", &self.mean)?;
        for (i, b) in self.id_bases.iter().enumerate() {
            write(&mut c, &format!("id_{i:03}"), b)?;
        }
        for (i, b) in self.exp_bases.iter().enumerate() {
            write(&mut c, &format!("exp_{i:03}"), b)?;
        }
        if !self.triangles.is_empty() {
            let flat = self.triangles.iter().flatten().map(|&i| i as i64).collect();
            c.insert_i64("triangles", &[self.triangles.len(), 3], flat)?;
        }
        if !self.forehead.is_empty() {
            let v = self.forehead.iter().map(|&i| i as i64).collect();
            c.insert_i64("forehead", &[self.forehead.len()], v)?;
        }
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams<T> {
    pub alpha_id: Vec<T>,
    pub alpha_exp: Vec<T>,
}

/// Similarity transform `S = s R S_F + t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose<T> {
    pub scale: T,
    pub rotation: [[T; 3]; 3],
    pub translation: [T; 3],
}

pub fn identity<T: Scalar>() -> [[T; 3]; 3] {
    let (o, z) = (T::one(), T::zero());
    [[o, z, z], [z, o, z], [z, z, o]]
}

pub fn mat_mul<T: Scalar>(a: &[[T; 3]; 3], b: &[[T; 3]; 3]) -> [[T; 3]; 3] {
    let mut r = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    r
}

fn mat_vec<T: Scalar>(m: &[[T; 3]; 3], v: &Vertex<T>) -> Vertex<T> {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

impl<T: Scalar> Pose<T> {
    pub fn new(scale: T, rotation: [[T; 3]; 3], translation: [T; 3]) -> Result<Self> {
        let p = Self { scale, rotation, translation };
        p.validate()?;
        Ok(p)
    }

    /// Rotation about the z axis (in-plane), by `angle` radians.
    pub fn rot_z(angle: T) -> [[T; 3]; 3] {
        let (s, c) = angle.sin_cos();
        let (o, z) = (T::one(), T::zero());
        [[c, -s, z], [s, c, z], [z, z, o]]
    }

    /// `R = Rz(roll) * Rx(pitch) * Ry(yaw)`, angles in radians.
    pub fn rotation_from_euler(yaw: T, pitch: T, roll: T) -> [[T; 3]; 3] {
        let (o, z) = (T::one(), T::zero());
        let (sy, cy) = yaw.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let ry = [[cy, z, sy], [z, o, z], [-sy, z, cy]];
        let rx = [[o, z, z], [z, cp, -sp], [z, sp, cp]];
        mat_mul(&Self::rot_z(roll), &mat_mul(&rx, &ry))
    }

    pub fn validate(&self) -> Result<()> {
        let tol = lit::<T>(1e-9).max(T::epsilon() * lit(100.0));
        if !(self.scale > T::zero()) || !self.scale.is_finite() {
            return Err(Error::Pose(format!("scale must be positive, got {}", self.scale)));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: T = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                let want = if i == j { T::one() } else { T::zero() };
                if (dot - want).abs() > tol {
                    return Err(Error::Pose("rotation is not orthonormal".into()));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - T::one()).abs() > tol {
            return Err(Error::Pose(format!("rotation determinant {det} != 1")));
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Pose("translation must be finite".into()));
        }
        Ok(())
    }

    /// Applies a further image-plane similarity (scale `k`, rotation `angle`
    /// about the image origin, then shift `(dx, dy)`) on top of this pose.
    pub fn then_similarity(&self, k: T, angle: T, dx: T, dy: T) -> Self {
        let rz = Self::rot_z(angle);
        let t = mat_vec(&rz, &self.translation);
        Self {
            scale: self.scale * k,
            rotation: mat_mul(&rz, &self.rotation),
            translation: [k * t[0] + dx, k * t[1] + dy, k * t[2]],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrontalShape<T> {
    pub vertices: Vec<Vertex<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosedShape<T> {
    pub vertices: Vec<Vertex<T>>,
}

/// `S_F = S_0 + sum alpha_id^i S_id^i + sum alpha_exp^i S_exp^i`.
pub fn synthesize_shape<T: Scalar>(basis: &FaceBasis<T>, params: &ShapeParams<T>) -> Result<FrontalShape<T>> {
    if params.alpha_id.len() != basis.id_count() || params.alpha_exp.len() != basis.exp_count() {
        return Err(shape_err!(
            "shape params ({}, {}) do not match basis ({}, {})",
            params.alpha_id.len(),
            params.alpha_exp.len(),
            basis.id_count(),
            basis.exp_count()
        ));
    }
    let mut vertices = basis.mean.clone();
    let terms = basis
        .id_bases
        .iter()
        .zip(&params.alpha_id)
        .chain(basis.exp_bases.iter().zip(&params.alpha_exp));
    for (b, &a) in terms {
        if a == T::zero() {
            continue;
        }
        for (v, d) in vertices.iter_mut().zip(b) {
            for k in 0..3 {
                v[k] += a * d[k];
            }
        }
    }
    Ok(FrontalShape { vertices })
}

/// `S = s R S_F + t`.
pub fn pose_transform<T: Scalar>(shape: &FrontalShape<T>, pose: &Pose<T>) -> Result<PosedShape<T>> {
    pose.validate()?;
    let vertices = shape
        .vertices
        .iter()
        .map(|v| {
            let r = mat_vec(&pose.rotation, v);
            [
                pose.scale * r[0] + pose.translation[0],
                pose.scale * r[1] + pose.translation[1],
                pose.scale * r[2] + pose.translation[2],
            ]
        })
        .collect();
    Ok(PosedShape { vertices })
}

/// Affinely maps z into `[0, 1]`: the vertex nearest the camera (largest
/// raw z) gets 1, the furthest gets 0.
pub fn normalize_depth<T: Scalar>(shape: &PosedShape<T>) -> Result<PosedShape<T>> {
    let (lo, hi) = shape
        .vertices
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), v| (lo.min(v[2]), hi.max(v[2])));
    if !(hi > lo) {
        return Err(Error::Degenerate("all vertices share one depth value".into()));
    }
    let range = hi - lo;
    let vertices = shape
        .vertices
        .iter()
        .map(|v| [v[0], v[1], ((v[2] - lo) / range).max(T::zero()).min(T::one())])
        .collect();
    Ok(PosedShape { vertices })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap<T> {
    size: usize,
    values: Vec<T>,
}

impl<T: Scalar> DepthMap<T> {
    pub fn zeros(size: usize) -> Self {
        Self { size, values: vec![T::zero(); size * size] }
    }

    pub fn from_values(size: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != size * size {
            return Err(shape_err!("depth map needs {} values, got {}", size * size, values.len()));
        }
        if values.iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
            return Err(shape_err!("depth values must lie in [0, 1]"));
        }
        Ok(Self { size, values })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.size + col]
    }

    pub fn is_empty(&self) -> bool {
        self.values.iter().all(|v| *v == T::zero())
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::zero(), T::max)
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(&[self.size, self.size], self.values.clone()).expect("square map")
    }
}

/// Grid cell containing image point `(x, y)` for a `size`-square grid laid
/// over a `width x height` image, or `None` outside.
pub fn grid_cell<T: Scalar>(x: T, y: T, size: usize, width: usize, height: usize) -> Option<(usize, usize)> {
    let gx = (x * from_usize(size) / from_usize(width)).floor();
    let gy = (y * from_usize(size) / from_usize(height)).floor();
    if !(gx >= T::zero() && gy >= T::zero()) {
        return None;
    }
    let (cx, cy) = (gx.to_usize()?, gy.to_usize()?);
    (cx < size && cy < size).then_some((cy, cx))
}

/// Z-buffer projection of per-vertex normalized depth onto a `size x size`
/// grid. The nearest vertex (largest z) wins each cell; empty cells are 0.
pub fn render_depth<T: Scalar>(shape: &PosedShape<T>, size: usize, width: usize, height: usize) -> DepthMap<T> {
    let mut map = DepthMap::zeros(size);
    let mut hit = false;
    for v in &shape.vertices {
        if let Some((r, c)) = grid_cell(v[0], v[1], size, width, height) {
            let z = v[2].max(T::zero()).min(T::one());
            let cell = &mut map.values[r * size + c];
            if z > *cell {
                *cell = z;
            }
            hit = true;
        }
    }
    if !hit {
        log::warn!("render_depth: no vertex projects inside the {width}x{height} image");
    }
    map
}

/// Full ground-truth pipeline: synthesize, pose, normalize, Z-buffer.
pub fn depth_ground_truth<T: Scalar>(
    basis: &FaceBasis<T>,
    params: &ShapeParams<T>,
    pose: &Pose<T>,
    width: usize,
    height: usize,
) -> Result<DepthMap<T>> {
    let posed = pose_transform(&synthesize_shape(basis, params)?, pose)?;
    Ok(render_depth(&normalize_depth(&posed)?, DEPTH_MAP_SIZE, width, height))
}

/// Per-cell index of the frontal vertex used by the registration layer.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexIndexMap {
    size: usize,
    entries: Vec<Option<usize>>,
}

impl VertexIndexMap {
    /// Nearest-to-camera vertex per cell of `shape` projected on a
    /// `size`-square grid over a `width x height` image.
    pub fn from_posed<T: Scalar>(shape: &PosedShape<T>, size: usize, width: usize, height: usize) -> Self {
        let mut entries: Vec<Option<usize>> = vec![None; size * size];
        let mut best = vec![T::neg_infinity(); size * size];
        for (i, v) in shape.vertices.iter().enumerate() {
            if let Some((r, c)) = grid_cell(v[0], v[1], size, width, height) {
                if v[2] > best[r * size + c] {
                    best[r * size + c] = v[2];
                    entries[r * size + c] = Some(i);
                }
            }
        }
        Self { size, entries }
    }

    /// Map for the basis mean shape at its canonical pose on a `size` grid.
    pub fn from_basis<T: Scalar>(basis: &FaceBasis<T>, size: usize) -> Self {
        let pose = basis.canonical_pose(size, size);
        let frontal = FrontalShape { vertices: basis.mean.clone() };
        let posed = pose_transform(&frontal, &pose).expect("canonical pose is valid");
        Self::from_posed(&posed, size, size, size)
    }

    pub fn from_entries(size: usize, entries: Vec<Option<usize>>) -> Result<Self> {
        if entries.len() != size * size {
            return Err(shape_err!("index map needs {} entries", size * size));
        }
        Ok(Self { size, entries })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn entries(&self) -> &[Option<usize>] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> Option<usize> {
        self.entries[row * self.size + col]
    }

    /// Number of face cells `K`.
    pub fn face_cells(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }
}
