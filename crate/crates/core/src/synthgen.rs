//! Deterministic synthetic live and spoof clips with exact ground truth.
//!
//! Live clips render a moving, posed face whose skin carries a pulse with
//! a blood-like colour signature. Print spoofs show the subject's flat-lit
//! texture on a hand-held sheet (no pulse, paper grain, printer colour
//! response). Replay spoofs show a re-recorded live video on a screen
//! (damped pulse, moiré, display tint). Spoof ground truth is zero depth
//! and a zero spectrum.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clip::{FrameGeometry, Frames, Label, VideoClip};
use crate::error::{Error, Result};
use crate::face::procedural::procedural_basis;
use crate::face::raster::rasterize;
use crate::face::{depth_ground_truth, DepthMap, FaceBasis, PosedShape, Pose, ShapeParams, DEPTH_MAP_SIZE};
use crate::rppg::{self, RppgSpectrum};

pub const IDENTITY_COMPONENTS: usize = 10;
pub const EXPRESSION_COMPONENTS: usize = 5;
pub const HEART_RATE_RANGE: (f64, f64) = (0.8, 3.0);

/// Relative per-channel strength of the pulse (green strongest).
const PULSE_SIGNATURE: [f64; 3] = [0.33 / 0.77, 1.0, 0.53 / 0.77];
/// Per-frame sensor noise.
const CAMERA_NOISE: f64 = 0.0007;
/// Face size relative to the canonical pose, leaving room for motion.
const FACE_FILL: f64 = 0.78;
const REPLAY_PULSE_FACTOR: f64 = 0.2;

const TAG_SUBJECT: u64 = 1;
const TAG_LIVE: u64 = 2;
const TAG_PRINT: u64 = 3;
const TAG_REPLAY: u64 = 4;
const TAG_TWIN: u64 = 5;

/// Basis used by the generator and by everything that consumes its clips.
pub fn default_basis() -> FaceBasis<f64> {
    procedural_basis(IDENTITY_COMPONENTS, EXPRESSION_COMPONENTS)
}

/// [`default_basis`] in another precision.
pub fn default_basis_as<T: crate::scalar::Scalar>() -> FaceBasis<T> {
    procedural_basis(IDENTITY_COMPONENTS, EXPRESSION_COMPONENTS)
}

/// SplitMix64-style combination of seed words.
fn mix(words: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &w in words {
        h ^= w.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

fn rng_for(words: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(words))
}

/// Fixed per-subject properties.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectSpec {
    pub id: usize,
    pub alpha_id: Vec<f64>,
    pub skin: [f64; 3],
    pub pulse_amplitude: f64,
    pub heart_rate_hz: f64,
    pub pulse_phase: f64,
    pub texture_seed: u64,
}

impl SubjectSpec {
    /// Subject `id` of the population defined by `seed`.
    pub fn sample(seed: u64, id: usize) -> Self {
        let mut rng = rng_for(&[seed, TAG_SUBJECT, id as u64]);
        let std = Normal::<f64>::new(0.0, 1.0).expect("unit normal");
        let alpha_id = (0..IDENTITY_COMPONENTS).map(|_| std.sample(&mut rng).clamp(-2.5, 2.5)).collect();
        let light = [0.86, 0.68, 0.58];
        let dark = [0.42, 0.28, 0.2];
        let t: f64 = rng.random();
        let mut skin = [0.0; 3];
        for c in 0..3 {
            skin[c] = (light[c] * (1.0 - t) + dark[c] * t) * (1.0 + 0.05 * (rng.random::<f64>() - 0.5));
        }
        Self {
            id,
            alpha_id,
            skin,
            pulse_amplitude: rng.random_range(0.012..0.02),
            heart_rate_hz: rng.random_range(HEART_RATE_RANGE.0..HEART_RATE_RANGE.1),
            pulse_phase: rng.random_range(0.0..std::f64::consts::TAU),
            texture_seed: rng.random(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(HEART_RATE_RANGE.0..=HEART_RATE_RANGE.1).contains(&self.heart_rate_hz) {
            return Err(Error::Dataset(format!("heart rate {} Hz outside the generator range", self.heart_rate_hz)));
        }
        if self.skin.iter().any(|&c| !(c > 0.0 && c <= 1.0)) || !(self.pulse_amplitude >= 0.0) {
            return Err(Error::Dataset("skin colour must be in (0, 1] and pulse amplitude >= 0".into()));
        }
        if self.alpha_id.len() != IDENTITY_COMPONENTS {
            return Err(Error::Dataset(format!("subject needs {IDENTITY_COMPONENTS} identity coefficients")));
        }
        Ok(())
    }

    fn pulse(&self, t: usize, fps: f64) -> f64 {
        (std::f64::consts::TAU * self.heart_rate_hz * t as f64 / fps + self.pulse_phase).sin()
    }
}

/// Sinusoidal head motion and expression changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionProfile {
    /// Yaw, pitch and roll amplitudes in radians.
    pub rotation: [f64; 3],
    /// Translation amplitude as a fraction of the image side.
    pub shift: f64,
    /// Relative scale amplitude.
    pub zoom: f64,
    /// Expression coefficient amplitude.
    pub expression: f64,
    /// Per-degree-of-freedom frequencies (Hz) and phases.
    pub freqs: Vec<f64>,
    pub phases: Vec<f64>,
}

const MOTION_DOFS: usize = 6 + EXPRESSION_COMPONENTS;

impl MotionProfile {
    pub fn still() -> Self {
        Self {
            rotation: [0.0; 3],
            shift: 0.0,
            zoom: 0.0,
            expression: 0.0,
            freqs: vec![0.0; MOTION_DOFS],
            phases: vec![0.0; MOTION_DOFS],
        }
    }

    pub fn sample(rng: &mut impl Rng) -> Self {
        Self {
            rotation: [rng.random_range(0.1..0.4), rng.random_range(0.05..0.2), rng.random_range(0.03..0.15)],
            shift: rng.random_range(0.01..0.04),
            zoom: rng.random_range(0.0..0.05),
            expression: rng.random_range(0.3..1.0),
            freqs: (0..MOTION_DOFS).map(|_| rng.random_range(0.08..0.5)).collect(),
            phases: (0..MOTION_DOFS).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect(),
        }
    }

    fn wave(&self, dof: usize, t: usize, fps: f64) -> f64 {
        (std::f64::consts::TAU * self.freqs[dof] * t as f64 / fps + self.phases[dof]).sin()
    }

    /// Shape and pose of `subject` at frame `t`.
    pub fn geometry(&self, basis: &FaceBasis<f64>, subject: &SubjectSpec, t: usize, fps: f64, size: usize) -> FrameGeometry {
        let w = |d| self.wave(d, t, fps);
        let rot = Pose::rotation_from_euler(self.rotation[0] * w(0), self.rotation[1] * w(1), self.rotation[2] * w(2));
        let side = size as f64;
        let shift = [self.shift * side * w(3), self.shift * side * w(4)];
        let zoom = 1.0 + self.zoom * w(5);
        let alpha_exp = (0..EXPRESSION_COMPONENTS)
            .map(|k| (self.expression * w(6 + k)).max(if k == 0 { 0.0 } else { f64::NEG_INFINITY }))
            .collect();
        FrameGeometry {
            params: ShapeParams { alpha_id: subject.alpha_id.clone(), alpha_exp },
            pose: face_pose(basis, size, FACE_FILL * zoom, rot, shift),
        }
    }
}

/// Pose centring the face's frontal bounding box at the image centre plus
/// `shift`, scaled by `fill` relative to the canonical pose.
fn face_pose(basis: &FaceBasis<f64>, size: usize, fill: f64, rotation: [[f64; 3]; 3], shift: [f64; 2]) -> Pose<f64> {
    let canon = basis.canonical_pose(size, size);
    let s = canon.scale * fill;
    let half = size as f64 / 2.0;
    // frontal centre c satisfies canon.scale * c + canon.translation = half
    let c = [(half - canon.translation[0]) / canon.scale, (half - canon.translation[1]) / canon.scale, 0.0];
    let rc = [
        rotation[0][0] * c[0] + rotation[0][1] * c[1],
        rotation[1][0] * c[0] + rotation[1][1] * c[1],
        rotation[2][0] * c[0] + rotation[2][1] * c[1],
    ];
    Pose {
        scale: s,
        rotation,
        translation: [half + shift[0] - s * rc[0], half + shift[1] - s * rc[1], -s * rc[2]],
    }
}

/// Image-plane similarity about the image centre applied on top of `pose`.
fn warp_pose(pose: &Pose<f64>, warp: &Similarity, size: usize) -> Pose<f64> {
    let half = size as f64 / 2.0;
    let (cos, sin) = (warp.angle.cos(), warp.angle.sin());
    // p' = k R (p - c) + c + d  =  k R p + (c - k R c + d)
    let dx = half - warp.scale * (cos * half - sin * half) + warp.dx;
    let dy = half - warp.scale * (sin * half + cos * half) + warp.dy;
    pose.then_similarity(warp.scale, warp.angle, dx, dy)
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Similarity {
    scale: f64,
    angle: f64,
    dx: f64,
    dy: f64,
}

impl Similarity {
    /// Maps output pixel `(x, y)` back into source coordinates.
    fn inverse(&self, x: f64, y: f64, half: f64) -> (f64, f64) {
        let (u, v) = (x - half - self.dx, y - half - self.dy);
        let (cos, sin) = (self.angle.cos(), self.angle.sin());
        ((cos * u + sin * v) / self.scale + half, (-sin * u + cos * v) / self.scale + half)
    }
}

/// Smooth value noise on a coarse lattice, in `[0, 1]`.
struct ValueNoise {
    cells: usize,
    values: Vec<f64>,
}

impl ValueNoise {
    fn new(cells: usize, rng: &mut impl Rng) -> Self {
        let values = (0..(cells + 1) * (cells + 1)).map(|_| rng.random()).collect();
        Self { cells, values }
    }

    /// `u`, `v` in `[0, 1]`.
    fn sample(&self, u: f64, v: f64) -> f64 {
        let n = self.cells as f64;
        let (x, y) = ((u.clamp(0.0, 1.0)) * n, (v.clamp(0.0, 1.0)) * n);
        let (x0, y0) = ((x.floor() as usize).min(self.cells - 1), (y.floor() as usize).min(self.cells - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
        let at = |i: usize, j: usize| self.values[j * (self.cells + 1) + i];
        let top = at(x0, y0) * (1.0 - sx) + at(x0 + 1, y0) * sx;
        let bot = at(x0, y0 + 1) * (1.0 - sx) + at(x0 + 1, y0 + 1) * sx;
        top * (1.0 - sy) + bot * sy
    }
}

/// Interleaved RGB image.
#[derive(Clone, Debug)]
struct Image {
    size: usize,
    data: Vec<f64>,
}

impl Image {
    fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.size + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn bilinear(&self, x: f64, y: f64) -> Option<[f64; 3]> {
        let (x, y) = (x - 0.5, y - 0.5);
        let max = (self.size - 1) as f64;
        if !(x >= 0.0 && y >= 0.0 && x <= max && y <= max) {
            return None;
        }
        let (x0, y0) = ((x.floor() as usize).min(self.size - 2), (y.floor() as usize).min(self.size - 2));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let (a, b, c, d) = (self.get(x0, y0), self.get(x0 + 1, y0), self.get(x0, y0 + 1), self.get(x0 + 1, y0 + 1));
        Some(std::array::from_fn(|k| {
            (a[k] * (1.0 - fx) + b[k] * fx) * (1.0 - fy) + (c[k] * (1.0 - fx) + d[k] * fx) * fy
        }))
    }
}

/// Static textured backdrop.
fn background(size: usize, rng: &mut impl Rng) -> Image {
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.75));
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.15..0.15));
    let noise = ValueNoise::new(rng.random_range(3..7), rng);
    let fine = ValueNoise::new(16, rng);
    let stripe_f = rng.random_range(0.0..0.15);
    let stripe_a = rng.random_range(0.0..0.08);
    let grad: f64 = rng.random_range(-0.2..0.2);
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (u, v) = ((x as f64 + 0.5) / size as f64, (y as f64 + 0.5) / size as f64);
            let n = noise.sample(u, v) - 0.5;
            let f = fine.sample(u, v) - 0.5;
            let s = stripe_a * (std::f64::consts::TAU * stripe_f * x as f64).sin();
            for c in 0..3 {
                data.push((base[c] + 0.3 * n + 0.06 * f + s + grad * (v - 0.5) + tint[c] * n).clamp(0.02, 0.98));
            }
        }
    }
    Image { size, data }
}

/// Skin albedo and pulse weight at frontal-model coordinates `(u, v)`.
struct SkinTexture {
    skin: [f64; 3],
    blotches: ValueNoise,
}

impl SkinTexture {
    fn new(subject: &SubjectSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(subject.texture_seed);
        Self { skin: subject.skin, blotches: ValueNoise::new(9, &mut rng) }
    }

    fn albedo(&self, u: f64, v: f64) -> ([f64; 3], f64) {
        let ellipse = |cx: f64, cy: f64, rx: f64, ry: f64| ((u - cx) / rx).powi(2) + ((v - cy) / ry).powi(2);
        if ellipse(0.38, -0.22, 0.12, 0.055).min(ellipse(-0.38, -0.22, 0.12, 0.055)) < 1.0 {
            return ([0.12, 0.1, 0.09], 0.0);
        }
        let b = 1.0 + 0.1 * (self.blotches.sample((u + 1.0) / 2.0, (v + 1.2) / 2.4) - 0.5);
        let mut c = self.skin.map(|s| s * b);
        let mut pulse = 1.0;
        let brow = (v + 0.44).abs() < 0.04 && (0.14..0.6).contains(&u.abs());
        if brow {
            c = c.map(|s| s * 0.45);
            pulse = 0.0;
        } else if ellipse(0.0, 0.72, 0.26, 0.07) < 1.0 {
            c = [c[0] * 1.05, c[1] * 0.72, c[2] * 0.78];
            pulse = 0.5;
        }
        (c, pulse)
    }
}

/// Lighting of a rendering.
#[derive(Clone, Copy, Debug)]
struct Light {
    dir: [f64; 3],
    ambient: f64,
}

impl Light {
    fn sample(rng: &mut impl Rng) -> Self {
        let d: [f64; 3] = [rng.random_range(-0.5..0.5), rng.random_range(-0.6..0.1), 1.0];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        Self { dir: d.map(|v| v / n), ambient: rng.random_range(0.3..0.45) }
    }
}

/// Surface the face texture is drawn on.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Surface {
    /// Per-facet Lambert shading plus depth-dependent darkening.
    Relief,
    /// A lit flat sheet: one shade for the whole face.
    Plane,
}

/// Draws `shape` over `bg` lit according to `surface`, with skin
/// modulated by `1 + amplitude * signature`.
fn render_face(
    basis: &FaceBasis<f64>,
    tex: &SkinTexture,
    shape: &PosedShape<f64>,
    light: Light,
    surface: Surface,
    pulse: f64,
    bg: &Image,
) -> Image {
    let size = bg.size;
    let frags = rasterize(shape, basis.triangles(), size, size);
    let (zmin, zmax) = shape
        .vertices
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v[2]), hi.max(v[2])));
    let zr = (zmax - zmin).max(1e-9);
    let mean = basis.mean_shape();
    let mut out = bg.clone();
    for (p, tri) in frags.triangle.iter().enumerate() {
        let Some(ti) = *tri else { continue };
        let t = basis.triangles()[ti];
        let (a, b, c) = (shape.vertices[t[0]], shape.vertices[t[1]], shape.vertices[t[2]]);
        let e1 = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let e2 = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let mut n = [e1[1] * e2[2] - e1[2] * e2[1], e1[2] * e2[0] - e1[0] * e2[2], e1[0] * e2[1] - e1[1] * e2[0]];
        let nn = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt().max(1e-12);
        n = n.map(|v| v / nn);
        if n[2] < 0.0 {
            n = n.map(|v| -v);
        }
        let lambert = (n[0] * light.dir[0] + n[1] * light.dir[1] + n[2] * light.dir[2]).max(0.0);
        let zn = (frags.depth[p] - zmin) / zr;
        let shade = match surface {
            Surface::Relief => (light.ambient + (1.0 - light.ambient) * lambert) * (0.8 + 0.2 * zn),
            Surface::Plane => (light.ambient + (1.0 - light.ambient) * light.dir[2]) * 0.9,
        };
        let w = frags.bary[p];
        let u = w[0] * mean[t[0]][0] + w[1] * mean[t[1]][0] + w[2] * mean[t[2]][0];
        let v = w[0] * mean[t[0]][1] + w[1] * mean[t[1]][1] + w[2] * mean[t[2]][1];
        let (albedo, pw) = tex.albedo(u, v);
        for k in 0..3 {
            out.data[p * 3 + k] = albedo[k] * shade * (1.0 + pulse * pw * PULSE_SIGNATURE[k]);
        }
    }
    out
}

fn frames_from(images: &[Image], rng: &mut ChaCha8Rng) -> Result<Frames> {
    let size = images[0].size;
    let temporal = Normal::new(0.0, CAMERA_NOISE).expect("valid std");
    let mut data = Vec::with_capacity(images.len() * size * size * 3);
    for img in images {
        for &v in &img.data {
            data.push((v + temporal.sample(rng)).clamp(0.0, 1.0) as f32);
        }
    }
    Frames::new(images.len(), size, size, data)
}

/// Clip-level rendering settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipShape {
    pub frames: usize,
    pub fps: f64,
    pub size: usize,
}

impl ClipShape {
    pub fn validate(&self) -> Result<()> {
        if self.frames < rppg::MIN_SPECTRUM_LEN.max(rppg::MIN_BANDPASS_LEN) {
            return Err(Error::Dataset(format!("clips need at least {} frames", rppg::MIN_SPECTRUM_LEN)));
        }
        if self.fps < rppg::MIN_FPS {
            return Err(Error::Dataset(format!("fps must be at least {}", rppg::MIN_FPS)));
        }
        if self.size < 16 || !self.size.is_multiple_of(16) {
            return Err(Error::Dataset("frame size must be a positive multiple of 16".into()));
        }
        Ok(())
    }
}

fn gt_depth(basis: &FaceBasis<f64>, geom: &[FrameGeometry], size: usize) -> Result<Vec<DepthMap<f64>>> {
    geom.iter()
        .map(|g| depth_ground_truth(basis, &g.params, &g.pose, size, size))
        .collect()
}

/// Renders a live recording; shared by live clips, the motion-free twin
/// and the content of replay spoofs.
fn render_live(
    basis: &FaceBasis<f64>,
    subject: &SubjectSpec,
    motion: &MotionProfile,
    shape: ClipShape,
    pulse_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Image>, Vec<FrameGeometry>)> {
    let bg = background(shape.size, rng);
    let light = Light::sample(rng);
    let tex = SkinTexture::new(subject);
    let mut images = Vec::with_capacity(shape.frames);
    let mut geom = Vec::with_capacity(shape.frames);
    for t in 0..shape.frames {
        let g = motion.geometry(basis, subject, t, shape.fps, shape.size);
        let posed = g.posed(basis)?;
        let pulse = subject.pulse_amplitude * pulse_scale * subject.pulse(t, shape.fps);
        images.push(render_face(basis, &tex, &posed, light, Surface::Relief, pulse, &bg));
        geom.push(g);
    }
    Ok((images, geom))
}

/// The subject filmed frontally without motion or expression, with the
/// same pulse. Its extracted spectrum is the subject's rPPG ground truth.
pub fn motion_free_twin(basis: &FaceBasis<f64>, subject: &SubjectSpec, shape: ClipShape) -> Result<(Frames, Vec<FrameGeometry>)> {
    let mut rng = rng_for(&[subject.texture_seed, TAG_TWIN]);
    let (images, geom) = render_live(basis, subject, &MotionProfile::still(), shape, 1.0, &mut rng)?;
    Ok((frames_from(&images, &mut rng)?, geom))
}

/// Ground-truth spectrum of a live subject.
pub fn live_rppg_ground_truth(basis: &FaceBasis<f64>, subject: &SubjectSpec, shape: ClipShape) -> Result<RppgSpectrum<f64>> {
    let (frames, geom) = motion_free_twin(basis, subject, shape)?;
    let shapes = geom.iter().map(|g| g.posed(basis)).collect::<Result<Vec<_>>>()?;
    rppg::extract(&frames, &shapes, basis.forehead(), shape.fps)
}

/// Live clip of `subject` under `motion`.
pub fn gen_live(
    basis: &FaceBasis<f64>,
    subject: &SubjectSpec,
    motion: &MotionProfile,
    shape: ClipShape,
    seed: u64,
) -> Result<VideoClip> {
    let gt = live_rppg_ground_truth(basis, subject, shape)?;
    gen_live_with_truth(basis, subject, motion, shape, seed, gt)
}

fn gen_live_with_truth(
    basis: &FaceBasis<f64>,
    subject: &SubjectSpec,
    motion: &MotionProfile,
    shape: ClipShape,
    seed: u64,
    gt_rppg: RppgSpectrum<f64>,
) -> Result<VideoClip> {
    subject.validate()?;
    shape.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (images, geometry) = render_live(basis, subject, motion, shape, 1.0, &mut rng)?;
    let frames = frames_from(&images, &mut rng)?;
    Ok(VideoClip {
        subject: subject.id,
        label: Label::Live,
        fps: shape.fps,
        gt_depth: gt_depth(basis, &geometry, shape.size)?,
        frames,
        geometry,
        heart_rate_hz: Some(subject.heart_rate_hz),
        gt_rppg,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpoofKind {
    Print,
    Replay,
}

/// Slow hand-held drift of the spoof medium.
fn medium_motion(rng: &mut impl Rng, base_scale: f64, size: usize) -> impl Fn(usize, f64) -> Similarity {
    let f: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.1..0.6));
    let ph: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));
    let amp = [rng.random_range(0.01..0.04), rng.random_range(0.02..0.08), 0.03 * size as f64, 0.03 * size as f64];
    move |t, fps| {
        let w = |k: usize| (std::f64::consts::TAU * f[k] * t as f64 / fps + ph[k]).sin();
        Similarity { scale: base_scale * (1.0 + amp[0] * w(0)), angle: amp[1] * w(1), dx: amp[2] * w(2), dy: amp[3] * w(3) }
    }
}

/// Spoof clip of `subject`: a print or a screen replay.
pub fn gen_spoof(
    basis: &FaceBasis<f64>,
    subject: &SubjectSpec,
    kind: SpoofKind,
    shape: ClipShape,
    seed: u64,
) -> Result<VideoClip> {
    subject.validate()?;
    shape.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = shape.size;
    let half = size as f64 / 2.0;
    let scene = background(size, &mut rng);
    let grain = ValueNoise::new(size, &mut rng);
    let mut images = Vec::with_capacity(shape.frames);
    let mut geometry = Vec::with_capacity(shape.frames);
    match kind {
        SpoofKind::Print => {
            let photo_bg = background(size, &mut rng);
            let light = Light::sample(&mut rng);
            let tex = SkinTexture::new(subject);
            let still = MotionProfile::still();
            let g0 = still.geometry(basis, subject, 0, shape.fps, size);
            let photo = render_face(basis, &tex, &g0.posed(basis)?, light, Surface::Plane, 0.0, &photo_bg);
            let contrast = rng.random_range(0.78..0.92);
            let lift = rng.random_range(0.04..0.1);
            let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.03..0.03));
            let grain_amp = rng.random_range(0.02..0.04);
            let paper_scale = rng.random_range(0.95..1.1);
            let drift = medium_motion(&mut rng, paper_scale, size);
            for t in 0..shape.frames {
                let sim = drift(t, shape.fps);
                let mut img = scene.clone();
                for y in 0..size {
                    for x in 0..size {
                        let (u, v) = sim.inverse(x as f64 + 0.5, y as f64 + 0.5, half);
                        if let Some(c) = photo.bilinear(u, v) {
                            let g = grain_amp * (grain.sample(u / size as f64, v / size as f64) - 0.5);
                            for k in 0..3 {
                                img.data[(y * size + x) * 3 + k] = contrast * c[k] + lift + tint[k] + g;
                            }
                        }
                    }
                }
                images.push(img);
                geometry.push(FrameGeometry { params: g0.params.clone(), pose: warp_pose(&g0.pose, &sim, size) });
            }
        }
        SpoofKind::Replay => {
            let motion = MotionProfile::sample(&mut rng);
            let mut inner = ChaCha8Rng::seed_from_u64(rng.random());
            let (video, geom) = render_live(basis, subject, &motion, shape, REPLAY_PULSE_FACTOR, &mut inner)?;
            let gamma = rng.random_range(1.05..1.25);
            let tint = [rng.random_range(0.9..0.98), rng.random_range(0.96..1.02), rng.random_range(1.02..1.1)];
            let moire_amp = rng.random_range(0.03..0.06);
            let (fx, fy) = (rng.random_range(0.18..0.4), rng.random_range(0.18..0.4));
            let moire_drift = rng.random_range(0.2..1.0);
            let screen_scale = rng.random_range(1.0..1.12);
            let drift = medium_motion(&mut rng, screen_scale, size);
            for (t, (frame, g)) in video.iter().zip(geom).enumerate() {
                let sim = drift(t, shape.fps);
                let mut img = scene.clone();
                let phase = moire_drift * t as f64 / shape.fps;
                for y in 0..size {
                    for x in 0..size {
                        let (u, v) = sim.inverse(x as f64 + 0.5, y as f64 + 0.5, half);
                        if let Some(c) = frame.bilinear(u, v) {
                            let m = 1.0 + moire_amp * (std::f64::consts::TAU * (fx * x as f64 + fy * y as f64 + phase)).sin();
                            for k in 0..3 {
                                img.data[(y * size + x) * 3 + k] = c[k].max(0.0).powf(gamma) * tint[k] * m;
                            }
                        }
                    }
                }
                images.push(img);
                geometry.push(FrameGeometry { params: g.params, pose: warp_pose(&g.pose, &sim, size) });
            }
        }
    }
    let frames = frames_from(&images, &mut rng)?;
    Ok(VideoClip {
        subject: subject.id,
        label: match kind {
            SpoofKind::Print => Label::Print,
            SpoofKind::Replay => Label::Replay,
        },
        fps: shape.fps,
        frames,
        gt_depth: vec![DepthMap::zeros(DEPTH_MAP_SIZE); shape.frames],
        geometry,
        heart_rate_hz: None,
        gt_rppg: RppgSpectrum::zeros(),
    })
}

/// Population and per-subject clip counts of a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub subjects: usize,
    /// Index of the first subject; disjoint ranges give disjoint people.
    pub first_subject: usize,
    pub live_per_subject: usize,
    pub print_per_subject: usize,
    pub replay_per_subject: usize,
    pub frames: usize,
    pub fps: f64,
    pub size: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            subjects: 20,
            first_subject: 0,
            live_per_subject: 2,
            print_per_subject: 2,
            replay_per_subject: 2,
            frames: 150,
            fps: 30.0,
            size: 64,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn clip_shape(&self) -> ClipShape {
        ClipShape { frames: self.frames, fps: self.fps, size: self.size }
    }

    pub fn clips_per_subject(&self) -> usize {
        self.live_per_subject + self.print_per_subject + self.replay_per_subject
    }

    pub fn total_clips(&self) -> usize {
        self.subjects * self.clips_per_subject()
    }
}

/// One planned clip of a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipPlan {
    pub subject: SubjectSpec,
    pub label: Label,
    pub index: usize,
    pub seed: u64,
}

/// Clip plans in subject-major order: live, then print, then replay.
pub fn plan(spec: &DatasetSpec) -> Vec<ClipPlan> {
    let mut out = Vec::with_capacity(spec.total_clips());
    for s in spec.first_subject..spec.first_subject + spec.subjects {
        let subject = SubjectSpec::sample(spec.seed, s);
        let kinds = [
            (Label::Live, TAG_LIVE, spec.live_per_subject),
            (Label::Print, TAG_PRINT, spec.print_per_subject),
            (Label::Replay, TAG_REPLAY, spec.replay_per_subject),
        ];
        for (label, tag, count) in kinds {
            for index in 0..count {
                let seed = mix(&[spec.seed, tag, s as u64, index as u64]);
                out.push(ClipPlan { subject: subject.clone(), label, index, seed });
            }
        }
    }
    out
}

/// Renders one planned clip; `gt` is the subject's live ground truth.
pub fn render_plan(basis: &FaceBasis<f64>, p: &ClipPlan, shape: ClipShape, gt: Option<&RppgSpectrum<f64>>) -> Result<VideoClip> {
    match p.label {
        Label::Live => {
            let motion = MotionProfile::sample(&mut ChaCha8Rng::seed_from_u64(p.seed ^ 0x6d6f_7469_6f6e));
            let gt = match gt {
                Some(g) => g.clone(),
                None => live_rppg_ground_truth(basis, &p.subject, shape)?,
            };
            gen_live_with_truth(basis, &p.subject, &motion, shape, p.seed, gt)
        }
        Label::Print => gen_spoof(basis, &p.subject, SpoofKind::Print, shape, p.seed),
        Label::Replay => gen_spoof(basis, &p.subject, SpoofKind::Replay, shape, p.seed),
    }
}

/// Generates every clip of `spec`, in [`plan`] order, in parallel.
pub fn generate(basis: &FaceBasis<f64>, spec: &DatasetSpec) -> Result<Vec<VideoClip>> {
    let shape = spec.clip_shape();
    shape.validate()?;
    let plans = plan(spec);
    let truths: Vec<(usize, RppgSpectrum<f64>)> = (spec.first_subject..spec.first_subject + spec.subjects)
        .into_par_iter()
        .filter(|_| spec.live_per_subject > 0)
        .map(|s| Ok((s, live_rppg_ground_truth(basis, &SubjectSpec::sample(spec.seed, s), shape)?)))
        .collect::<Result<_>>()?;
    plans
        .par_iter()
        .map(|p| {
            let gt = truths.iter().find(|(s, _)| *s == p.subject.id).map(|(_, g)| g);
            render_plan(basis, p, shape, gt)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ClipShape {
        ClipShape { frames: 60, fps: 30.0, size: 32 }
    }

    #[test]
    fn subjects_are_deterministic_and_valid() {
        for id in 0..20 {
            let s = SubjectSpec::sample(3, id);
            s.validate().unwrap();
            assert_eq!(s, SubjectSpec::sample(3, id));
        }
        assert_ne!(SubjectSpec::sample(3, 0), SubjectSpec::sample(4, 0));
    }

    #[test]
    fn plan_counts_match_request() {
        let spec = DatasetSpec { subjects: 3, live_per_subject: 2, print_per_subject: 1, replay_per_subject: 2, ..DatasetSpec::default() };
        let p = plan(&spec);
        assert_eq!(p.len(), 15);
        assert_eq!(p.iter().filter(|c| c.label == Label::Live).count(), 6);
        assert_eq!(p.iter().filter(|c| c.label == Label::Print).count(), 3);
    }

    #[test]
    fn spoof_ground_truth_is_flat_and_silent() {
        let basis = default_basis();
        let s = SubjectSpec::sample(1, 0);
        for kind in [SpoofKind::Print, SpoofKind::Replay] {
            let c = gen_spoof(&basis, &s, kind, small(), 9).unwrap();
            c.validate().unwrap();
            assert!(c.gt_depth.iter().all(|d| d.values().iter().all(|&v| v == 0.0)));
            assert!(c.gt_rppg.is_zero());
            assert!(c.frames.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn live_clip_ground_truth() {
        let basis = default_basis();
        let s = SubjectSpec::sample(1, 0);
        let m = MotionProfile::sample(&mut ChaCha8Rng::seed_from_u64(2));
        let c = gen_live(&basis, &s, &m, small(), 5).unwrap();
        for d in &c.gt_depth {
            assert!((d.max() - 1.0).abs() < 1e-12);
            assert_eq!(d.get(0, 0), 0.0);
        }
        assert!((c.gt_rppg.norm() - 1.0).abs() < 1e-9);
        assert_eq!(c, gen_live(&basis, &s, &m, small(), 5).unwrap());
    }
}
