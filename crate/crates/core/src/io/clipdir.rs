//! Clip directories and dataset manifests.
//!
//! ```text
//! <root>/manifest.json
//! <root>/clip_0000/frames.bin   raw f32 LE, T x H x W x 3
//! <root>/clip_0000/meta.json
//! <root>/clip_0000/depth.axsp   "depth" [T, M, M]
//! <root>/clip_0000/rppg.axsp    "rppg"  [bins]
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::container::{write_atomic, Container};
use crate::clip::{FrameGeometry, Frames, Label, VideoClip};
use crate::error::{Error, Result};
use crate::face::DepthMap;
use crate::rppg::RppgSpectrum;
use crate::tensor::Tensor;

pub const FRAMES_FILE: &str = "frames.bin";
pub const META_FILE: &str = "meta.json";
pub const DEPTH_FILE: &str = "depth.axsp";
pub const RPPG_FILE: &str = "rppg.axsp";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipMeta {
    pub subject: usize,
    pub label: Label,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub fps: f64,
    pub heart_rate_hz: Option<f64>,
    pub geometry: Vec<FrameGeometry>,
    pub gt_depth: String,
    pub gt_rppg: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub subject: usize,
    pub label: Label,
    pub heart_rate_hz: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub clips: Vec<ManifestEntry>,
}

pub fn clip_dir_name(index: usize) -> String {
    format!("clip_{index:04}")
}

fn fmt_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("{}: {msg}", path.display()))
}

pub fn write_clip(dir: &Path, clip: &VideoClip) -> Result<()> {
    clip.validate()?;
    fs::create_dir_all(dir)?;
    let bytes: Vec<u8> = clip.frames.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    write_atomic(&dir.join(FRAMES_FILE), &bytes)?;

    let m = clip.gt_depth.first().map_or(0, DepthMap::size);
    let mut depth = Vec::with_capacity(clip.len() * m * m);
    for d in &clip.gt_depth {
        if d.size() != m {
            return Err(Error::Dataset("ground-truth depth maps differ in size".into()));
        }
        depth.extend_from_slice(d.values());
    }
    let mut c = Container::new();
    c.insert_tensor("depth", &Tensor::new(&[clip.len(), m, m], depth)?)?;
    c.save(&dir.join(DEPTH_FILE))?;
    let mut c = Container::new();
    let bins = clip.gt_rppg.values();
    c.insert_tensor("rppg", &Tensor::new(&[bins.len()], bins.to_vec())?)?;
    c.save(&dir.join(RPPG_FILE))?;

    let meta = ClipMeta {
        subject: clip.subject,
        label: clip.label,
        frames: clip.len(),
        height: clip.frames.height(),
        width: clip.frames.width(),
        fps: clip.fps,
        heart_rate_hz: clip.heart_rate_hz,
        geometry: clip.geometry.clone(),
        gt_depth: DEPTH_FILE.into(),
        gt_rppg: RPPG_FILE.into(),
    };
    write_atomic(&dir.join(META_FILE), serde_json::to_string_pretty(&meta)?.as_bytes())
}

pub fn read_meta(dir: &Path) -> Result<ClipMeta> {
    let path = dir.join(META_FILE);
    serde_json::from_str(&fs::read_to_string(&path)?).map_err(|e| fmt_err(&path, e))
}

pub fn read_frames(dir: &Path, meta: &ClipMeta) -> Result<Frames> {
    let path = dir.join(FRAMES_FILE);
    let bytes = fs::read(&path)?;
    let want = meta.frames * meta.height * meta.width * 3 * 4;
    if bytes.len() != want {
        return Err(fmt_err(&path, format!("{} bytes, expected {want}", bytes.len())));
    }
    let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    Frames::new(meta.frames, meta.height, meta.width, data)
}

pub fn read_clip(dir: &Path) -> Result<VideoClip> {
    let meta = read_meta(dir)?;
    let frames = read_frames(dir, &meta)?;

    let depth: Tensor<f64> = Container::load(&dir.join(&meta.gt_depth))?.tensor("depth")?;
    let dims = depth.shape().to_vec();
    if dims.len() != 3 || dims[0] != meta.frames || dims[1] != dims[2] {
        return Err(fmt_err(&dir.join(&meta.gt_depth), format!("depth shape {dims:?}")));
    }
    let cells = dims[1] * dims[2];
    let gt_depth = depth
        .data()
        .chunks(cells.max(1))
        .take(meta.frames)
        .map(|c| DepthMap::from_values(dims[1], c.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let rppg: Tensor<f64> = Container::load(&dir.join(&meta.gt_rppg))?.tensor("rppg")?;
    let clip = VideoClip {
        subject: meta.subject,
        label: meta.label,
        fps: meta.fps,
        frames,
        geometry: meta.geometry,
        heart_rate_hz: meta.heart_rate_hz,
        gt_depth,
        gt_rppg: RppgSpectrum::from_values(rppg.data().to_vec())?,
    };
    clip.validate()?;
    Ok(clip)
}

/// Writes every clip under `root` and a manifest listing them in order.
pub fn write_dataset(root: &Path, clips: &[VideoClip]) -> Result<Manifest> {
    fs::create_dir_all(root)?;
    clips
        .par_iter()
        .enumerate()
        .try_for_each(|(i, c)| write_clip(&root.join(clip_dir_name(i)), c))?;
    let manifest = Manifest {
        clips: clips
            .iter()
            .enumerate()
            .map(|(i, c)| ManifestEntry {
                path: clip_dir_name(i),
                subject: c.subject,
                label: c.label,
                heart_rate_hz: c.heart_rate_hz,
            })
            .collect(),
    };
    write_atomic(&root.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST_FILE);
    serde_json::from_str(&fs::read_to_string(&path)?).map_err(|e| fmt_err(&path, e))
}

/// Loads a dataset root (with manifest) or a single clip directory.
pub fn read_dataset(path: &Path) -> Result<(Vec<PathBuf>, Vec<VideoClip>)> {
    let dirs: Vec<PathBuf> = if path.join(META_FILE).is_file() {
        vec![path.to_path_buf()]
    } else {
        read_manifest(path)?.clips.iter().map(|e| path.join(&e.path)).collect()
    };
    let clips = dirs.par_iter().map(|d| read_clip(d)).collect::<Result<Vec<_>>>()?;
    Ok((dirs, clips))
}
