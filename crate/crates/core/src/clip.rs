//! In-memory video clips with their per-frame geometry and ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::face::{pose_transform, synthesize_shape, DepthMap, FaceBasis, PosedShape, Pose, ShapeParams};
use crate::rppg::RppgSpectrum;
use crate::scalar::{lit, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "live")]
    Live,
    #[serde(rename = "print-spoof")]
    Print,
    #[serde(rename = "replay-spoof")]
    Replay,
}

impl Label {
    pub fn is_live(self) -> bool {
        self == Label::Live
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Live => "live",
            Label::Print => "print-spoof",
            Label::Replay => "replay-spoof",
        }
    }
}

/// `T x H x W x 3` RGB frames, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frames {
    count: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Frames {
    pub fn new(count: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != count * height * width * 3 {
            return Err(shape_err!("frame data length {} != {}x{}x{}x3", data.len(), count, height, width));
        }
        Ok(Self { count, height, width, data })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.height * self.width * 3;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn pixel(&self, t: usize, y: usize, x: usize) -> [f32; 3] {
        let i = ((t * self.height + y) * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Frame `t` as planar CHW values, converted to `T`.
    pub fn frame_chw<T: Scalar>(&self, t: usize) -> Vec<T> {
        let hw = self.height * self.width;
        let src = self.frame(t);
        let mut out = vec![T::zero(); 3 * hw];
        for p in 0..hw {
            for c in 0..3 {
                out[c * hw + p] = T::from_f32(src[p * 3 + c]).unwrap_or_else(T::zero);
            }
        }
        out
    }
}

/// Shape and pose of the face visible in one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameGeometry {
    pub params: ShapeParams<f64>,
    pub pose: Pose<f64>,
}

impl FrameGeometry {
    pub fn posed<T: Scalar>(&self, basis: &FaceBasis<T>) -> Result<PosedShape<T>> {
        let params = ShapeParams {
            alpha_id: self.params.alpha_id.iter().map(|&v| lit(v)).collect(),
            alpha_exp: self.params.alpha_exp.iter().map(|&v| lit(v)).collect(),
        };
        let p = &self.pose;
        let pose = Pose {
            scale: lit(p.scale),
            rotation: p.rotation.map(|r| r.map(lit)),
            translation: p.translation.map(lit),
        };
        pose_transform(&synthesize_shape(basis, &params)?, &pose)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub subject: usize,
    pub label: Label,
    pub fps: f64,
    pub frames: Frames,
    pub geometry: Vec<FrameGeometry>,
    pub heart_rate_hz: Option<f64>,
    pub gt_depth: Vec<DepthMap<f64>>,
    pub gt_rppg: RppgSpectrum<f64>,
}

impl VideoClip {
    pub fn len(&self) -> usize {
        self.frames.count()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.count() == 0
    }

    pub fn posed_shapes<T: Scalar>(&self, basis: &FaceBasis<T>) -> Result<Vec<PosedShape<T>>> {
        self.geometry.iter().map(|g| g.posed(basis)).collect()
    }

    /// Checks that frames, geometry and ground truth agree in length.
    pub fn validate(&self) -> Result<()> {
        let t = self.len();
        if self.geometry.len() != t || self.gt_depth.len() != t {
            return Err(crate::Error::Dataset(format!(
                "clip has {t} frames but {} geometries and {} depth maps",
                self.geometry.len(),
                self.gt_depth.len()
            )));
        }
        Ok(())
    }
}
