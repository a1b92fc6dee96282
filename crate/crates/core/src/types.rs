//! Clip-level domain types.

use serde::{Deserialize, Serialize};

use crate::grid::{DepthMap, RgbFrame, RgbaFrame};
use crate::scalar::Real;
use crate::schema::EVAL_JOINT_COUNT;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KeypointState {
    Visible,
    HiddenOutOfFrame,
    HiddenOccluder,
    HiddenTotalOcclusion,
    HiddenDepth,
    HiddenRandom,
}

impl KeypointState {
    pub const ALL: [KeypointState; 6] = [
        KeypointState::Visible,
        KeypointState::HiddenOutOfFrame,
        KeypointState::HiddenOccluder,
        KeypointState::HiddenTotalOcclusion,
        KeypointState::HiddenDepth,
        KeypointState::HiddenRandom,
    ];

    #[inline]
    pub fn is_visible(self) -> bool {
        self == KeypointState::Visible
    }

    #[inline]
    pub fn is_hidden(self) -> bool {
        !self.is_visible()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keypoint2D {
    /// `(x, y)` in pixels.
    pub position: [f32; 2],
    pub state: KeypointState,
}

impl Keypoint2D {
    pub fn visible(x: f32, y: f32) -> Self {
        Self {
            position: [x, y],
            state: KeypointState::Visible,
        }
    }

    /// True when the position lies in `[0, width) × [0, height)`.
    pub fn in_frame(&self, height: usize, width: usize) -> bool {
        let [x, y] = self.position;
        x >= 0.0 && y >= 0.0 && (x as f64) < width as f64 && (y as f64) < height as f64
    }

    /// Nearest pixel `(y, x)`, if inside the grid.
    pub fn rounded_pixel(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        let x = self.position[0].round();
        let y = self.position[1].round();
        if x >= 0.0 && y >= 0.0 && (x as usize) < width && (y as usize) < height {
            Some((y as usize, x as usize))
        } else {
            None
        }
    }
}

/// 14 joints in camera coordinates (meters), in evaluation-joint order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct Pose<T> {
    pub joints: [[T; 3]; EVAL_JOINT_COUNT],
}

impl<T: Real> Pose<T> {
    pub fn new(joints: [[T; 3]; EVAL_JOINT_COUNT]) -> Self {
        Self { joints }
    }

    /// Panics unless `values.len() == 42`.
    pub fn from_flat(values: &[T]) -> Self {
        assert_eq!(values.len(), EVAL_JOINT_COUNT * 3);
        let mut joints = [[T::zero(); 3]; EVAL_JOINT_COUNT];
        for (j, row) in joints.iter_mut().enumerate() {
            row.copy_from_slice(&values[j * 3..j * 3 + 3]);
        }
        Self { joints }
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().flatten().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Pose<U> {
        let mut joints = [[U::zero(); 3]; EVAL_JOINT_COUNT];
        for (dst, src) in joints.iter_mut().zip(&self.joints) {
            for k in 0..3 {
                dst[k] = U::lit(src[k].to_f64_lossy());
            }
        }
        Pose { joints }
    }
}

/// Pre-rendered person clip with per-pixel alpha and depth.
#[derive(Clone, Debug, PartialEq)]
pub struct PersonClip {
    pub frames: Vec<RgbaFrame>,
    pub depth: Vec<DepthMap>,
    pub joints2d: Vec<[Keypoint2D; EVAL_JOINT_COUNT]>,
    pub joints3d: Vec<crate::Pose3D>,
    pub fps: f64,
}

impl PersonClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames.first().map(|f| f.dims()).unwrap_or((0, 0))
    }

    /// Checks the clip invariants, returning a description of the first violation.
    pub fn check(&self) -> Result<(), String> {
        let t = self.frames.len();
        if t == 0 {
            return Err("clip has no frames".into());
        }
        if self.depth.len() != t || self.joints2d.len() != t || self.joints3d.len() != t {
            return Err(format!(
                "per-frame lengths differ: frames {t}, depth {}, joints2d {}, joints3d {}",
                self.depth.len(),
                self.joints2d.len(),
                self.joints3d.len()
            ));
        }
        let (h, w) = self.dims();
        for (i, (f, d)) in self.frames.iter().zip(&self.depth).enumerate() {
            if f.dims() != (h, w) || f.channels() != 4 || d.dims() != (h, w) || d.channels() != 1 {
                return Err(format!("frame {i} has inconsistent dimensions"));
            }
            for y in 0..h {
                for x in 0..w {
                    if f.get(y, x, 3) > 0 && !(d.get(y, x, 0) > 0.0) {
                        return Err(format!("frame {i} depth not positive under alpha at ({x}, {y})"));
                    }
                }
            }
        }
        for (i, joints) in self.joints2d.iter().enumerate() {
            if joints.iter().any(|k| !k.position.iter().all(|v| v.is_finite())) {
                return Err(format!("frame {i} has a non-finite 2D joint"));
            }
        }
        for (i, pose) in self.joints3d.iter().enumerate() {
            if !pose.is_finite() {
                return Err(format!("frame {i} has a non-finite 3D joint"));
            }
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(format!("fps {} is not positive", self.fps));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundClip {
    pub frames: Vec<RgbFrame>,
    pub fps: f64,
    pub source_id: String,
}

impl BackgroundClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames.first().map(|f| f.dims()).unwrap_or((0, 0))
    }

    pub fn check(&self) -> Result<(), String> {
        if self.frames.is_empty() {
            return Err("clip has no frames".into());
        }
        let (h, w) = self.dims();
        for (i, f) in self.frames.iter().enumerate() {
            if f.dims() != (h, w) || f.channels() != 3 {
                return Err(format!("frame {i} has inconsistent dimensions"));
            }
        }
        Ok(())
    }
}

pub const DEFAULT_CLIP_LENGTH: usize = 31;

fn default_clip_length() -> usize {
    DEFAULT_CLIP_LENGTH
}

/// One line of a compose manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipManifest {
    pub person_path: String,
    pub background_path: String,
    /// Falls back to the pipeline configuration's seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    pub clip_index: u64,
    #[serde(default = "default_clip_length")]
    pub clip_length: usize,
    /// Directory of externally computed background flow (`NNNNNN.flo`, frame i → i+1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_flow_path: Option<String>,
}

impl ClipManifest {
    pub fn new(person_path: impl Into<String>, background_path: impl Into<String>, clip_index: u64) -> Self {
        Self {
            person_path: person_path.into(),
            background_path: background_path.into(),
            master_seed: None,
            clip_index,
            clip_length: DEFAULT_CLIP_LENGTH,
            background_flow_path: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.clip_length < 2 {
            return Err(format!("clip_length {} < 2", self.clip_length));
        }
        for p in [&self.person_path, &self.background_path] {
            if !std::path::Path::new(p).is_dir() {
                return Err(format!("{p}: not a readable clip directory"));
            }
        }
        Ok(())
    }
}
