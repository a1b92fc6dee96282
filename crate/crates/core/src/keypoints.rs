//! Keypoint visibility randomization and Gaussian heatmaps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{DepthMap, Grid};
use crate::scalar::Real;
use crate::schema::{JointSchema, INPUT_KEYPOINT_COUNT};
use crate::superpix::VideoMask;
use crate::types::{Keypoint2D, KeypointState};

/// The 12 input keypoints of one frame, in schema order.
pub type FrameKeypoints = [Keypoint2D; INPUT_KEYPOINT_COUNT];

pub const DEFAULT_HEATMAP_SIGMA: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisibilityParams {
    /// Meters behind the visible surface at which a joint counts as self-occluded.
    pub depth_threshold: f64,
    pub leg_unhide_prob: f64,
    pub flip_prob: f64,
}

impl Default for VisibilityParams {
    fn default() -> Self {
        Self {
            depth_threshold: 0.20,
            leg_unhide_prob: 0.5,
            flip_prob: 0.05,
        }
    }
}

impl VisibilityParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [("leg_unhide_prob", self.leg_unhide_prob), ("flip_prob", self.flip_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} {p} outside [0, 1]"));
            }
        }
        if !(self.depth_threshold > 0.0 && self.depth_threshold.is_finite()) {
            return Err(format!("depth_threshold {} must be positive", self.depth_threshold));
        }
        Ok(())
    }
}

/// True when the joint lies at least `threshold` behind the surface depth at
/// its rounded pixel. Pixels without surface (depth ≤ 0) or outside the grid
/// never hide.
pub fn classify_depth_hidden<T: Real>(joint_z: T, joint2d: [f32; 2], depth: &Grid<T>, threshold: T) -> bool {
    let kp = Keypoint2D::visible(joint2d[0], joint2d[1]);
    let Some((y, x)) = kp.rounded_pixel(depth.height(), depth.width()) else {
        return false;
    };
    let surface = depth.get(y, x, 0);
    if !(surface > T::zero()) {
        return false;
    }
    joint_z - surface >= threshold
}

/// Everything the deterministic hiding rules look at, in canvas coordinates.
pub struct VisibilityInputs<'a> {
    /// Keypoint positions on the canvas; incoming states are ignored.
    pub keypoints: &'a [FrameKeypoints],
    /// Camera-space depth (z, meters) of each input keypoint.
    pub joint_depth: &'a [[f32; INPUT_KEYPOINT_COUNT]],
    /// Person surface depth per frame, 0 where the person is absent.
    pub surface_depth: &'a [DepthMap],
    /// Accepted occluder volume, if any.
    pub occluder: Option<&'a VideoMask>,
    pub total_occluded: &'a [bool],
    /// Canvas `(height, width)` defining out-of-frame.
    pub canvas: (usize, usize),
}

/// Applies the hiding rules in order, first match wins:
/// out of frame, under the occluder, totally occluded frame, depth. Hidden
/// leg keypoints are then unhidden with `leg_unhide_prob`, and every keypoint
/// flips between hidden and visible with `flip_prob`. Totally occluded frames
/// are exempt from both random steps.
pub fn visibility_pass(
    inputs: &VisibilityInputs<'_>,
    schema: &JointSchema,
    params: &VisibilityParams,
    rng: &mut impl Rng,
) -> Vec<FrameKeypoints> {
    let (h, w) = inputs.canvas;
    let threshold = params.depth_threshold as f32;
    let mut out = Vec::with_capacity(inputs.keypoints.len());
    for (t, frame) in inputs.keypoints.iter().enumerate() {
        let total = inputs.total_occluded.get(t).copied().unwrap_or(false);
        let mut result = *frame;
        for (j, kp) in result.iter_mut().enumerate() {
            kp.state = if !kp.in_frame(h, w) {
                KeypointState::HiddenOutOfFrame
            } else if inputs.occluder.is_some_and(|m| {
                kp.rounded_pixel(h, w).is_some_and(|(y, x)| m.get(t, y, x))
            }) {
                KeypointState::HiddenOccluder
            } else if total {
                KeypointState::HiddenTotalOcclusion
            } else if inputs.surface_depth.get(t).is_some_and(|d| {
                classify_depth_hidden(inputs.joint_depth[t][j], kp.position, d, threshold)
            }) {
                KeypointState::HiddenDepth
            } else {
                KeypointState::Visible
            };

            // Both draws happen for every keypoint so stream positions never
            // depend on earlier outcomes.
            let unhide_draw: f64 = rng.random();
            let flip_draw: f64 = rng.random();
            if total {
                continue;
            }
            if kp.state.is_hidden() && schema.is_leg(j) && unhide_draw < params.leg_unhide_prob {
                kp.state = KeypointState::Visible;
            }
            if flip_draw < params.flip_prob {
                kp.state = if kp.state.is_visible() {
                    KeypointState::HiddenRandom
                } else {
                    KeypointState::Visible
                };
            }
        }
        out.push(result);
    }
    out
}

/// Per-frame `size × size × 12` heatmaps.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapStack<T> {
    pub maps: Vec<Grid<T>>,
}

impl<T: Real> HeatmapStack<T> {
    pub fn frames(&self) -> usize {
        self.maps.len()
    }

    /// Sum of one channel of one frame.
    pub fn channel_sum(&self, t: usize, channel: usize) -> T {
        let g = &self.maps[t];
        g.data()
            .iter()
            .skip(channel)
            .step_by(g.channels())
            .fold(T::zero(), |a, &b| a + b)
    }
}

/// Gaussian value at squared distance `d2`: peak 1, standard deviation `sigma`.
#[inline]
pub fn gaussian_peak1<T: Real>(d2: T, sigma: T) -> T {
    (-d2 / (T::lit(2.0) * sigma * sigma)).exp()
}

/// One channel per keypoint: `exp(-|q - p|² / 2σ²)` over the whole crop for
/// visible keypoints, zeros for hidden ones.
pub fn rasterize_heatmaps<T: Real>(keypoints: &[FrameKeypoints], size: usize, sigma: T) -> HeatmapStack<T> {
    assert!(sigma > T::zero(), "heatmap sigma must be positive");
    let maps = keypoints
        .iter()
        .map(|frame| {
            let mut g = Grid::filled(size, size, INPUT_KEYPOINT_COUNT, T::zero());
            for (c, kp) in frame.iter().enumerate() {
                if kp.state.is_hidden() {
                    continue;
                }
                let px = T::lit(kp.position[0] as f64);
                let py = T::lit(kp.position[1] as f64);
                for y in 0..size {
                    let dy = T::lit(y as f64) - py;
                    for x in 0..size {
                        let dx = T::lit(x as f64) - px;
                        g.set(y, x, c, gaussian_peak1(dx * dx + dy * dy, sigma));
                    }
                }
            }
            g
        })
        .collect();
    HeatmapStack { maps }
}
