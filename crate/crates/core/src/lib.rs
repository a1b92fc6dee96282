//! Synthetic-human motion clip generation and 3-D pose evaluation.
//!
//! Person renders are composited onto real background video with camera
//! tracking, superpixel occluders, total occlusions and keypoint visibility
//! randomization. The same crate evaluates predictions with the
//! Procrustes-aligned mean per-joint position error.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod composer;
pub mod error;
pub mod eval;
pub mod flow;
pub mod grid;
pub mod io;
pub mod keypoints;
pub mod scalar;
pub mod schema;
pub mod seed;
pub mod superpix;
pub mod synth;
pub mod tensor;
pub mod types;

pub use error::{Error, PipelineError};
pub use scalar::Real;

pub type FlowField = flow::Flow<f32>;
pub type CameraTrack = flow::Track<f32>;
pub type Pose3D = types::Pose<f32>;
pub type AlignmentResult = eval::Alignment<f64>;
pub type Heatmaps = keypoints::HeatmapStack<f32>;
