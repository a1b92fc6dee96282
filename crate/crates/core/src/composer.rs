//! Training-clip assembly: camera-following translation, superpixel
//! occluders, total occlusions, compositing, detection crops and paired boxes.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ComposeError, FlowError, LoadError, PipelineError};
use crate::flow::{flow_to_net_input, integrate_camera, median_flow, read_flo, tvl1_flow, TvL1Params};
use crate::grid::{crop_window, luma, resize_bilinear, round_u8, Grid, RgbFrame, RgbaFrame};
use crate::io;
use crate::keypoints::{rasterize_heatmaps, visibility_pass, FrameKeypoints, HeatmapStack, VisibilityInputs, VisibilityParams, DEFAULT_HEATMAP_SIGMA};
use crate::schema::{JointSchema, EVAL_JOINT_COUNT, INPUT_KEYPOINT_COUNT};
use crate::seed::{derive_clip_seed, stage_rng, Substream};
use crate::superpix::{mask_from_label, CoordMode, sample_slic_params, slic_video, SlicParams, SuperpixelLabels, VideoMask};
use crate::types::{BackgroundClip, ClipManifest, Keypoint2D, KeypointState, PersonClip};
use crate::{CameraTrack, FlowField, Pose3D};

pub const CANVAS_HEIGHT: usize = 240;
pub const CANVAS_WIDTH: usize = 320;
pub const CROP_SIZE: usize = 224;
pub const TARGET_PERSON_HEIGHT: f64 = 150.0;
pub const PERSON_HEIGHT_FACTOR: f64 = 1.1;
pub const MIN_PERSON_HEIGHT: f64 = 16.0;
pub const ALPHA_THRESHOLD: u8 = 128;
pub const TOTAL_OCCLUSION_PROB: f64 = 0.3;
pub const MAX_TOTAL_OCCLUSION_LEN: usize = 15;
pub const MIN_UNCOVERED_JOINTS: f64 = 7.0;
/// Channels of one network-input frame: flow (3), heatmaps (12), indicator (1).
pub const INPUT_CHANNELS: usize = 3 + INPUT_KEYPOINT_COUNT + 1;

/// Each flag disables one stage.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// One background frame repeated for the whole clip.
    pub static_background: bool,
    /// Zero camera track: the person stays where it was rendered.
    pub no_camera_tracking: bool,
    pub no_occluders: bool,
    pub no_total_occlusions: bool,
}

impl Ablations {
    pub const NAMES: [&'static str; 4] = ["static_background", "no_camera_tracking", "no_occluders", "no_total_occlusions"];

    pub fn enable(&mut self, name: &str) -> Result<(), String> {
        match name.replace('-', "_").as_str() {
            "static_background" => self.static_background = true,
            "no_camera_tracking" => self.no_camera_tracking = true,
            "no_occluders" => self.no_occluders = true,
            "no_total_occlusions" => self.no_total_occlusions = true,
            other => return Err(format!("unknown ablation {other:?}; expected one of {:?}", Self::NAMES)),
        }
        Ok(())
    }
}

/// Crop geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CropParams {
    pub size: usize,
    pub target_person_height: f64,
    /// Person height = factor × vertical extent of the visible keypoints.
    pub height_factor: f64,
    /// Lower bound on the person height, keeps single-keypoint boxes finite.
    pub min_person_height: f64,
}

impl Default for CropParams {
    fn default() -> Self {
        Self {
            size: CROP_SIZE,
            target_person_height: TARGET_PERSON_HEIGHT,
            height_factor: PERSON_HEIGHT_FACTOR,
            min_person_height: MIN_PERSON_HEIGHT,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComposeParams {
    /// Canvas `(height, width)`; person renders must match it.
    pub canvas: (usize, usize),
    pub crop: CropParams,
    pub alpha_threshold: u8,
    pub total_occlusion_prob: f64,
    pub max_total_occlusion_len: usize,
    pub min_uncovered_joints: f64,
    pub heatmap_sigma: f64,
    pub background_flow: TvL1Params,
    pub person_flow: TvL1Params,
    pub visibility: VisibilityParams,
    /// Applied to every sampled superpixel parameter set.
    pub slic_coord_mode: CoordMode,
    pub slic_window: Option<f64>,
    pub ablations: Ablations,
    pub schema: JointSchema,
}

impl Default for ComposeParams {
    fn default() -> Self {
        Self {
            canvas: (CANVAS_HEIGHT, CANVAS_WIDTH),
            crop: CropParams::default(),
            alpha_threshold: ALPHA_THRESHOLD,
            total_occlusion_prob: TOTAL_OCCLUSION_PROB,
            max_total_occlusion_len: MAX_TOTAL_OCCLUSION_LEN,
            min_uncovered_joints: MIN_UNCOVERED_JOINTS,
            heatmap_sigma: DEFAULT_HEATMAP_SIGMA,
            background_flow: TvL1Params::default(),
            person_flow: TvL1Params::default(),
            visibility: VisibilityParams::default(),
            slic_coord_mode: CoordMode::default(),
            slic_window: None,
            ablations: Ablations::default(),
            schema: JointSchema::default(),
        }
    }
}

impl ComposeParams {
    pub fn validate(&self) -> Result<(), ComposeError> {
        let bad = |m: String| Err(ComposeError::InvalidParameter(m));
        if self.canvas.0 == 0 || self.canvas.1 == 0 {
            return bad("canvas must be non-empty".into());
        }
        if self.crop.size == 0 {
            return bad("crop size must be positive".into());
        }
        for (name, v) in [
            ("target_person_height", self.crop.target_person_height),
            ("height_factor", self.crop.height_factor),
            ("min_person_height", self.crop.min_person_height),
            ("heatmap_sigma", self.heatmap_sigma),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.total_occlusion_prob) {
            return Err(ComposeError::InvalidProbability(self.total_occlusion_prob));
        }
        if self.max_total_occlusion_len == 0 {
            return bad("max_total_occlusion_len must be >= 1".into());
        }
        if self.slic_window.is_some_and(|w| !(w >= 0.0)) {
            return bad("slic_window must be non-negative".into());
        }
        self.visibility.validate().map_err(ComposeError::InvalidParameter)?;
        self.schema.validate().map_err(|e| ComposeError::InvalidParameter(e.to_string()))?;
        for p in [&self.background_flow, &self.person_flow] {
            p.validate().map_err(|e| ComposeError::InvalidParameter(e.to_string()))?;
        }
        Ok(())
    }
}

/// Axis-aligned similarity `q = scale · p + translation` from frame to crop pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub translation: [f64; 2],
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            translation: [0.0, 0.0],
        }
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.scale * p[0] + self.translation[0],
            self.scale * p[1] + self.translation[1],
        ]
    }

    pub fn invert(&self, q: [f64; 2]) -> [f64; 2] {
        [
            (q[0] - self.translation[0]) / self.scale,
            (q[1] - self.translation[1]) / self.scale,
        ]
    }

    /// Frame-space rectangle seen by a `size × size` crop.
    pub fn window(&self, size: usize) -> Rect {
        let [x0, y0] = self.invert([0.0, 0.0]);
        let [x1, y1] = self.invert([size as f64, size as f64]);
        Rect { x0, y0, x1, y1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

/// Frame `frame_a`'s crop window applied to `frame_a` and `frame_b = frame_a + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxPair {
    #[serde(rename = "box")]
    pub rect: Rect,
    pub transform: SimilarityTransform,
    pub frame_a: usize,
    pub frame_b: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OccluderMask {
    pub mask: VideoMask,
    pub label: u32,
    pub accepted: bool,
}

impl OccluderMask {
    /// A rejected mask that hides nothing.
    pub fn none(frames: usize, height: usize, width: usize) -> Self {
        Self {
            mask: VideoMask::empty(frames, height, width),
            label: 0,
            accepted: false,
        }
    }

    pub fn covers(&self, t: usize, kp: &Keypoint2D) -> bool {
        let (h, w) = self.mask.dims();
        self.accepted && kp.rounded_pixel(h, w).is_some_and(|(y, x)| self.mask.get(t, y, x))
    }
}

/// Bilinear taps with out-of-grid neighbors given zero weight.
fn zero_padded_taps(x: f64, y: f64, height: usize, width: usize) -> [(usize, usize, f64); 4] {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let mut taps = [(0, 0, 0.0); 4];
    for (i, (dy, dx, w)) in [
        (0.0, 0.0, (1.0 - fx) * (1.0 - fy)),
        (0.0, 1.0, fx * (1.0 - fy)),
        (1.0, 0.0, (1.0 - fx) * fy),
        (1.0, 1.0, fx * fy),
    ]
    .into_iter()
    .enumerate()
    {
        let (ty, tx) = (y0 + dy, x0 + dx);
        if w > 0.0 && ty >= 0.0 && tx >= 0.0 && ty < height as f64 && tx < width as f64 {
            taps[i] = (ty as usize, tx as usize, w);
        }
    }
    taps
}

/// Resamples `src` at `q ↦ inverse(q)` into a `height × width` grid, zero outside.
fn resample_u8(src: &Grid<u8>, height: usize, width: usize, inverse: impl Fn(f64, f64) -> (f64, f64) + Sync) -> Grid<u8> {
    let (sh, sw) = src.dims();
    let c = src.channels();
    let rows: Vec<Vec<u8>> = (0..height)
        .into_par_iter()
        .map(|y| {
            let mut row = vec![0u8; width * c];
            for x in 0..width {
                let (fx, fy) = inverse(x as f64, y as f64);
                let taps = zero_padded_taps(fx, fy, sh, sw);
                for ch in 0..c {
                    let v: f64 = taps.iter().map(|&(ty, tx, w)| w * src.get(ty, tx, ch) as f64).sum();
                    row[x * c + ch] = round_u8(v);
                }
            }
            row
        })
        .collect();
    Grid::from_vec(height, width, c, rows.concat())
}

/// Shifts frame `t` of the person by `track[t]`: RGBA bilinearly with
/// transparent padding, depth renormalized over covered taps, 2D joints
/// exactly. Joints leaving the canvas become `HiddenOutOfFrame`.
pub fn translate_person(person: &PersonClip, track: &CameraTrack) -> Result<PersonClip, ComposeError> {
    if person.len() != track.len() {
        return Err(ComposeError::LengthMismatch(person.len(), track.len()));
    }
    let (h, w) = person.dims();
    let mut out = person.clone();
    out.frames
        .par_iter_mut()
        .zip(out.depth.par_iter_mut())
        .zip(person.frames.par_iter().zip(&person.depth))
        .zip(&track.offsets)
        .for_each(|(((frame, depth), (src, src_depth)), off)| {
            let (dx, dy) = (off[0] as f64, off[1] as f64);
            if dx == 0.0 && dy == 0.0 {
                return;
            }
            *frame = resample_u8(src, h, w, |x, y| (x - dx, y - dy));
            *depth = Grid::from_fn(h, w, 1, |y, x, _| {
                if frame.get(y, x, 3) == 0 {
                    return 0.0;
                }
                let taps = zero_padded_taps(x as f64 - dx, y as f64 - dy, h, w);
                let (mut sum, mut weight) = (0.0f64, 0.0f64);
                for &(ty, tx, tw) in &taps {
                    if tw > 0.0 && src.get(ty, tx, 3) > 0 {
                        sum += tw * src_depth.get(ty, tx, 0) as f64;
                        weight += tw;
                    }
                }
                if weight > 0.0 {
                    (sum / weight) as f32
                } else {
                    0.0
                }
            });
        });
    for (joints, off) in out.joints2d.iter_mut().zip(&track.offsets) {
        for kp in joints.iter_mut() {
            kp.position[0] += off[0];
            kp.position[1] += off[1];
            if !kp.in_frame(h, w) {
                kp.state = KeypointState::HiddenOutOfFrame;
            }
        }
    }
    Ok(out)
}

/// Picks one superpixel uniformly and accepts it iff it overlaps the person
/// and leaves on average at least `min_uncovered` of the 14 joints uncovered.
pub fn pick_occluder(
    labels: &SuperpixelLabels,
    person: &PersonClip,
    min_uncovered: f64,
    rng: &mut impl Rng,
) -> Result<OccluderMask, ComposeError> {
    if labels.frames() != person.len() || labels.dims() != person.dims() {
        return Err(ComposeError::DimensionMismatch(format!(
            "labels {}x{:?} vs person {}x{:?}",
            labels.frames(),
            labels.dims(),
            person.len(),
            person.dims()
        )));
    }
    let label = rng.random_range(0..labels.cluster_count() as u32);
    let mask = mask_from_label(labels, label).map_err(|e| ComposeError::InvalidParameter(e.to_string()))?;
    let (h, w) = person.dims();
    let overlaps = (0..person.len()).any(|t| {
        let alpha = &person.frames[t];
        (0..h).any(|y| (0..w).any(|x| mask.get(t, y, x) && alpha.get(y, x, 3) > 0))
    });
    let uncovered: usize = person
        .joints2d
        .iter()
        .enumerate()
        .map(|(t, joints)| {
            joints
                .iter()
                .filter(|kp| !kp.rounded_pixel(h, w).is_some_and(|(y, x)| mask.get(t, y, x)))
                .count()
        })
        .sum();
    let average = uncovered as f64 / person.len() as f64;
    Ok(OccluderMask {
        mask,
        label,
        accepted: overlaps && average >= min_uncovered,
    })
}

/// Flags for a `T`-frame clip with `[start, start + len)` totally occluded.
pub fn occlusion_run(frames: usize, start: usize, len: usize) -> Vec<bool> {
    (0..frames).map(|t| t >= start && t < start + len).collect()
}

/// With `probability`, marks one contiguous run of length uniform in
/// `[1, max_len]` (clamped to `frames`) at a uniform valid start.
pub fn apply_total_occlusion(frames: usize, rng: &mut impl Rng, probability: f64, max_len: usize) -> Result<Vec<bool>, ComposeError> {
    if !(0.0..=1.0).contains(&probability) {
        return Err(ComposeError::InvalidProbability(probability));
    }
    if frames == 0 {
        return Err(ComposeError::TooFewFrames(0));
    }
    if max_len == 0 {
        return Err(ComposeError::InvalidParameter("max_len must be >= 1".into()));
    }
    let draw: f64 = rng.random();
    if draw >= probability {
        return Ok(vec![false; frames]);
    }
    let len = rng.random_range(1..=max_len).min(frames);
    let start = rng.random_range(0..=frames - len);
    Ok(occlusion_run(frames, start, len))
}

/// Per pixel: accepted occluder → background; else alpha ≥ threshold →
/// person; else background.
pub fn composite(bg: &[RgbFrame], person: &[RgbaFrame], occ: &OccluderMask, alpha_threshold: u8) -> Result<Vec<RgbFrame>, ComposeError> {
    if bg.len() != person.len() {
        return Err(ComposeError::LengthMismatch(bg.len(), person.len()));
    }
    if occ.mask.frames() != bg.len() {
        return Err(ComposeError::LengthMismatch(occ.mask.frames(), bg.len()));
    }
    bg.par_iter()
        .zip(person)
        .enumerate()
        .map(|(t, (b, p))| {
            if b.dims() != p.dims() || b.dims() != occ.mask.dims() || b.channels() != 3 || p.channels() != 4 {
                return Err(ComposeError::DimensionMismatch(format!(
                    "frame {t}: background {:?}, person {:?}, mask {:?}",
                    b.dims(),
                    p.dims(),
                    occ.mask.dims()
                )));
            }
            let mut out = b.clone();
            let (h, w) = b.dims();
            for y in 0..h {
                for x in 0..w {
                    let hidden = occ.accepted && occ.mask.get(t, y, x);
                    let src = p.pixel(y, x);
                    if !hidden && src[3] >= alpha_threshold {
                        out.pixel_mut(y, x).copy_from_slice(&src[..3]);
                    }
                }
            }
            Ok(out)
        })
        .collect()
}

/// Marks joints under an accepted occluder as `HiddenOccluder`.
pub fn mark_occluded_joints(joints: &mut [[Keypoint2D; EVAL_JOINT_COUNT]], occ: &OccluderMask) {
    for (t, frame) in joints.iter_mut().enumerate() {
        for kp in frame.iter_mut() {
            if kp.state.is_visible() && occ.covers(t, kp) {
                kp.state = KeypointState::HiddenOccluder;
            }
        }
    }
}

/// Crop transform for one frame's visible keypoints, if any.
pub fn crop_transform(keypoints: &[Keypoint2D], params: &CropParams) -> Option<SimilarityTransform> {
    let mut visible = keypoints.iter().filter(|k| k.state.is_visible()).map(|k| k.position);
    let first = visible.next()?;
    let (mut x0, mut x1, mut y0, mut y1) = (first[0], first[0], first[1], first[1]);
    for [x, y] in visible {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let cx = 0.5 * (x0 as f64 + x1 as f64);
    let cy = 0.5 * (y0 as f64 + y1 as f64);
    let height = (params.height_factor * (y1 as f64 - y0 as f64)).max(params.min_person_height);
    let scale = params.target_person_height / height;
    let half = params.size as f64 / 2.0;
    Some(SimilarityTransform {
        scale,
        translation: [half - scale * cx, half - scale * cy],
    })
}

/// Samples a `size × size` crop through `transform`, zero outside the frame.
pub fn crop_frame(frame: &RgbFrame, transform: &SimilarityTransform, size: usize) -> RgbFrame {
    resample_u8(frame, size, size, |x, y| {
        let [fx, fy] = transform.invert([x, y]);
        (fx, fy)
    })
}

/// Per-frame transforms; frames without visible keypoints reuse the previous
/// frame's, leading ones the first available.
pub fn crop_transforms(keypoints: &[FrameKeypoints], params: &CropParams) -> Result<Vec<SimilarityTransform>, ComposeError> {
    let own: Vec<Option<SimilarityTransform>> = keypoints.iter().map(|k| crop_transform(k, params)).collect();
    let first = own.iter().flatten().next().copied().ok_or(ComposeError::NoVisibleKeypoints)?;
    let mut last = first;
    Ok(own
        .into_iter()
        .map(|t| {
            if let Some(t) = t {
                last = t;
            }
            last
        })
        .collect())
}

pub fn map_keypoints(keypoints: &FrameKeypoints, transform: &SimilarityTransform) -> FrameKeypoints {
    let mut out = *keypoints;
    for kp in out.iter_mut() {
        let [x, y] = transform.apply([kp.position[0] as f64, kp.position[1] as f64]);
        kp.position = [x as f32, y as f32];
    }
    out
}

pub type CropOutput = (Vec<RgbFrame>, Vec<FrameKeypoints>, Vec<SimilarityTransform>);

/// Detection crops about the visible-keypoint box, scaled so the person is
/// `target_person_height` tall.
pub fn crop_clip(frames: &[RgbFrame], keypoints: &[FrameKeypoints], params: &CropParams) -> Result<CropOutput, ComposeError> {
    if frames.len() != keypoints.len() {
        return Err(ComposeError::LengthMismatch(frames.len(), keypoints.len()));
    }
    let transforms = crop_transforms(keypoints, params)?;
    let crops = frames.iter().zip(&transforms).map(|(f, t)| crop_frame(f, t, params.size)).collect();
    let mapped = keypoints.iter().zip(&transforms).map(|(k, t)| map_keypoints(k, t)).collect();
    Ok((crops, mapped, transforms))
}

pub fn paired_boxes(transforms: &[SimilarityTransform], size: usize) -> Result<Vec<BoxPair>, ComposeError> {
    if transforms.len() < 2 {
        return Err(ComposeError::TooFewFrames(transforms.len()));
    }
    Ok(transforms[..transforms.len() - 1]
        .iter()
        .enumerate()
        .map(|(t, tr)| BoxPair {
            rect: tr.window(size),
            transform: *tr,
            frame_a: t,
            frame_b: t + 1,
        })
        .collect())
}

/// Person-level flow for each box pair, on the same crop of both frames.
pub fn person_flows(frames: &[RgbFrame], pairs: &[BoxPair], size: usize, params: &TvL1Params) -> Result<Vec<FlowField>, FlowError> {
    pairs
        .par_iter()
        .map(|p| {
            let a = luma::<f32>(&crop_frame(&frames[p.frame_a], &p.transform, size));
            let b = luma::<f32>(&crop_frame(&frames[p.frame_b], &p.transform, size));
            tvl1_flow(&a, &b, params)
        })
        .collect()
}

/// Index into a clip of `len` frames, looping by reflection: 0 1 … n−1 n−2 … 1 0 1 …
pub fn reflect_index(i: usize, len: usize) -> usize {
    if len <= 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let r = i % period;
    if r < len {
        r
    } else {
        period - r
    }
}

/// Background frames chosen for a clip and how they map onto the canvas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSample {
    /// Source frame index per clip frame.
    pub indices: Vec<usize>,
    /// Resized source size `(height, width)` before cropping.
    pub resized: (usize, usize),
    /// Top-left of the canvas window in the resized frame, `(y, x)`.
    pub offset: (usize, usize),
}

/// Draws the source frames (`window_rng`) and crop (`crop_rng`) for one clip.
pub fn sample_background(
    bg: &BackgroundClip,
    frames: usize,
    canvas: (usize, usize),
    static_background: bool,
    window_rng: &mut impl Rng,
    crop_rng: &mut impl Rng,
) -> BackgroundSample {
    let n = bg.len();
    let start = window_rng.random_range(0..=n.saturating_sub(frames));
    let indices = if static_background {
        vec![start; frames]
    } else {
        (0..frames).map(|t| if n >= frames { start + t } else { reflect_index(t, n) }).collect()
    };
    let (h, w) = bg.dims();
    let s = (canvas.0 as f64 / h as f64).max(canvas.1 as f64 / w as f64);
    let resized = (
        ((h as f64 * s).round() as usize).max(canvas.0),
        ((w as f64 * s).round() as usize).max(canvas.1),
    );
    let oy = crop_rng.random_range(0..=resized.0 - canvas.0);
    let ox = crop_rng.random_range(0..=resized.1 - canvas.1);
    BackgroundSample {
        indices,
        resized,
        offset: (oy, ox),
    }
}

/// Applies a background sample: resize to cover the canvas, crop.
pub fn render_background(bg: &BackgroundClip, sample: &BackgroundSample, canvas: (usize, usize)) -> BackgroundClip {
    let mut cache: BTreeMap<usize, RgbFrame> = BTreeMap::new();
    for &i in &sample.indices {
        cache.entry(i).or_insert_with(|| {
            let resized = resize_bilinear(&bg.frames[i], sample.resized.0, sample.resized.1);
            crop_window(&resized, sample.offset.0, sample.offset.1, canvas.0, canvas.1)
        });
    }
    BackgroundClip {
        frames: sample.indices.iter().map(|i| cache[i].clone()).collect(),
        fps: bg.fps,
        source_id: bg.source_id.clone(),
    }
}

/// Per-pair median background flow from the solver.
pub fn background_medians(frames: &[RgbFrame], params: &TvL1Params) -> Result<Vec<(f32, f32)>, FlowError> {
    (0..frames.len().saturating_sub(1))
        .into_par_iter()
        .map(|t| {
            if frames[t] == frames[t + 1] {
                log::debug!("background frames {t} and {} identical; zero flow", t + 1);
                return Ok((0.0, 0.0));
            }
            let flow = tvl1_flow(&luma::<f32>(&frames[t]), &luma::<f32>(&frames[t + 1]), params)?;
            median_flow(&flow, None)
        })
        .collect()
}

/// Per-pair median flow from externally computed `NNNNNN.flo` files (source
/// frame i → i+1), restricted to the canvas window and rescaled to canvas
/// pixels. Reflected pairs use the negated forward flow.
pub fn imported_medians(dir: &Path, bg: &BackgroundClip, sample: &BackgroundSample, canvas: (usize, usize)) -> Result<Vec<(f32, f32)>, FlowError> {
    let (h, w) = bg.dims();
    let sy = sample.resized.0 as f64 / h as f64;
    let sx = sample.resized.1 as f64 / w as f64;
    let region = Grid::from_fn(h, w, 1, |y, x, _| {
        let ry = (y as f64 + 0.5) * sy;
        let rx = (x as f64 + 0.5) * sx;
        ry >= sample.offset.0 as f64 && ry < (sample.offset.0 + canvas.0) as f64 && rx >= sample.offset.1 as f64 && rx < (sample.offset.1 + canvas.1) as f64
    });
    let mut cache: BTreeMap<usize, (f32, f32)> = BTreeMap::new();
    let mut median_of = |i: usize| -> Result<(f32, f32), FlowError> {
        if let Some(m) = cache.get(&i) {
            return Ok(*m);
        }
        let flow = read_flo(dir.join(format!("{}.flo", io::frame_stem(i))))?;
        if flow.dims() != (h, w) {
            return Err(FlowError::DimensionMismatch(flow.height(), flow.width(), h, w));
        }
        let (u, v) = median_flow(&flow, Some(&region))?;
        let m = ((u as f64 * sx) as f32, (v as f64 * sy) as f32);
        cache.insert(i, m);
        Ok(m)
    };
    sample
        .indices
        .windows(2)
        .map(|p| match (p[0], p[1]) {
            (a, b) if b == a + 1 => median_of(a),
            (a, b) if a == b + 1 => median_of(b).map(|(u, v)| (-u, -v)),
            _ => Ok((0.0, 0.0)),
        })
        .collect()
}

/// The occluder stage's record for one clip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccluderRecord {
    pub slic: SlicParams,
    pub label: u32,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompositeClip {
    pub clip_seed: u64,
    /// Cropped composited frames.
    pub frames: Vec<RgbFrame>,
    pub total_occluded: Vec<bool>,
    /// Crop-space keypoints with randomized states.
    pub keypoints: Vec<FrameKeypoints>,
    pub crop_transforms: Vec<SimilarityTransform>,
    pub joints3d: Vec<Pose3D>,
    pub flow_pairs: Vec<BoxPair>,
    pub person_flow: Vec<FlowField>,
    pub heatmaps: HeatmapStack<f32>,
    pub camera_track: CameraTrack,
    pub background: BackgroundSample,
    pub person_start: usize,
    pub occluder: Option<OccluderRecord>,
}

impl CompositeClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Network input for frame `t`: flow ÷ 20 with magnitude, 12 heatmaps and
    /// the total-occlusion indicator. Totally occluded frames are zero except
    /// the indicator; the last frame has no flow.
    pub fn network_input(&self, t: usize) -> Grid<f32> {
        let size = self.frames[t].height();
        let mut out = Grid::filled(size, size, INPUT_CHANNELS, 0.0f32);
        if self.total_occluded[t] {
            for y in 0..size {
                for x in 0..size {
                    out.set(y, x, INPUT_CHANNELS - 1, 1.0);
                }
            }
            return out;
        }
        let flow = self.person_flow.get(t).map(flow_to_net_input);
        let heat = &self.heatmaps.maps[t];
        for y in 0..size {
            for x in 0..size {
                let px = out.pixel_mut(y, x);
                if let Some(f) = &flow {
                    px[..3].copy_from_slice(f.pixel(y, x));
                }
                px[3..3 + INPUT_KEYPOINT_COUNT].copy_from_slice(heat.pixel(y, x));
            }
        }
        out
    }
}

/// Builds a clip from loaded inputs. All randomness comes from `clip_seed`.
pub fn compose_clip(
    person: &PersonClip,
    background: &BackgroundClip,
    clip_length: usize,
    clip_seed: u64,
    params: &ComposeParams,
    imported_flow: Option<&Path>,
) -> Result<CompositeClip, PipelineError> {
    let stage = |name: &'static str| move |e: ComposeError| PipelineError::new(name, e);
    params.validate().map_err(stage("config"))?;
    if clip_length < 2 {
        return Err(PipelineError::new("config", ComposeError::TooFewFrames(clip_length)));
    }
    person.check().map_err(|m| PipelineError::new("load_person", ComposeError::InvalidParameter(m)))?;
    background.check().map_err(|m| PipelineError::new("load_background", ComposeError::InvalidParameter(m)))?;
    if person.dims() != params.canvas {
        return Err(PipelineError::new(
            "load_person",
            ComposeError::DimensionMismatch(format!("person {:?} vs canvas {:?}", person.dims(), params.canvas)),
        ));
    }
    if person.len() < clip_length {
        return Err(PipelineError::new("sample_window", ComposeError::TooFewFrames(person.len())));
    }
    let ablations = &params.ablations;

    let mut window_rng = stage_rng(clip_seed, Substream::ClipWindow);
    let mut crop_rng = stage_rng(clip_seed, Substream::BackgroundCrop);
    let person_start = window_rng.random_range(0..=person.len() - clip_length);
    let bg_sample = sample_background(background, clip_length, params.canvas, ablations.static_background, &mut window_rng, &mut crop_rng);
    let bg = render_background(background, &bg_sample, params.canvas);
    let window = |r: std::ops::Range<usize>| PersonClip {
        frames: person.frames[r.clone()].to_vec(),
        depth: person.depth[r.clone()].to_vec(),
        joints2d: person.joints2d[r.clone()].to_vec(),
        joints3d: person.joints3d[r].to_vec(),
        fps: person.fps,
    };
    let person = window(person_start..person_start + clip_length);

    let center = clip_length / 2;
    let track = if ablations.no_camera_tracking || ablations.static_background {
        CameraTrack::zeros(clip_length, center)
    } else {
        let medians = match imported_flow {
            Some(dir) => imported_medians(dir, background, &bg_sample, params.canvas),
            None => background_medians(&bg.frames, &params.background_flow),
        }
        .map_err(|e| PipelineError::new("background_flow", e))?;
        integrate_camera(&medians, center).map_err(|e| PipelineError::new("background_flow", e))?
    };

    let mut person = translate_person(&person, &track).map_err(stage("translate_person"))?;

    let (h, w) = params.canvas;
    let (occ, occluder) = if ablations.no_occluders {
        (OccluderMask::none(clip_length, h, w), None)
    } else {
        let mut rng = stage_rng(clip_seed, Substream::Occluder);
        let slic = SlicParams {
            coord_mode: params.slic_coord_mode,
            window: params.slic_window,
            ..sample_slic_params(&mut rng)
        };
        let labels = slic_video(&bg, &track, &slic).map_err(|e| PipelineError::new("occluder", e))?;
        let occ = pick_occluder(&labels, &person, params.min_uncovered_joints, &mut rng).map_err(stage("occluder"))?;
        log::debug!(
            "clip {clip_seed:#018x}: superpixel {} of {} {}",
            occ.label,
            labels.cluster_count(),
            if occ.accepted { "accepted" } else { "rejected" }
        );
        let record = OccluderRecord {
            slic,
            label: occ.label,
            accepted: occ.accepted,
        };
        (occ, Some(record))
    };

    let frames = composite(&bg.frames, &person.frames, &occ, params.alpha_threshold).map_err(stage("composite"))?;
    mark_occluded_joints(&mut person.joints2d, &occ);

    let total_occluded = if ablations.no_total_occlusions {
        vec![false; clip_length]
    } else {
        let mut rng = stage_rng(clip_seed, Substream::TotalOcclusion);
        apply_total_occlusion(clip_length, &mut rng, params.total_occlusion_prob, params.max_total_occlusion_len)
            .map_err(stage("total_occlusion"))?
    };

    let input_to_eval = params.schema.input_to_eval();
    let canvas_kps: Vec<FrameKeypoints> = person
        .joints2d
        .iter()
        .map(|j| std::array::from_fn(|i| j[input_to_eval[i]]))
        .collect();
    let (crops, _, transforms) = crop_clip(&frames, &canvas_kps, &params.crop).map_err(stage("crop"))?;
    let pairs = paired_boxes(&transforms, params.crop.size).map_err(stage("paired_boxes"))?;
    let person_flow = person_flows(&frames, &pairs, params.crop.size, &params.person_flow).map_err(|e| PipelineError::new("person_flow", e))?;

    let joint_depth: Vec<[f32; INPUT_KEYPOINT_COUNT]> = person
        .joints3d
        .iter()
        .map(|p| std::array::from_fn(|i| p.joints[input_to_eval[i]][2]))
        .collect();
    let mut kp_rng = stage_rng(clip_seed, Substream::Keypoints);
    let randomized = visibility_pass(
        &VisibilityInputs {
            keypoints: &canvas_kps,
            joint_depth: &joint_depth,
            surface_depth: &person.depth,
            occluder: occ.accepted.then_some(&occ.mask),
            total_occluded: &total_occluded,
            canvas: params.canvas,
        },
        &params.schema,
        &params.visibility,
        &mut kp_rng,
    );
    let keypoints: Vec<FrameKeypoints> = randomized.iter().zip(&transforms).map(|(k, t)| map_keypoints(k, t)).collect();
    let heatmaps = rasterize_heatmaps(&keypoints, params.crop.size, params.heatmap_sigma as f32);

    Ok(CompositeClip {
        clip_seed,
        frames: crops,
        total_occluded,
        keypoints,
        crop_transforms: transforms,
        joints3d: person.joints3d,
        flow_pairs: pairs,
        person_flow,
        heatmaps,
        camera_track: track,
        background: bg_sample,
        person_start,
        occluder,
    })
}

/// Loads the manifest's clips and runs [`compose_clip`]. A manifest without
/// a seed uses `default_seed`.
pub fn build_training_clip(manifest: &ClipManifest, params: &ComposeParams, default_seed: u64) -> Result<CompositeClip, PipelineError> {
    manifest
        .validate()
        .map_err(|m| PipelineError::new("manifest", ComposeError::InvalidParameter(m)))?;
    let person = io::load_person_clip(&manifest.person_path).map_err(|e| PipelineError::new("load_person", e))?;
    let background = io::load_background_clip(&manifest.background_path).map_err(|e| PipelineError::new("load_background", e))?;
    let seed = derive_clip_seed(manifest.master_seed.unwrap_or(default_seed), manifest.clip_index);
    let flow_dir = manifest.background_flow_path.as_deref().map(Path::new);
    compose_clip(&person, &background, manifest.clip_length, seed, params, flow_dir)
}

/// Per-frame sidecar record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub keypoints: Vec<Keypoint2D>,
    pub crop_transform: SimilarityTransform,
    pub joints3d: Pose3D,
    pub total_occluded: bool,
}

/// Clip-level sidecar record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipSummary {
    pub clip_seed: u64,
    pub frames: usize,
    pub person_start: usize,
    pub background: BackgroundSample,
    pub camera_track: CameraTrack,
    pub occluder: Option<OccluderRecord>,
    pub box_pairs: Vec<BoxPair>,
    pub state_counts: BTreeMap<String, usize>,
}

pub fn state_counts(keypoints: &[FrameKeypoints]) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> = KeypointState::ALL.iter().map(|s| (format!("{s:?}"), 0)).collect();
    for kp in keypoints.iter().flatten() {
        *counts.entry(format!("{:?}", kp.state)).or_default() += 1;
    }
    counts
}

/// Writes `frames/`, `flow/`, `input/`, `keypoints.json`,
/// `total_occlusion.json` and `summary.json` under `dir`.
pub fn write_composite_clip(clip: &CompositeClip, dir: &Path) -> Result<(), LoadError> {
    for sub in ["frames", "flow", "input"] {
        io::create_dir(&dir.join(sub))?;
    }
    for (t, frame) in clip.frames.iter().enumerate() {
        io::write_rgb_png(&dir.join("frames").join(io::frame_name(t)), frame)?;
        let input = clip.network_input(t);
        let (h, w) = input.dims();
        let path = dir.join("input").join(format!("{}.mhtk", io::frame_stem(t)));
        crate::tensor::write_tensor(&path, [h as u32, w as u32, INPUT_CHANNELS as u32], input.data())?;
    }
    for (t, flow) in clip.person_flow.iter().enumerate() {
        let path = dir.join("flow").join(format!("{}.flo", io::frame_stem(t)));
        crate::flow::write_flo(flow, &path).map_err(|e| LoadError::Invalid {
            path: path.clone(),
            message: e.to_string(),
        })?;
    }
    let records: Vec<FrameRecord> = (0..clip.len())
        .map(|t| FrameRecord {
            frame: t,
            keypoints: clip.keypoints[t].to_vec(),
            crop_transform: clip.crop_transforms[t],
            joints3d: clip.joints3d[t],
            total_occluded: clip.total_occluded[t],
        })
        .collect();
    io::write_json(&dir.join("keypoints.json"), &records)?;
    io::write_json(&dir.join("total_occlusion.json"), &clip.total_occluded)?;
    let summary = ClipSummary {
        clip_seed: clip.clip_seed,
        frames: clip.len(),
        person_start: clip.person_start,
        background: clip.background.clone(),
        camera_track: clip.camera_track.clone(),
        occluder: clip.occluder.clone(),
        box_pairs: clip.flow_pairs.clone(),
        state_counts: state_counts(&clip.keypoints),
    };
    io::write_json(&dir.join("summary.json"), &summary)
}
