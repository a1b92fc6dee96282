//! Motion-compensated SLIC over a whole video volume.
//!
//! Each cell is described by its color (RGB in `[0, 1]`) and its position
//! after subtracting the integrated camera offset of its frame. Clusters live
//! in the full volume, so one label is one color blob tracked through time.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LoadError, SlicError};
use crate::flow::Track;
use crate::grid::RgbFrame;
use crate::scalar::Real;
use crate::types::BackgroundClip;

/// Frame side at which `coord_scale` is applied to raw pixel coordinates.
pub const REFERENCE_SIDE: f64 = 320.0;
pub const DEFAULT_COMPACTNESS: f64 = 0.01;
pub const DEFAULT_SLIC_ITERATIONS: usize = 10;
pub const CLUSTER_RANGE: (usize, usize) = (10, 30);
pub const COORD_SCALE_RANGE: (f64, f64) = (4e-4, 6e-4);

/// How `coord_scale` turns pixel coordinates into features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoordMode {
    /// `coord_scale · 320 / max(H, W)` per pixel: raw weighting at 240 × 320,
    /// resolution independent elsewhere.
    #[default]
    Normalized,
    /// `coord_scale` per pixel at any resolution.
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlicParams {
    pub k: usize,
    pub compactness: f64,
    pub coord_scale: f64,
    pub iterations: usize,
    #[serde(default)]
    pub coord_mode: CoordMode,
    /// Restrict the assignment search to centers within this many pixels
    /// (Chebyshev, motion compensated). `None` searches all centers.
    #[serde(default)]
    pub window: Option<f64>,
}

impl SlicParams {
    pub fn new(k: usize, coord_scale: f64) -> Self {
        Self {
            k,
            compactness: DEFAULT_COMPACTNESS,
            coord_scale,
            iterations: DEFAULT_SLIC_ITERATIONS,
            coord_mode: CoordMode::default(),
            window: None,
        }
    }

    pub fn validate(&self) -> Result<(), SlicError> {
        if self.k == 0 {
            return Err(SlicError::InvalidParams("k must be >= 1".into()));
        }
        if !(self.compactness > 0.0 && self.compactness.is_finite()) {
            return Err(SlicError::InvalidParams("compactness must be positive".into()));
        }
        if !(self.coord_scale > 0.0 && self.coord_scale.is_finite()) {
            return Err(SlicError::InvalidParams("coord_scale must be positive".into()));
        }
        if self.window.is_some_and(|w| !(w >= 0.0)) {
            return Err(SlicError::InvalidParams("window must be non-negative".into()));
        }
        Ok(())
    }
}

/// Draws per-clip parameters: `k` in `[10, 30]`, `coord_scale` in `[4e-4, 6e-4]`.
pub fn sample_slic_params(rng: &mut impl Rng) -> SlicParams {
    let k = rng.random_range(CLUSTER_RANGE.0..=CLUSTER_RANGE.1);
    let coord_scale = rng.random_range(COORD_SCALE_RANGE.0..=COORD_SCALE_RANGE.1);
    SlicParams::new(k, coord_scale)
}

/// One label per cell of a `T × H × W` volume.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuperpixelLabels {
    frames: usize,
    height: usize,
    width: usize,
    labels: Vec<u32>,
    cluster_count: usize,
}

impl SuperpixelLabels {
    /// Panics if the buffer does not fit the dimensions.
    pub fn from_raw(frames: usize, height: usize, width: usize, labels: Vec<u32>, cluster_count: usize) -> Self {
        assert_eq!(labels.len(), frames * height * width);
        Self {
            frames,
            height,
            width,
            labels,
            cluster_count,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_count
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, t: usize, y: usize, x: usize) -> u32 {
        self.labels[(t * self.height + y) * self.width + x]
    }

    pub fn frame(&self, t: usize) -> &[u32] {
        let n = self.height * self.width;
        &self.labels[t * n..(t + 1) * n]
    }

    /// True when every cell holds a label below `cluster_count` and every label occurs.
    pub fn is_partition(&self) -> bool {
        let mut seen = vec![false; self.cluster_count];
        for &l in &self.labels {
            match seen.get_mut(l as usize) {
                Some(s) => *s = true,
                None => return false,
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Boolean `T × H × W` volume.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VideoMask {
    frames: usize,
    height: usize,
    width: usize,
    cells: Vec<bool>,
}

impl VideoMask {
    pub fn empty(frames: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            height,
            width,
            cells: vec![false; frames * height * width],
        }
    }

    pub fn from_fn(frames: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut cells = Vec::with_capacity(frames * height * width);
        for t in 0..frames {
            for y in 0..height {
                for x in 0..width {
                    cells.push(f(t, y, x));
                }
            }
        }
        Self {
            frames,
            height,
            width,
            cells,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, t: usize, y: usize, x: usize) -> bool {
        self.cells[(t * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, t: usize, y: usize, x: usize, value: bool) {
        self.cells[(t * self.height + y) * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn frame_count(&self, t: usize) -> usize {
        let n = self.height * self.width;
        self.cells[t * n..(t + 1) * n].iter().filter(|&&c| c).count()
    }
}

/// Cells carrying `label`.
pub fn mask_from_label(labels: &SuperpixelLabels, label: u32) -> Result<VideoMask, SlicError> {
    if label as usize >= labels.cluster_count {
        return Err(SlicError::LabelOutOfRange {
            label,
            count: labels.cluster_count,
        });
    }
    Ok(VideoMask {
        frames: labels.frames,
        height: labels.height,
        width: labels.width,
        cells: labels.labels.iter().map(|&l| l == label).collect(),
    })
}

pub fn slic_video<T: Real>(bg: &BackgroundClip, track: &Track<T>, params: &SlicParams) -> Result<SuperpixelLabels, SlicError> {
    slic_frames(&bg.frames, track, params)
}

#[derive(Clone, Copy, Debug)]
struct Center {
    color: [f64; 3],
    pos: [f64; 2],
}

/// SLIC on a frame sequence with per-frame camera offsets.
pub fn slic_frames<T: Real>(frames: &[RgbFrame], track: &Track<T>, params: &SlicParams) -> Result<SuperpixelLabels, SlicError> {
    params.validate()?;
    let t_len = frames.len();
    if t_len == 0 {
        return Err(SlicError::Empty);
    }
    if track.len() != t_len {
        return Err(SlicError::TrackLength {
            track: track.len(),
            frames: t_len,
        });
    }
    let (h, w) = frames[0].dims();
    if frames.iter().any(|f| f.dims() != (h, w) || f.channels() != 3) || h == 0 || w == 0 {
        return Err(SlicError::InvalidParams("frames must share a non-empty H x W x 3 shape".into()));
    }
    let cells = t_len * h * w;
    if params.k > cells {
        return Err(SlicError::TooManyClusters { k: params.k, cells });
    }

    let offsets: Vec<[f64; 2]> = track
        .offsets
        .iter()
        .map(|o| [o[0].to_f64_lossy(), o[1].to_f64_lossy()])
        .collect();
    let coord_gain = match params.coord_mode {
        CoordMode::Normalized => params.coord_scale * REFERENCE_SIDE / h.max(w) as f64,
        CoordMode::Raw => params.coord_scale,
    };
    let step = ((h * w) as f64 / params.k as f64).sqrt();
    let spatial_weight = coord_gain * coord_gain + (params.compactness / step).powi(2);

    let center_frame = track.center_index.min(t_len - 1);
    let mut centers: Vec<Center> = seed_positions(h, w, params.k)
        .into_iter()
        .map(|(y, x)| {
            let p = frames[center_frame].pixel(y, x);
            Center {
                color: [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0],
                pos: [
                    x as f64 - offsets[center_frame][0],
                    y as f64 - offsets[center_frame][1],
                ],
            }
        })
        .collect();

    let mut assign = vec![0u32; cells];
    for iter in 0..params.iterations.max(1) {
        assign_cells(frames, &offsets, &centers, spatial_weight, params.window, &mut assign, h, w);
        if iter + 1 == params.iterations.max(1) {
            break;
        }
        update_centers(frames, &offsets, &assign, &mut centers, h, w);
    }

    // Compact used cluster ids (in ascending id order) into 0..count.
    let mut remap = vec![u32::MAX; centers.len()];
    for &a in &assign {
        remap[a as usize] = 0;
    }
    let mut count = 0u32;
    for r in remap.iter_mut().filter(|r| **r == 0) {
        *r = count;
        count += 1;
    }
    let labels = assign.into_iter().map(|a| remap[a as usize]).collect();
    Ok(SuperpixelLabels {
        frames: t_len,
        height: h,
        width: w,
        labels,
        cluster_count: count as usize,
    })
}

/// Exactly `k` seed pixels on a regular grid: rows of near-equal length.
fn seed_positions(h: usize, w: usize, k: usize) -> Vec<(usize, usize)> {
    let mut rows = ((k as f64 * h as f64 / w as f64).sqrt().round() as usize).clamp(1, h.min(k));
    while k.div_ceil(rows) > w {
        rows += 1;
    }
    let mut out = Vec::with_capacity(k);
    for r in 0..rows {
        let in_row = k / rows + usize::from(r < k % rows);
        let y = (((r as f64 + 0.5) * h as f64 / rows as f64) as usize).min(h - 1);
        for c in 0..in_row {
            let x = (((c as f64 + 0.5) * w as f64 / in_row as f64) as usize).min(w - 1);
            out.push((y, x));
        }
    }
    out
}

#[inline]
fn cell_features(frames: &[RgbFrame], offsets: &[[f64; 2]], t: usize, y: usize, x: usize) -> ([f64; 3], [f64; 2]) {
    let p = frames[t].pixel(y, x);
    (
        [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0],
        [x as f64 - offsets[t][0], y as f64 - offsets[t][1]],
    )
}

#[inline]
fn distance(color: &[f64; 3], pos: &[f64; 2], c: &Center, spatial_weight: f64) -> f64 {
    let dc = (color[0] - c.color[0]).powi(2) + (color[1] - c.color[1]).powi(2) + (color[2] - c.color[2]).powi(2);
    let ds = (pos[0] - c.pos[0]).powi(2) + (pos[1] - c.pos[1]).powi(2);
    dc + spatial_weight * ds
}

#[allow(clippy::too_many_arguments)]
fn assign_cells(
    frames: &[RgbFrame],
    offsets: &[[f64; 2]],
    centers: &[Center],
    spatial_weight: f64,
    window: Option<f64>,
    assign: &mut [u32],
    h: usize,
    w: usize,
) {
    assign.par_chunks_mut(w).enumerate().for_each(|(row, out)| {
        let t = row / h;
        let y = row % h;
        for (x, slot) in out.iter_mut().enumerate() {
            let (color, pos) = cell_features(frames, offsets, t, y, x);
            let in_window = |c: &Center| {
                window.is_none_or(|r| (pos[0] - c.pos[0]).abs() <= r && (pos[1] - c.pos[1]).abs() <= r)
            };
            let mut best = (f64::INFINITY, u32::MAX);
            for (i, c) in centers.iter().enumerate() {
                if !in_window(c) {
                    continue;
                }
                let d = distance(&color, &pos, c, spatial_weight);
                if d < best.0 {
                    best = (d, i as u32);
                }
            }
            if best.1 == u32::MAX {
                for (i, c) in centers.iter().enumerate() {
                    let d = distance(&color, &pos, c, spatial_weight);
                    if d < best.0 {
                        best = (d, i as u32);
                    }
                }
            }
            *slot = best.1;
        }
    });
}

fn update_centers(frames: &[RgbFrame], offsets: &[[f64; 2]], assign: &[u32], centers: &mut [Center], h: usize, w: usize) {
    let mut sums = vec![[0.0f64; 6]; centers.len()];
    let mut i = 0;
    for t in 0..frames.len() {
        for y in 0..h {
            for x in 0..w {
                let (color, pos) = cell_features(frames, offsets, t, y, x);
                let s = &mut sums[assign[i] as usize];
                s[0] += color[0];
                s[1] += color[1];
                s[2] += color[2];
                s[3] += pos[0];
                s[4] += pos[1];
                s[5] += 1.0;
                i += 1;
            }
        }
    }
    for (c, s) in centers.iter_mut().zip(&sums) {
        if s[5] > 0.0 {
            c.color = [s[0] / s[5], s[1] / s[5], s[2] / s[5]];
            c.pos = [s[3] / s[5], s[4] / s[5]];
        }
    }
}

#[derive(Serialize, Deserialize)]
struct LabelSidecar {
    cluster_count: usize,
    frames: usize,
    height: usize,
    width: usize,
}

/// Writes `NNNNNN.png` 16-bit grayscale label images plus `labels.json`.
pub fn write_labels(labels: &SuperpixelLabels, dir: &Path) -> Result<(), LoadError> {
    std::fs::create_dir_all(dir).map_err(|source| LoadError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    if labels.cluster_count > u16::MAX as usize + 1 {
        return Err(LoadError::Invalid {
            path: dir.to_path_buf(),
            message: format!("{} clusters do not fit 16-bit images", labels.cluster_count),
        });
    }
    for t in 0..labels.frames {
        let path = dir.join(format!("{t:06}.png"));
        let data: Vec<u16> = labels.frame(t).iter().map(|&l| l as u16).collect();
        crate::io::write_gray16(&path, labels.height, labels.width, &data)?;
    }
    let sidecar = LabelSidecar {
        cluster_count: labels.cluster_count,
        frames: labels.frames,
        height: labels.height,
        width: labels.width,
    };
    crate::io::write_json(&dir.join("labels.json"), &sidecar)
}

pub fn read_labels(dir: &Path) -> Result<SuperpixelLabels, LoadError> {
    let sidecar: LabelSidecar = crate::io::read_json(&dir.join("labels.json"))?;
    let mut labels = Vec::with_capacity(sidecar.frames * sidecar.height * sidecar.width);
    for t in 0..sidecar.frames {
        let path = dir.join(format!("{t:06}.png"));
        let (h, w, data) = crate::io::read_gray16(&path)?;
        if (h, w) != (sidecar.height, sidecar.width) {
            return Err(LoadError::Dimension {
                path,
                expected: format!("{}x{}", sidecar.height, sidecar.width),
                found: format!("{h}x{w}"),
            });
        }
        labels.extend(data.into_iter().map(u32::from));
    }
    let out = SuperpixelLabels::from_raw(sidecar.frames, sidecar.height, sidecar.width, labels, sidecar.cluster_count);
    if !out.is_partition() {
        return Err(LoadError::Invalid {
            path: dir.to_path_buf(),
            message: "labels do not form a partition of cluster_count".into(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::seed::{stage_rng, Substream};

    fn zero_track(t: usize) -> Track<f32> {
        Track::zeros(t, t / 2)
    }

    #[test]
    fn seeds_are_exactly_k_and_distinct() {
        for &(h, w) in &[(240, 320), (4, 8), (3, 3), (1, 50)] {
            for k in 1..=(h * w).min(40) {
                let s = seed_positions(h, w, k);
                assert_eq!(s.len(), k, "{h}x{w} k={k}");
                let mut d = s.clone();
                d.sort();
                d.dedup();
                assert_eq!(d.len(), k, "{h}x{w} k={k}");
            }
        }
    }

    #[test]
    fn uniform_video_single_cluster() {
        let frames = vec![Grid::filled(6, 8, 3, 77u8); 3];
        let labels = slic_frames(&frames, &zero_track(3), &SlicParams::new(1, 5e-4)).unwrap();
        assert_eq!(labels.cluster_count(), 1);
        assert!(labels.labels().iter().all(|&l| l == 0));
        let m = mask_from_label(&labels, 0).unwrap();
        assert_eq!(m.count(), 3 * 6 * 8);
    }

    #[test]
    fn errors() {
        let frames = vec![Grid::filled(2, 2, 3, 0u8); 2];
        assert_eq!(
            slic_frames(&frames, &zero_track(3), &SlicParams::new(1, 5e-4)),
            Err(SlicError::TrackLength { track: 3, frames: 2 })
        );
        assert_eq!(
            slic_frames(&frames, &zero_track(2), &SlicParams::new(9, 5e-4)),
            Err(SlicError::TooManyClusters { k: 9, cells: 8 })
        );
        let labels = slic_frames(&frames, &zero_track(2), &SlicParams::new(1, 5e-4)).unwrap();
        assert!(matches!(mask_from_label(&labels, 1), Err(SlicError::LabelOutOfRange { .. })));
    }

    #[test]
    fn mask_cardinalities_sum_to_volume() {
        let frames: Vec<RgbFrame> = (0..3)
            .map(|t| Grid::from_fn(10, 12, 3, |y, x, c| ((x * 20 + y * 7 + t * 3 + c * 50) % 256) as u8))
            .collect();
        let labels = slic_frames(&frames, &zero_track(3), &SlicParams::new(6, 5e-4)).unwrap();
        assert!(labels.is_partition());
        let total: usize = (0..labels.cluster_count() as u32)
            .map(|l| mask_from_label(&labels, l).unwrap().count())
            .sum();
        assert_eq!(total, 3 * 10 * 12);
    }

    #[test]
    fn sampled_params_in_range_and_reproducible() {
        let mut rng = stage_rng(11, Substream::Occluder);
        for _ in 0..10_000 {
            let p = sample_slic_params(&mut rng);
            assert!((10..=30).contains(&p.k));
            assert!((4e-4..=6e-4).contains(&p.coord_scale));
            assert_eq!(p.compactness, 0.01);
            assert_eq!(p.iterations, 10);
        }
        let a = sample_slic_params(&mut stage_rng(5, Substream::Occluder));
        let b = sample_slic_params(&mut stage_rng(5, Substream::Occluder));
        assert_eq!(a, b);
    }

    #[test]
    fn wide_window_matches_global_search() {
        let frames: Vec<RgbFrame> = (0..4)
            .map(|t| Grid::from_fn(12, 16, 3, |y, x, c| (((x + t) * 13 + y * 29 + c * 71) % 256) as u8))
            .collect();
        let track = Track {
            offsets: (0..4).map(|t| [t as f32 - 2.0, 0.5 * t as f32]).collect(),
            center_index: 2,
        };
        let global = SlicParams::new(7, 5e-4);
        let windowed = SlicParams {
            window: Some(1000.0),
            ..global.clone()
        };
        assert_eq!(
            slic_frames(&frames, &track, &global).unwrap(),
            slic_frames(&frames, &track, &windowed).unwrap()
        );
    }

    #[test]
    fn label_images_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<RgbFrame> = (0..2)
            .map(|t| Grid::from_fn(5, 7, 3, |y, x, c| ((x * 37 + y * 11 + t + c * 90) % 256) as u8))
            .collect();
        let labels = slic_frames(&frames, &zero_track(2), &SlicParams::new(4, 5e-4)).unwrap();
        write_labels(&labels, dir.path()).unwrap();
        assert_eq!(read_labels(dir.path()).unwrap(), labels);
    }
}
