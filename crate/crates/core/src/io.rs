//! On-disk clip layouts.
//!
//! Person clip directory:
//!
//! ```text
//! clip.json          {"fps": 30.0}
//! rgba/000000.png    8-bit RGBA frames, zero-padded index
//! depth/000000.png   16-bit grayscale depth in millimeters (0 = no surface)
//! joints.jsonl       one record per frame: {"frame", "joints2d", "joints3d"[, "states"]}
//! ```
//!
//! Background clip directory:
//!
//! ```text
//! clip.json          {"fps": 30.0, "source_id": "..."}
//! frames/000000.png  8-bit RGB frames
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb, Rgba};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::LoadError;
use crate::grid::{DepthMap, Grid, RgbFrame, RgbaFrame};
use crate::schema::EVAL_JOINT_COUNT;
use crate::types::{BackgroundClip, Keypoint2D, KeypointState, PersonClip, Pose};
use crate::Pose3D;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LoadError + '_ {
    move |source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            LoadError::Missing {
                path: path.to_path_buf(),
            }
        } else {
            LoadError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

fn image_err(path: &Path, e: impl std::fmt::Display) -> LoadError {
    LoadError::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn create_dir(path: &Path) -> Result<(), LoadError> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), LoadError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| LoadError::Invalid {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, LoadError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| LoadError::Invalid {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads one JSON value per non-empty line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, LoadError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| LoadError::Invalid {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), LoadError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| LoadError::Invalid {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_rgb_png(path: &Path, frame: &RgbFrame) -> Result<(), LoadError> {
    assert_eq!(frame.channels(), 3);
    let (h, w) = frame.dims();
    let img: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(w as u32, h as u32, frame.data().to_vec()).expect("buffer size");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e))
}

pub fn write_rgba_png(path: &Path, frame: &RgbaFrame) -> Result<(), LoadError> {
    assert_eq!(frame.channels(), 4);
    let (h, w) = frame.dims();
    let img: ImageBuffer<Rgba<u8>, Vec<u8>> =
        ImageBuffer::from_raw(w as u32, h as u32, frame.data().to_vec()).expect("buffer size");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e))
}

pub fn write_gray16(path: &Path, height: usize, width: usize, data: &[u16]) -> Result<(), LoadError> {
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(width as u32, height as u32, data.to_vec()).expect("buffer size");
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e))
}

fn open_image(path: &Path) -> Result<image::DynamicImage, LoadError> {
    if !path.exists() {
        return Err(LoadError::Missing {
            path: path.to_path_buf(),
        });
    }
    image::open(path).map_err(|e| image_err(path, e))
}

pub fn read_rgb_png(path: &Path) -> Result<RgbFrame, LoadError> {
    let img = open_image(path)?.into_rgb8();
    let (w, h) = img.dimensions();
    Ok(Grid::from_vec(h as usize, w as usize, 3, img.into_raw()))
}

pub fn read_rgba_png(path: &Path) -> Result<RgbaFrame, LoadError> {
    let img = open_image(path)?.into_rgba8();
    let (w, h) = img.dimensions();
    Ok(Grid::from_vec(h as usize, w as usize, 4, img.into_raw()))
}

pub fn read_gray16(path: &Path) -> Result<(usize, usize, Vec<u16>), LoadError> {
    let img = open_image(path)?;
    if !matches!(img, image::DynamicImage::ImageLuma16(_)) {
        return Err(image_err(path, "expected a 16-bit grayscale image"));
    }
    let img = img.into_luma16();
    let (w, h) = img.dimensions();
    Ok((h as usize, w as usize, img.into_raw()))
}

/// Sorted `*.png` files of a directory.
fn png_files(dir: &Path) -> Result<Vec<PathBuf>, LoadError> {
    let entries = std::fs::read_dir(dir).map_err(io_err(dir))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn frame_stem(index: usize) -> String {
    format!("{index:06}")
}

pub fn frame_name(index: usize) -> String {
    format!("{}.png", frame_stem(index))
}

#[derive(Serialize, Deserialize)]
struct PersonMeta {
    fps: f64,
}

#[derive(Serialize, Deserialize)]
struct BackgroundMeta {
    fps: f64,
    #[serde(default)]
    source_id: String,
}

#[derive(Serialize, Deserialize)]
struct JointRecord {
    frame: usize,
    joints2d: Vec<[f32; 2]>,
    joints3d: Vec<[f32; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    states: Option<Vec<KeypointState>>,
}

pub fn load_person_clip(dir: impl AsRef<Path>) -> Result<PersonClip, LoadError> {
    let dir = dir.as_ref();
    let meta: PersonMeta = read_json(&dir.join("clip.json"))?;
    let rgba_files = png_files(&dir.join("rgba"))?;
    if rgba_files.is_empty() {
        return Err(LoadError::Missing {
            path: dir.join("rgba").join(frame_name(0)),
        });
    }
    let mut frames = Vec::with_capacity(rgba_files.len());
    let mut depth = Vec::with_capacity(rgba_files.len());
    let mut dims = None;
    for (t, path) in rgba_files.iter().enumerate() {
        let expected_name = frame_name(t);
        if path.file_name().and_then(|n| n.to_str()) != Some(expected_name.as_str()) {
            return Err(LoadError::Invalid {
                path: path.clone(),
                message: format!("expected frame file {expected_name}"),
            });
        }
        let frame = read_rgba_png(path)?;
        let (h, w) = *dims.get_or_insert(frame.dims());
        if frame.dims() != (h, w) {
            return Err(LoadError::Dimension {
                path: path.clone(),
                expected: format!("{h}x{w}"),
                found: format!("{}x{}", frame.height(), frame.width()),
            });
        }
        let depth_path = dir.join("depth").join(&expected_name);
        let (dh, dw, mm) = read_gray16(&depth_path)?;
        if (dh, dw) != (h, w) {
            return Err(LoadError::Dimension {
                path: depth_path,
                expected: format!("{h}x{w}"),
                found: format!("{dh}x{dw}"),
            });
        }
        let map: DepthMap = Grid::from_vec(h, w, 1, mm.iter().map(|&v| (v as f64 / 1000.0) as f32).collect());
        for y in 0..h {
            for x in 0..w {
                if frame.get(y, x, 3) > 0 && map.get(y, x, 0) <= 0.0 {
                    return Err(LoadError::Invalid {
                        path: depth_path,
                        message: format!("depth is zero under alpha at ({x}, {y})"),
                    });
                }
            }
        }
        frames.push(frame);
        depth.push(map);
    }

    let joints_path = dir.join("joints.jsonl");
    let records: Vec<JointRecord> = read_jsonl(&joints_path)?;
    if records.len() != frames.len() {
        return Err(LoadError::Invalid {
            path: joints_path,
            message: format!("{} joint records for {} frames", records.len(), frames.len()),
        });
    }
    let mut joints2d = Vec::with_capacity(records.len());
    let mut joints3d = Vec::with_capacity(records.len());
    for (t, rec) in records.into_iter().enumerate() {
        if rec.frame != t {
            return Err(LoadError::Invalid {
                path: joints_path,
                message: format!("record {t} has frame index {}", rec.frame),
            });
        }
        let bad_count = [rec.joints2d.len(), rec.joints3d.len()]
            .into_iter()
            .chain(rec.states.as_ref().map(Vec::len))
            .find(|&n| n != EVAL_JOINT_COUNT);
        if let Some(count) = bad_count {
            return Err(LoadError::JointCount {
                path: joints_path,
                frame: t,
                count,
            });
        }
        let mut kps = [Keypoint2D::visible(0.0, 0.0); EVAL_JOINT_COUNT];
        for (j, kp) in kps.iter_mut().enumerate() {
            kp.position = rec.joints2d[j];
            if let Some(states) = &rec.states {
                kp.state = states[j];
            }
        }
        let mut pose = [[0.0f32; 3]; EVAL_JOINT_COUNT];
        pose.copy_from_slice(&rec.joints3d);
        let pose: Pose3D = Pose::new(pose);
        if !pose.is_finite() || kps.iter().any(|k| !k.position.iter().all(|v| v.is_finite())) {
            return Err(LoadError::Invalid {
                path: joints_path,
                message: format!("non-finite joint in frame {t}"),
            });
        }
        joints2d.push(kps);
        joints3d.push(pose);
    }

    let clip = PersonClip {
        frames,
        depth,
        joints2d,
        joints3d,
        fps: meta.fps,
    };
    clip.check().map_err(|message| LoadError::Invalid {
        path: dir.to_path_buf(),
        message,
    })?;
    Ok(clip)
}

/// Writes a person clip. Depth is quantized to whole millimeters.
pub fn save_person_clip(clip: &PersonClip, dir: impl AsRef<Path>) -> Result<(), LoadError> {
    let dir = dir.as_ref();
    clip.check().map_err(|message| LoadError::Invalid {
        path: dir.to_path_buf(),
        message,
    })?;
    create_dir(&dir.join("rgba"))?;
    create_dir(&dir.join("depth"))?;
    write_json(&dir.join("clip.json"), &PersonMeta { fps: clip.fps })?;
    for (t, (frame, depth)) in clip.frames.iter().zip(&clip.depth).enumerate() {
        write_rgba_png(&dir.join("rgba").join(frame_name(t)), frame)?;
        let mm: Vec<u16> = depth
            .data()
            .iter()
            .map(|&d| (d as f64 * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16)
            .collect();
        let (h, w) = depth.dims();
        write_gray16(&dir.join("depth").join(frame_name(t)), h, w, &mm)?;
    }
    let records: Vec<JointRecord> = clip
        .joints2d
        .iter()
        .zip(&clip.joints3d)
        .enumerate()
        .map(|(t, (kps, pose))| {
            let all_visible = kps.iter().all(|k| k.state.is_visible());
            JointRecord {
                frame: t,
                joints2d: kps.iter().map(|k| k.position).collect(),
                joints3d: pose.joints.to_vec(),
                states: (!all_visible).then(|| kps.iter().map(|k| k.state).collect()),
            }
        })
        .collect();
    write_jsonl(&dir.join("joints.jsonl"), &records)
}

pub fn load_background_clip(dir: impl AsRef<Path>) -> Result<BackgroundClip, LoadError> {
    let dir = dir.as_ref();
    let meta: BackgroundMeta = read_json(&dir.join("clip.json"))?;
    let files = png_files(&dir.join("frames"))?;
    if files.is_empty() {
        return Err(LoadError::Missing {
            path: dir.join("frames").join(frame_name(0)),
        });
    }
    let mut frames = Vec::with_capacity(files.len());
    for path in &files {
        let frame = read_rgb_png(path)?;
        if let Some(first) = frames.first().map(|f: &RgbFrame| f.dims()) {
            if frame.dims() != first {
                return Err(LoadError::Dimension {
                    path: path.clone(),
                    expected: format!("{}x{}", first.0, first.1),
                    found: format!("{}x{}", frame.height(), frame.width()),
                });
            }
        }
        frames.push(frame);
    }
    let source_id = if meta.source_id.is_empty() {
        dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string()
    } else {
        meta.source_id
    };
    Ok(BackgroundClip {
        frames,
        fps: meta.fps,
        source_id,
    })
}

pub fn save_background_clip(clip: &BackgroundClip, dir: impl AsRef<Path>) -> Result<(), LoadError> {
    let dir = dir.as_ref();
    create_dir(&dir.join("frames"))?;
    write_json(
        &dir.join("clip.json"),
        &BackgroundMeta {
            fps: clip.fps,
            source_id: clip.source_id.clone(),
        },
    )?;
    for (t, frame) in clip.frames.iter().enumerate() {
        write_rgb_png(&dir.join("frames").join(frame_name(t)), frame)?;
    }
    Ok(())
}

/// Reads every `*.png` of a directory, in name order, as RGB frames.
pub fn read_frame_dir(dir: impl AsRef<Path>) -> Result<Vec<RgbFrame>, LoadError> {
    png_files(dir.as_ref())?.iter().map(|p| read_rgb_png(p)).collect()
}
