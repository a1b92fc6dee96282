//! Procedural person and background clips for tests and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{round_u8, Grid, RgbFrame};
use crate::schema::EVAL_JOINT_COUNT;
use crate::types::{BackgroundClip, Keypoint2D, PersonClip, Pose};

const FOCAL: f64 = 500.0;

/// Joint template in person heights, origin at the pelvis, y down.
const TEMPLATE: [[f64; 2]; EVAL_JOINT_COUNT] = [
    [-0.08, 0.50],
    [-0.08, 0.27],
    [-0.08, 0.02],
    [0.08, 0.02],
    [0.08, 0.27],
    [0.08, 0.50],
    [-0.22, 0.00],
    [-0.20, -0.15],
    [-0.13, -0.30],
    [0.13, -0.30],
    [0.20, -0.15],
    [0.22, 0.00],
    [0.00, -0.33],
    [0.00, -0.50],
];

/// Limbs as joint pairs with radius in person heights.
const LIMBS: [(usize, usize, f64); 13] = [
    (0, 1, 0.035),
    (1, 2, 0.045),
    (3, 4, 0.045),
    (4, 5, 0.035),
    (6, 7, 0.03),
    (7, 8, 0.035),
    (9, 10, 0.035),
    (10, 11, 0.03),
    (8, 9, 0.04),
    (2, 3, 0.05),
    (12, 13, 0.07),
    (8, 2, 0.06),
    (9, 3, 0.06),
];

/// A walking stick figure with antialiased alpha, z-buffered depth and
/// consistent 2D/3D joints.
pub fn synth_person(seed: u64, height: usize, width: usize, frames: usize) -> PersonClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = height as f64 * rng.random_range(0.45..0.75);
    let mut cx = width as f64 * rng.random_range(0.35..0.65);
    let mut cy = height as f64 * rng.random_range(0.45..0.55);
    let vx = rng.random_range(-0.8..0.8);
    let z0 = rng.random_range(3.0..6.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let omega = rng.random_range(0.15..0.35);
    let colors: Vec<[u8; 3]> = (0..LIMBS.len()).map(|_| [rng.random(), rng.random(), rng.random()]).collect();

    let mut clip = PersonClip {
        frames: Vec::with_capacity(frames),
        depth: Vec::with_capacity(frames),
        joints2d: Vec::with_capacity(frames),
        joints3d: Vec::with_capacity(frames),
        fps: 30.0,
    };
    for t in 0..frames {
        let swing = (phase + omega * t as f64).sin();
        let mut joints = [[0.0f64; 3]; EVAL_JOINT_COUNT];
        for (j, p) in TEMPLATE.iter().enumerate() {
            let (mut x, y) = (p[0], p[1]);
            match j {
                0 | 11 => x += 0.10 * swing,
                5 => x -= 0.10 * swing,
                6 => x += 0.085 * (1.0 + swing),
                1 | 10 => x += 0.05 * swing,
                4 | 7 => x -= 0.05 * swing,
                _ => {}
            }
            // The right forearm passes behind the torso on one side of the swing.
            let z = match j {
                6 | 7 => z0 + 0.15 * (1.0 + swing),
                3..=5 | 9..=11 => z0 + 0.05,
                _ => z0,
            };
            joints[j] = [cx + x * size, cy + y * size, z];
        }
        let (frame, depth) = render_figure(&joints, size, &colors, height, width);
        clip.frames.push(frame);
        clip.depth.push(depth);
        clip.joints2d.push(std::array::from_fn(|j| Keypoint2D::visible(joints[j][0] as f32, joints[j][1] as f32)));
        clip.joints3d.push(Pose::new(std::array::from_fn(|j| {
            let [u, v, z] = joints[j];
            [
                ((u - width as f64 / 2.0) * z / FOCAL) as f32,
                ((v - height as f64 / 2.0) * z / FOCAL) as f32,
                z as f32,
            ]
        })));
        cx += vx;
        cy += 0.2 * swing;
    }
    clip
}

fn render_figure(joints: &[[f64; 3]; EVAL_JOINT_COUNT], size: f64, colors: &[[u8; 3]], height: usize, width: usize) -> (Grid<u8>, Grid<f32>) {
    let mut frame = Grid::filled(height, width, 4, 0u8);
    let mut depth = Grid::filled(height, width, 1, 0.0f32);
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f64, y as f64);
            let mut best: Option<(f64, f64, usize)> = None;
            let mut coverage = 0.0f64;
            for (i, &(a, b, r)) in LIMBS.iter().enumerate() {
                let (ax, ay, az) = (joints[a][0], joints[a][1], joints[a][2]);
                let (bx, by, bz) = (joints[b][0], joints[b][1], joints[b][2]);
                let (dx, dy) = (bx - ax, by - ay);
                let len2 = dx * dx + dy * dy;
                let s = if len2 > 0.0 { (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
                let (qx, qy) = (ax + s * dx, ay + s * dy);
                let d = ((px - qx).powi(2) + (py - qy).powi(2)).sqrt() - r * size;
                let cover = (0.5 - d).clamp(0.0, 1.0);
                if cover > 0.0 {
                    coverage = coverage.max(cover);
                    let z = az + s * (bz - az);
                    if best.is_none_or(|(bzv, _, _)| z < bzv) {
                        best = Some((z, cover, i));
                    }
                }
            }
            if let Some((z, _, i)) = best {
                let a = round_u8(coverage * 255.0);
                if a == 0 {
                    continue;
                }
                let px = frame.pixel_mut(y, x);
                px[..3].copy_from_slice(&colors[i]);
                px[3] = a;
                depth.set(y, x, 0, z as f32);
            }
        }
    }
    (frame, depth)
}

/// Smooth colored texture panning at a constant velocity, with a few large
/// blobs so superpixels have structure.
pub fn synth_background(seed: u64, height: usize, width: usize, frames: usize) -> BackgroundClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [vx, vy] = pan_velocity(&mut rng);
    let margin_x = (vx.abs() * frames as f64).ceil() as usize + 2;
    let margin_y = (vy.abs() * frames as f64).ceil() as usize + 2;
    let (th, tw) = (height + margin_y, width + margin_x);
    let noise: Vec<f64> = (0..th * tw * 3).map(|_| rng.random_range(0.0..1.0)).collect();
    let texture = blur3(&noise, th, tw, 2);
    let blobs: Vec<([f64; 2], f64, [f64; 3])> = (0..6)
        .map(|_| {
            (
                [rng.random_range(0.0..tw as f64), rng.random_range(0.0..th as f64)],
                rng.random_range(0.1..0.3) * height as f64,
                [rng.random(), rng.random(), rng.random()],
            )
        })
        .collect();
    let base = Grid::from_fn(th, tw, 3, |y, x, c| {
        let mut v = 0.3 + 0.4 * texture[(y * tw + x) * 3 + c];
        for (center, r, color) in &blobs {
            let d2 = (x as f64 - center[0]).powi(2) + (y as f64 - center[1]).powi(2);
            if d2 < r * r {
                v = 0.5 * v + 0.5 * color[c];
            }
        }
        v * 255.0
    });
    let x0 = if vx < 0.0 { margin_x as f64 - 1.0 } else { 0.0 };
    let y0 = if vy < 0.0 { margin_y as f64 - 1.0 } else { 0.0 };
    let frames: Vec<RgbFrame> = (0..frames)
        .map(|t| {
            let ox = x0 + vx * t as f64;
            let oy = y0 + vy * t as f64;
            Grid::from_fn(height, width, 3, |y, x, c| round_u8(base.sample_clamped(x as f64 + ox, y as f64 + oy, c)))
        })
        .collect();
    BackgroundClip {
        frames,
        fps: 30.0,
        source_id: format!("synthetic-{seed}"),
    }
}

fn pan_velocity(rng: &mut impl Rng) -> [f64; 2] {
    [rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0)]
}

/// Per-frame content velocity in pixels of [`synth_background`] for `seed`;
/// scene content moves by the negated value each frame.
pub fn background_pan(seed: u64) -> [f64; 2] {
    pan_velocity(&mut ChaCha8Rng::seed_from_u64(seed))
}

fn blur3(data: &[f64], h: usize, w: usize, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let mut tmp = vec![0.0; data.len()];
    let mut out = vec![0.0; data.len()];
    let n = (2 * r + 1) as f64;
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let s: f64 = (-r..=r).map(|d| data[(y * w + (x as isize + d).clamp(0, w as isize - 1) as usize) * 3 + c]).sum();
                tmp[(y * w + x) * 3 + c] = s / n;
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let s: f64 = (-r..=r).map(|d| tmp[((y as isize + d).clamp(0, h as isize - 1) as usize * w + x) * 3 + c]).sum();
                out[(y * w + x) * 3 + c] = s / n;
            }
        }
    }
    out
}
