use mhtk_core::flow::Track;
use mhtk_core::grid::{Grid, RgbFrame};
use mhtk_core::seed::{stage_rng, Substream};
use mhtk_core::superpix::{sample_slic_params, slic_frames, SlicParams, CLUSTER_RANGE};
use rand::Rng;

fn track(offsets: Vec<[f32; 2]>, center: usize) -> Track<f32> {
    Track {
        offsets,
        center_index: center,
    }
}

fn random_video(seed: u64, frames: usize, h: usize, w: usize) -> Vec<RgbFrame> {
    let mut rng = stage_rng(seed, Substream::BackgroundCrop);
    (0..frames).map(|_| Grid::from_fn(h, w, 3, |_, _, _| rng.random())).collect()
}

#[test]
fn partition_on_random_videos() {
    for seed in 0..20 {
        let mut rng = stage_rng(seed, Substream::Occluder);
        let params = sample_slic_params(&mut rng);
        let video = random_video(seed, 3, 12, 16);
        let offsets = (0..3).map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect();
        let labels = slic_frames(&video, &track(offsets, 1), &params).unwrap();
        assert!(labels.is_partition(), "seed {seed}");
        assert!(labels.cluster_count() <= params.k);
    }
}

/// Scene larger than the frame; frame `t` shows it displaced by `shift[t]`.
fn panning_video(shifts: &[[usize; 2]], h: usize, w: usize) -> Vec<RgbFrame> {
    let pad = 12;
    let scene = Grid::from_fn(h + pad, w + pad, 3, |y, x, c| {
        let band = ((x / 7) + 2 * (y / 5) + c) % 4;
        (band * 60 + (x + y) % 3) as u8
    });
    shifts
        .iter()
        .map(|s| Grid::from_fn(h, w, 3, |y, x, c| if x >= s[0] && y >= s[1] { scene.get(y - s[1], x - s[0], c) } else { 255 }))
        .collect()
}

#[test]
fn integer_camera_motion_is_equivariant() {
    let (h, w) = (20, 30);
    let shifts = [[0usize, 0usize], [10, 0], [4, 3]];
    let video = panning_video(&shifts, h, w);
    let offsets = shifts.iter().map(|s| [s[0] as f32, s[1] as f32]).collect();
    let params = SlicParams::new(6, 5e-4);
    let labels = slic_frames(&video, &track(offsets, 0), &params).unwrap();
    assert!(labels.is_partition());
    for (t, s) in shifts.iter().enumerate().skip(1) {
        let mut compared = 0;
        for y in s[1]..h {
            for x in s[0]..w {
                assert_eq!(labels.get(t, y, x), labels.get(0, y - s[1], x - s[0]), "frame {t} at ({x}, {y})");
                compared += 1;
            }
        }
        assert!(compared > 0);
    }
}

/// Minimum of the k-means objective over every 2-partition of the cells.
fn exhaustive_two_means(features: &[[f64; 5]]) -> Vec<bool> {
    let n = features.len();
    let cost = |members: &[&[f64; 5]]| -> f64 {
        if members.is_empty() {
            return 0.0;
        }
        let mut mean = [0.0; 5];
        for f in members {
            for d in 0..5 {
                mean[d] += f[d] / members.len() as f64;
            }
        }
        members.iter().map(|f| (0..5).map(|d| (f[d] - mean[d]).powi(2)).sum::<f64>()).sum()
    };
    let mut best = (f64::INFINITY, 0u32);
    // Cell 0 fixed in cluster A removes the label-swap symmetry.
    for bits in 0..(1u32 << (n - 1)) {
        let in_b = |i: usize| i > 0 && bits >> (i - 1) & 1 == 1;
        let a: Vec<&[f64; 5]> = (0..n).filter(|&i| !in_b(i)).map(|i| &features[i]).collect();
        let b: Vec<&[f64; 5]> = (0..n).filter(|&i| in_b(i)).map(|i| &features[i]).collect();
        if b.is_empty() {
            continue;
        }
        let c = cost(&a) + cost(&b);
        if c < best.0 {
            best = (c, bits);
        }
    }
    (0..n).map(|i| i > 0 && best.1 >> (i - 1) & 1 == 1).collect()
}

#[test]
fn two_color_fixture_matches_exhaustive_two_means() {
    let (h, w) = (2, 4);
    let frame = Grid::from_fn(h, w, 3, |_, x, c| match (x < w / 2, c) {
        (true, 0) | (false, 2) => 255u8,
        _ => 0,
    });
    let video = vec![frame.clone(), frame];
    let params = SlicParams::new(2, 5e-4);
    let labels = slic_frames(&video, &track(vec![[0.0; 2]; 2], 1), &params).unwrap();

    let gain = params.coord_scale * 320.0 / w as f64;
    let step = ((h * w) as f64 / 2.0).sqrt();
    let spatial = (gain * gain + (params.compactness / step).powi(2)).sqrt();
    let mut features = Vec::new();
    for t in 0..2 {
        for y in 0..h {
            for x in 0..w {
                let p = video[t].pixel(y, x);
                features.push([
                    p[0] as f64 / 255.0,
                    p[1] as f64 / 255.0,
                    p[2] as f64 / 255.0,
                    spatial * x as f64,
                    spatial * y as f64,
                ]);
            }
        }
    }
    let oracle = exhaustive_two_means(&features);
    let got: Vec<bool> = (0..2 * h * w).map(|i| labels.labels()[i] != labels.labels()[0]).collect();
    assert_eq!(got, oracle);
    assert!((0..2 * h * w).all(|i| oracle[i] == (i % w >= w / 2)));
}

#[test]
fn cluster_count_draws_are_uniform() {
    let mut rng = stage_rng(99, Substream::Occluder);
    let bins = CLUSTER_RANGE.1 - CLUSTER_RANGE.0 + 1;
    let mut counts = vec![0usize; bins];
    let n = 100_000;
    for _ in 0..n {
        counts[sample_slic_params(&mut rng).k - CLUSTER_RANGE.0] += 1;
    }
    let expected = n as f64 / bins as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99th percentile of chi-square with 20 degrees of freedom.
    assert!(chi2 < 37.566, "chi2 = {chi2}");
}

#[test]
fn labels_independent_of_thread_count() {
    let video = random_video(3, 3, 16, 20);
    let params = SlicParams::new(12, 5e-4);
    let t = track(vec![[0.0, 0.0], [1.0, -1.0], [2.5, 0.5]], 1);
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let a = single.install(|| slic_frames(&video, &t, &params).unwrap());
    let b = slic_frames(&video, &t, &params).unwrap();
    assert_eq!(a, b);
}
