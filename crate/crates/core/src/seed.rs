//! Deterministic randomness.
//!
//! A master seed and a clip index produce one clip seed. Inside a clip every
//! stage draws from its own ChaCha stream, selected by the stage name, so a
//! stage's draws never depend on how many numbers another stage consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// The splitmix64 finalizer (a bijection on `u64`).
#[inline]
pub fn splitmix64_mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for clip `clip_index` under `master_seed`.
///
/// Equal to output number `clip_index + 1` of a splitmix64 generator started
/// at `master_seed`, so distinct indices never collide for a fixed master seed.
pub fn derive_clip_seed(master_seed: u64, clip_index: u64) -> u64 {
    splitmix64_mix(master_seed.wrapping_add(GOLDEN_GAMMA.wrapping_mul(clip_index.wrapping_add(1))))
}

/// Named per-stage random streams of one clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Substream {
    BackgroundCrop,
    ClipWindow,
    Occluder,
    TotalOcclusion,
    Keypoints,
}

impl Substream {
    pub fn name(self) -> &'static str {
        match self {
            Substream::BackgroundCrop => "background_crop",
            Substream::ClipWindow => "clip_window",
            Substream::Occluder => "occluder",
            Substream::TotalOcclusion => "total_occlusion",
            Substream::Keypoints => "keypoints",
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Generator for one stage of one clip.
pub fn stage_rng(clip_seed: u64, stage: Substream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(clip_seed);
    rng.set_stream(fnv1a(stage.name().as_bytes()));
    rng
}
