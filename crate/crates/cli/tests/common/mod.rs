#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

use mhtk_cli::{cmd_synth, PipelineConfig};
use mhtk_core::composer::{ComposeParams, CropParams};

pub fn small_config(seed: u64, clip_length: usize) -> PipelineConfig {
    PipelineConfig {
        master_seed: seed,
        clip_length,
        compose: ComposeParams {
            canvas: (48, 64),
            crop: CropParams {
                size: 32,
                target_person_height: 24.0,
                ..CropParams::default()
            },
            heatmap_sigma: 3.0,
            ..ComposeParams::default()
        },
        ..PipelineConfig::default()
    }
}

/// Synthetic corpus of `count` clips under `dir`; returns the manifest path.
pub fn corpus(dir: &Path, count: usize, config: &PipelineConfig) -> PathBuf {
    let mut c = config.clone();
    c.clip_length = config.clip_length + 3;
    cmd_synth(dir, count, &c, config.clip_length + 6).unwrap()
}

pub fn write_config(dir: &Path, config: &PipelineConfig) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let path = dir.join("config.json");
    fs::write(&path, config.to_json()).unwrap();
    path
}

pub fn mhtk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mhtk"))
        .args(args)
        .env_remove("MHTK_SEED")
        .env_remove("MHTK_CLIP_LENGTH")
        .env_remove("MHTK_ABLATION")
        .env_remove("MHTK_JOBS")
        .env_remove("MHTK_CONFIG")
        .env_remove("MHTK_OUT")
        .output()
        .expect("run mhtk")
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, PathBuf)>) {
    let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(root, &p, out);
        } else {
            let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
            out.push((rel, p));
        }
    }
}

/// SHA-256 over every file's relative path and bytes, in sorted order.
pub fn tree_digest(root: &Path) -> String {
    let mut files = Vec::new();
    walk(root, root, &mut files);
    let mut h = Sha256::new();
    for (rel, path) in files {
        h.update(rel.as_bytes());
        h.update([0]);
        h.update(Sha256::digest(fs::read(path).unwrap()));
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn clip_dirs(root: &Path) -> Vec<PathBuf> {
    let mut v: Vec<_> = fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    v.sort();
    v
}

/// A JSONL pose record line.
pub fn record(person: &str, frame: usize, joints: &[[f64; 3]; 14], visible: Option<usize>) -> String {
    let flat: Vec<f64> = joints.iter().flatten().copied().collect();
    let mut v = serde_json::json!({"person_id": person, "frame_index": frame, "joints": flat});
    if let Some(n) = visible {
        v["visible"] = n.into();
    }
    v.to_string()
}

pub fn skeleton(offset: f64) -> [[f64; 3]; 14] {
    std::array::from_fn(|j| {
        let a = j as f64;
        [0.1 * (a * 0.7).sin() + offset, -0.5 + 0.07 * a, 3.0 + 0.05 * (a * 1.3).cos()]
    })
}
