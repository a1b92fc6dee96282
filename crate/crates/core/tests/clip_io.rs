use std::fs;

use mhtk_core::error::LoadError;
use mhtk_core::io::{load_background_clip, load_person_clip, save_background_clip, save_person_clip};
use mhtk_core::superpix::{read_labels, write_labels, SuperpixelLabels};
use mhtk_core::synth::{synth_background, synth_person};
use mhtk_core::types::KeypointState;

fn quantized_person(frames: usize) -> mhtk_core::types::PersonClip {
    let mut p = synth_person(11, 40, 56, frames);
    for d in p.depth.iter_mut() {
        *d = d.map(|v| ((v as f64 * 1000.0).round() / 1000.0) as f32);
    }
    p
}

#[test]
fn person_clip_round_trips_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = quantized_person(31);
    p.joints2d[3][2].state = KeypointState::HiddenDepth;
    save_person_clip(&p, dir.path()).unwrap();
    let back = load_person_clip(dir.path()).unwrap();
    assert_eq!(back.len(), 31);
    assert_eq!(back, p);

    let again = tempfile::tempdir().unwrap();
    save_person_clip(&back, again.path()).unwrap();
    for sub in ["rgba/000030.png", "depth/000007.png", "joints.jsonl", "clip.json"] {
        assert_eq!(fs::read(dir.path().join(sub)).unwrap(), fs::read(again.path().join(sub)).unwrap(), "{sub}");
    }
}

#[test]
fn background_clip_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let b = synth_background(5, 30, 44, 4);
    save_background_clip(&b, dir.path()).unwrap();
    assert_eq!(load_background_clip(dir.path()).unwrap(), b);
}

#[test]
fn thirteen_joints_names_the_joint_file() {
    let dir = tempfile::tempdir().unwrap();
    save_person_clip(&quantized_person(3), dir.path()).unwrap();
    let path = dir.path().join("joints.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    lines[1]["joints2d"].as_array_mut().unwrap().pop();
    let rewritten: Vec<String> = lines.iter().map(|v| v.to_string()).collect();
    fs::write(&path, rewritten.join("\n") + "\n").unwrap();
    match load_person_clip(dir.path()) {
        Err(err @ LoadError::JointCount { frame: 1, count: 13, .. }) => {
            let msg = err.to_string();
            assert!(msg.contains("joints.jsonl") && msg.contains("joint count"), "{msg}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn missing_and_mismatched_files_are_named() {
    let dir = tempfile::tempdir().unwrap();
    save_person_clip(&quantized_person(3), dir.path()).unwrap();
    fs::remove_file(dir.path().join("depth/000001.png")).unwrap();
    let msg = load_person_clip(dir.path()).unwrap_err().to_string();
    assert!(msg.contains("depth/000001.png"), "{msg}");

    let dir = tempfile::tempdir().unwrap();
    save_person_clip(&quantized_person(3), dir.path()).unwrap();
    let small = image::RgbaImage::new(8, 8);
    small.save(dir.path().join("rgba/000002.png")).unwrap();
    match load_person_clip(dir.path()) {
        Err(LoadError::Dimension { path, .. }) => assert!(path.ends_with("rgba/000002.png")),
        other => panic!("{other:?}"),
    }

    let empty = tempfile::tempdir().unwrap();
    assert!(load_person_clip(empty.path()).unwrap_err().to_string().contains("clip.json"));
}

#[test]
fn labels_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let labels = SuperpixelLabels::from_raw(2, 3, 4, (0..24).map(|i| (i % 5) as u32).collect(), 5);
    write_labels(&labels, dir.path()).unwrap();
    assert_eq!(read_labels(dir.path()).unwrap(), labels);
}
