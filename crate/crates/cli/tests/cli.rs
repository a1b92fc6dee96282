mod common;

use std::fs;

use common::*;
use mhtk_cli::{cmd_compose, cmd_eval, cmd_inspect, Failure, PipelineConfig};
use mhtk_core::eval::AlignMode;
use mhtk_core::flow::read_flo;
use mhtk_core::schema::INPUT_KEYPOINT_COUNT;
use mhtk_core::io::{save_background_clip, frame_name, write_rgb_png};
use mhtk_core::synth::synth_background;

#[test]
fn compose_three_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = small_config(11, 7);
    let manifest = corpus(&tmp.path().join("corpus"), 3, &config);
    config.output_root = Some(tmp.path().join("out"));
    let outcome = cmd_compose(&config, &manifest).unwrap();
    assert_eq!(outcome.exit_code(), 0);
    let dirs = clip_dirs(&tmp.path().join("out"));
    assert_eq!(dirs.len(), 3);
    for d in &dirs {
        for f in ["config.json", "manifest.json", "summary.json", "keypoints.json", "total_occlusion.json"] {
            assert!(d.join(f).is_file(), "{}", d.join(f).display());
        }
        assert_eq!(fs::read_dir(d.join("frames")).unwrap().count(), 7);
        assert_eq!(fs::read_dir(d.join("flow")).unwrap().count(), 6);
        assert_eq!(fs::read_dir(d.join("input")).unwrap().count(), 7);
    }
    assert!(!tmp.path().join("out/failures.jsonl").exists());
}

#[test]
fn broken_manifest_is_reported_and_others_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(12, 7);
    let manifest = corpus(&tmp.path().join("corpus"), 3, &config);
    // Corrupt the second person's joints.
    let joints = tmp.path().join("corpus/persons/000001/joints.jsonl");
    let text = fs::read_to_string(&joints).unwrap();
    let first = text.lines().next().unwrap().to_string();
    fs::write(&joints, text.replacen(&first, "{\"bad\": true}", 1)).unwrap();

    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &config);
    let run = mhtk(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "compose", manifest.to_str().unwrap()]);
    assert_ne!(run.status.code(), Some(0));
    let names: Vec<_> = clip_dirs(&out).iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["clip_000000", "clip_000002"]);
    let failures: Vec<Failure> = fs::read_to_string(out.join("failures.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(failures.len(), 1);
    assert_eq!(failures[0].line, 2);
    assert_eq!(failures[0].stage, "load_person");
    assert!(failures[0].error.contains("joints.jsonl"), "{}", failures[0].error);
}

#[test]
fn rerun_and_embedded_config_reproduce_output() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = small_config(13, 6);
    config.compose.ablations.enable("no_total_occlusions").unwrap();
    let manifest = corpus(&tmp.path().join("corpus"), 2, &config);
    let cfg = write_config(tmp.path(), &config);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let run = mhtk(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "compose", manifest.to_str().unwrap()]);
        assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    }
    assert_eq!(tree_digest(&a), tree_digest(&b));

    // Rebuild from the configuration embedded in the first clip.
    let embedded = a.join("clip_000000/config.json");
    let reloaded = PipelineConfig::load(&embedded).unwrap();
    assert_eq!(reloaded.compose, config.compose);
    let c = tmp.path().join("c");
    let run = mhtk(&["--config", embedded.to_str().unwrap(), "--out", c.to_str().unwrap(), "compose", manifest.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(0));
    assert_eq!(tree_digest(&a), tree_digest(&c));
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(14, 5);
    let manifest = corpus(&tmp.path().join("corpus"), 1, &config);
    let cfg = write_config(tmp.path(), &config);
    let out = tmp.path().join("out");
    let run = mhtk(&[
        "--config", cfg.to_str().unwrap(),
        "--out", out.to_str().unwrap(),
        "--seed", "99",
        "--clip-length", "4",
        "--ablation", "no-occluders",
        "compose", manifest.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let embedded = PipelineConfig::load(&out.join("clip_000000/config.json")).unwrap();
    assert_eq!(embedded.master_seed, 99);
    assert_eq!(embedded.clip_length, 4);
    assert!(embedded.compose.ablations.no_occluders);
    assert_eq!(fs::read_dir(out.join("clip_000000/frames")).unwrap().count(), 4);

    let bad = mhtk(&["--ablation", "no-such-thing", "inspect", out.to_str().unwrap()]);
    assert_ne!(bad.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("unknown ablation"));
}

#[test]
fn inspect_counts_states() {
    let tmp = tempfile::tempdir().unwrap();
    let mut config = small_config(15, 6);
    let manifest = corpus(&tmp.path().join("corpus"), 4, &config);
    config.output_root = Some(tmp.path().join("out"));
    cmd_compose(&config, &manifest).unwrap();
    let stats = cmd_inspect(&tmp.path().join("out")).unwrap();
    assert_eq!(stats.clips, 4);
    assert_eq!(stats.occluder_clips, 4);
    assert_eq!(stats.frames, 24);
    assert_eq!(stats.keypoint_states.values().sum::<usize>(), 24 * INPUT_KEYPOINT_COUNT);
    let single = cmd_inspect(&tmp.path().join("out/clip_000000")).unwrap();
    assert_eq!(single.clips, 1);

    let run = mhtk(&["inspect", "--json", tmp.path().join("out").to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(0));
    let parsed: mhtk_cli::InspectStats = serde_json::from_slice(&run.stdout).unwrap();
    assert_eq!(parsed, stats);
}

#[test]
fn flow_writes_one_file_per_pair() {
    let tmp = tempfile::tempdir().unwrap();
    let bg = synth_background(3, 40, 48, 31);
    save_background_clip(&bg, tmp.path().join("bg")).unwrap();
    let out = tmp.path().join("flow");
    let run = mhtk(&["--out", out.to_str().unwrap(), "flow", tmp.path().join("bg/frames").to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let mut names: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names.len(), 30);
    assert_eq!(names[0], "000000.flo");
    assert_eq!(names[29], "000029.flo");
    let f = read_flo(out.join("000000.flo")).unwrap();
    assert_eq!((f.height(), f.width()), (40, 48));

    let one = tmp.path().join("one");
    fs::create_dir_all(&one).unwrap();
    write_rgb_png(&one.join(frame_name(0)), &bg.frames[0]).unwrap();
    let run = mhtk(&["--out", tmp.path().join("flow1").to_str().unwrap(), "flow", one.to_str().unwrap()]);
    assert_ne!(run.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&run.stderr).contains("need >= 2 frames"));
}

#[test]
fn eval_identical_poses_prints_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let gt: Vec<String> = (0..5).map(|t| record("p1", t, &skeleton(t as f64 * 0.01), Some(14))).collect();
    let pred: Vec<String> = (0..5).map(|t| record("p1", t, &skeleton(t as f64 * 0.01), None)).collect();
    fs::write(tmp.path().join("gt.jsonl"), gt.join("\n")).unwrap();
    fs::write(tmp.path().join("pred.jsonl"), pred.join("\n")).unwrap();
    let run = mhtk(&[
        "--out", tmp.path().join("report").to_str().unwrap(),
        "eval",
        "--pred", tmp.path().join("pred.jsonl").to_str().unwrap(),
        "--gt", tmp.path().join("gt.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert_eq!(stdout.lines().last().unwrap(), "PA-MPJPE: 0.0");
    assert!(tmp.path().join("report/eval_report.json").is_file());
    assert!(tmp.path().join("report/eval_report.txt").is_file());
}

#[test]
fn eval_skips_low_visibility_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let mut gt = Vec::new();
    let mut pred = Vec::new();
    for t in 0..4 {
        gt.push(record("a", t, &skeleton(0.0), Some(if t == 2 { 6 } else { 7 })));
        pred.push(record("a", t, &skeleton(0.0), None));
    }
    fs::write(tmp.path().join("gt.jsonl"), gt.join("\n")).unwrap();
    fs::write(tmp.path().join("pred.jsonl"), pred.join("\n")).unwrap();
    let report = cmd_eval(&tmp.path().join("pred.jsonl"), &tmp.path().join("gt.jsonl"), &tmp.path().join("r"), AlignMode::Similarity).unwrap();
    assert_eq!(report.per_person[0].frames_skipped, 1);
    assert_eq!(report.per_person[0].frames_used, 3);
}

#[test]
fn eval_mismatched_ids_fail_listing_both_sets() {
    let tmp = tempfile::tempdir().unwrap();
    let gt = [record("alice", 0, &skeleton(0.0), Some(14)), record("bob", 0, &skeleton(0.0), Some(14))];
    let pred = [record("alice", 0, &skeleton(0.0), None), record("carol", 0, &skeleton(0.0), None)];
    fs::write(tmp.path().join("gt.jsonl"), gt.join("\n")).unwrap();
    fs::write(tmp.path().join("pred.jsonl"), pred.join("\n")).unwrap();
    let run = mhtk(&[
        "--out", tmp.path().join("r").to_str().unwrap(),
        "eval",
        "--pred", tmp.path().join("pred.jsonl").to_str().unwrap(),
        "--gt", tmp.path().join("gt.jsonl").to_str().unwrap(),
    ]);
    assert_ne!(run.status.code(), Some(0));
    let stderr = String::from_utf8_lossy(&run.stderr);
    assert!(stderr.contains("carol") && stderr.contains("bob"), "{stderr}");
}

#[test]
fn environment_overrides_config_and_flags_override_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(16, 5);
    let manifest = corpus(&tmp.path().join("corpus"), 1, &config);
    let cfg = write_config(tmp.path(), &config);
    let out = tmp.path().join("out");
    let run = std::process::Command::new(env!("CARGO_BIN_EXE_mhtk"))
        .args(["--clip-length", "3", "compose", manifest.to_str().unwrap()])
        .env("MHTK_CONFIG", &cfg)
        .env("MHTK_OUT", &out)
        .env("MHTK_SEED", "1234")
        .env("MHTK_CLIP_LENGTH", "4")
        .env("MHTK_ABLATION", "static-background,no-total-occlusions")
        .env("MHTK_JOBS", "2")
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let embedded = PipelineConfig::load(&out.join("clip_000000/config.json")).unwrap();
    assert_eq!(embedded.master_seed, 1234);
    assert_eq!(embedded.clip_length, 3);
    assert!(embedded.compose.ablations.static_background);
    assert!(embedded.compose.ablations.no_total_occlusions);
    assert!(!embedded.compose.ablations.no_occluders);
}
