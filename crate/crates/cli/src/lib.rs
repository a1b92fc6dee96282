//! Pipeline configuration and the `mhtk` subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use mhtk_core::composer::{build_training_clip, write_composite_clip, ClipSummary, ComposeParams};
use mhtk_core::error::{EvalError, FlowError, LoadError, PipelineError};
use mhtk_core::eval::{evaluate_dataset, group_records, parse_records, AlignMode, EvalOptions, EvalReport};
use mhtk_core::flow::{tvl1_flow, write_flo, TvL1Params};
use mhtk_core::grid::luma;
use mhtk_core::io::{self, frame_stem, read_frame_dir, save_background_clip, save_person_clip};
use mhtk_core::synth::{synth_background, synth_person};
use mhtk_core::types::{ClipManifest, DEFAULT_CLIP_LENGTH};

/// Prefix of the environment variables mirroring the command-line flags.
pub const ENV_PREFIX: &str = "MHTK_";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
}

fn default_clip_length() -> usize {
    DEFAULT_CLIP_LENGTH
}

/// Everything that determines the output of `compose`. Embedded in every
/// clip directory; `output_root` and `jobs` are not, since they do not
/// affect the output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_clip_length")]
    pub clip_length: usize,
    #[serde(default)]
    pub compose: ComposeParams,
    #[serde(default, skip_serializing)]
    pub output_root: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[serde(default, skip_serializing)]
    pub jobs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            clip_length: DEFAULT_CLIP_LENGTH,
            compose: ComposeParams::default(),
            output_root: None,
            jobs: 0,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.into(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| CliError::Config {
            path: path.into(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn output_root(&self) -> PathBuf {
        self.output_root.clone().unwrap_or_else(|| PathBuf::from("mhtk_out"))
    }

    fn pool(&self) -> rayon::ThreadPool {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .expect("thread pool")
    }
}

/// A manifest line as written by users: seed and length may be omitted.
#[derive(Clone, Debug, Deserialize)]
struct ManifestLine {
    person_path: String,
    background_path: String,
    #[serde(default)]
    master_seed: Option<u64>,
    clip_index: u64,
    #[serde(default)]
    clip_length: Option<usize>,
    #[serde(default)]
    background_flow_path: Option<String>,
}

fn resolve(base: &Path, p: &str) -> String {
    let path = Path::new(p);
    if path.is_absolute() {
        p.to_string()
    } else {
        base.join(path).to_string_lossy().into_owned()
    }
}

/// Parses a manifest file into per-line results. Relative paths resolve
/// against the manifest's directory.
pub fn read_manifests(path: &Path, config: &PipelineConfig) -> Result<Vec<Result<ClipManifest, String>>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| LoadError::Io {
        path: path.into(),
        source: e,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let m: ManifestLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
            Ok(ClipManifest {
                person_path: resolve(base, &m.person_path),
                background_path: resolve(base, &m.background_path),
                master_seed: Some(m.master_seed.unwrap_or(config.master_seed)),
                clip_index: m.clip_index,
                clip_length: m.clip_length.unwrap_or(config.clip_length),
                background_flow_path: m.background_flow_path.map(|p| resolve(base, &p)),
            })
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    /// 1-based manifest line among non-empty lines.
    pub line: usize,
    pub stage: String,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ComposeOutcome {
    pub written: Vec<PathBuf>,
    pub failures: Vec<Failure>,
}

impl ComposeOutcome {
    pub fn exit_code(&self) -> i32 {
        i32::from(!self.failures.is_empty())
    }
}

pub fn clip_dir_name(ordinal: usize) -> String {
    format!("clip_{ordinal:06}")
}

/// Builds one clip directory per manifest line under the output root.
/// Failures are collected in `failures.jsonl` there.
pub fn cmd_compose(config: &PipelineConfig, manifest_path: &Path) -> Result<ComposeOutcome, CliError> {
    config
        .compose
        .validate()
        .map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))?;
    let manifests = read_manifests(manifest_path, config)?;
    let root = config.output_root();
    io::create_dir(&root)?;
    let total = manifests.len();
    let config_json = config.to_json();

    let results: Vec<Result<PathBuf, Failure>> = config.pool().install(|| {
        manifests
            .par_iter()
            .enumerate()
            .map(|(i, m)| {
                let fail = |stage: &str, error: String| Failure {
                    line: i + 1,
                    stage: stage.into(),
                    error,
                };
                let m = m.as_ref().map_err(|e| fail("manifest", e.clone()))?;
                let clip = build_training_clip(m, &config.compose, config.master_seed)
                    .map_err(|e| fail(e.stage, e.source.to_string()))?;
                let dir = root.join(clip_dir_name(i));
                let partial = root.join(format!("{}.partial", clip_dir_name(i)));
                let write = || -> Result<(), LoadError> {
                    if partial.exists() {
                        fs::remove_dir_all(&partial).map_err(|e| LoadError::Io { path: partial.clone(), source: e })?;
                    }
                    write_composite_clip(&clip, &partial)?;
                    fs::write(partial.join("config.json"), &config_json).map_err(|e| LoadError::Io { path: partial.join("config.json"), source: e })?;
                    io::write_json(&partial.join("manifest.json"), m)?;
                    if dir.exists() {
                        fs::remove_dir_all(&dir).map_err(|e| LoadError::Io { path: dir.clone(), source: e })?;
                    }
                    fs::rename(&partial, &dir).map_err(|e| LoadError::Io { path: dir.clone(), source: e })
                };
                write().map_err(|e| fail("write", e.to_string()))?;
                log::info!("[{}/{total}] {} ok", i + 1, clip_dir_name(i));
                Ok(dir)
            })
            .collect()
    });

    let mut outcome = ComposeOutcome::default();
    for r in results {
        match r {
            Ok(dir) => outcome.written.push(dir),
            Err(f) => {
                log::error!("[{}/{total}] {} failed at {}: {}", f.line, clip_dir_name(f.line - 1), f.stage, f.error);
                outcome.failures.push(f);
            }
        }
    }
    let report = root.join("failures.jsonl");
    if outcome.failures.is_empty() {
        if report.exists() {
            fs::remove_file(&report).map_err(|e| LoadError::Io { path: report.clone(), source: e })?;
        }
    } else {
        io::write_jsonl(&report, &outcome.failures)?;
    }
    Ok(outcome)
}

/// One `.flo` file per consecutive frame pair of a directory of images.
pub fn cmd_flow(frames_dir: &Path, out_dir: &Path, params: &TvL1Params, jobs: usize) -> Result<Vec<PathBuf>, CliError> {
    let frames = read_frame_dir(frames_dir)?;
    if frames.len() < 2 {
        return Err(CliError::Usage(format!(
            "{}: need >= 2 frames, found {}",
            frames_dir.display(),
            frames.len()
        )));
    }
    io::create_dir(out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().expect("thread pool");
    pool.install(|| {
        (0..frames.len() - 1)
            .into_par_iter()
            .map(|t| {
                let flow = tvl1_flow(&luma::<f32>(&frames[t]), &luma::<f32>(&frames[t + 1]), params)?;
                let path = out_dir.join(format!("{}.flo", frame_stem(t)));
                write_flo(&flow, &path)?;
                Ok(path)
            })
            .collect()
    })
}

/// Evaluates prediction records against ground truth. Writes
/// `eval_report.json` and `eval_report.txt` into `out_dir`.
pub fn cmd_eval(pred: &Path, gt: &Path, out_dir: &Path, mode: AlignMode) -> Result<EvalReport, CliError> {
    let read = |p: &Path| {
        fs::read_to_string(p).map_err(|e| LoadError::Io {
            path: p.into(),
            source: e,
        })
    };
    let pred_records = parse_records(&read(pred)?).map_err(|e| CliError::Config {
        path: pred.into(),
        message: e.to_string(),
    })?;
    let gt_records = parse_records(&read(gt)?).map_err(|e| CliError::Config {
        path: gt.into(),
        message: e.to_string(),
    })?;
    let (preds, gts) = group_records(&pred_records, &gt_records)?;
    let options = EvalOptions {
        mode,
        ..EvalOptions::default()
    };
    let report = evaluate_dataset(&preds, &gts, &options)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    io::create_dir(out_dir)?;
    io::write_json(&out_dir.join("eval_report.json"), &report)?;
    let txt = out_dir.join("eval_report.txt");
    fs::write(&txt, report.to_table()).map_err(|e| LoadError::Io { path: txt, source: e })?;
    Ok(report)
}

pub fn format_metric(report: &EvalReport) -> String {
    format!("PA-MPJPE: {:.1}", report.dataset_mean_mm)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InspectStats {
    pub clips: usize,
    /// Clips that ran the occluder stage.
    pub occluder_clips: usize,
    pub occluders_accepted: usize,
    pub clips_with_total_occlusion: usize,
    pub frames: usize,
    pub frames_totally_occluded: usize,
    /// Keypoint count per state over all frames.
    pub keypoint_states: BTreeMap<String, usize>,
}

impl InspectStats {
    pub fn occluder_acceptance_rate(&self) -> f64 {
        ratio(self.occluders_accepted, self.occluder_clips)
    }

    pub fn total_occlusion_rate(&self) -> f64 {
        ratio(self.clips_with_total_occlusion, self.clips)
    }

    pub fn hidden_rate(&self, state: &str) -> f64 {
        let total: usize = self.keypoint_states.values().sum();
        ratio(self.keypoint_states.get(state).copied().unwrap_or(0), total)
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "clips: {}\noccluder acceptance rate: {:.3} ({}/{})\ntotal-occlusion rate: {:.3} ({}/{} clips, {}/{} frames)\n",
            self.clips,
            self.occluder_acceptance_rate(),
            self.occluders_accepted,
            self.occluder_clips,
            self.total_occlusion_rate(),
            self.clips_with_total_occlusion,
            self.clips,
            self.frames_totally_occluded,
            self.frames
        );
        for state in self.keypoint_states.keys() {
            out.push_str(&format!("keypoint rate {state}: {:.3}\n", self.hidden_rate(state)));
        }
        out
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Statistics over a clip directory or a directory of clip directories.
pub fn cmd_inspect(dir: &Path) -> Result<InspectStats, CliError> {
    let mut clip_dirs = Vec::new();
    if dir.join("summary.json").is_file() {
        clip_dirs.push(dir.to_path_buf());
    } else {
        let entries = fs::read_dir(dir).map_err(|e| LoadError::Io {
            path: dir.into(),
            source: e,
        })?;
        for e in entries.flatten() {
            if e.path().join("summary.json").is_file() {
                clip_dirs.push(e.path());
            }
        }
        clip_dirs.sort();
    }
    let mut stats = InspectStats::default();
    for d in clip_dirs {
        let s: ClipSummary = io::read_json(&d.join("summary.json"))?;
        let flags: Vec<bool> = io::read_json(&d.join("total_occlusion.json"))?;
        stats.clips += 1;
        if let Some(occ) = &s.occluder {
            stats.occluder_clips += 1;
            stats.occluders_accepted += usize::from(occ.accepted);
        }
        let occluded = flags.iter().filter(|f| **f).count();
        stats.clips_with_total_occlusion += usize::from(occluded > 0);
        stats.frames += flags.len();
        stats.frames_totally_occluded += occluded;
        for (k, v) in s.state_counts {
            *stats.keypoint_states.entry(k).or_default() += v;
        }
    }
    Ok(stats)
}

/// Writes `count` synthetic person/background pairs and a manifest under `out`.
pub fn cmd_synth(out: &Path, count: usize, config: &PipelineConfig, background_frames: usize) -> Result<PathBuf, CliError> {
    let (h, w) = config.compose.canvas;
    let frames = config.clip_length;
    io::create_dir(out)?;
    let lines: Vec<String> = config.pool().install(|| {
        (0..count)
            .into_par_iter()
            .map(|i| -> Result<String, CliError> {
                let seed = mhtk_core::seed::derive_clip_seed(config.master_seed, i as u64);
                let mut person = synth_person(seed, h, w, frames);
                for d in person.depth.iter_mut() {
                    *d = d.map(|v| ((v as f64 * 1000.0).round() / 1000.0) as f32);
                }
                let bg = synth_background(seed ^ 1, h + h / 4, w + w / 4, background_frames);
                let person_dir = format!("persons/{i:06}");
                let bg_dir = format!("backgrounds/{i:06}");
                save_person_clip(&person, out.join(&person_dir))?;
                save_background_clip(&bg, out.join(&bg_dir))?;
                Ok(serde_json::json!({
                    "person_path": person_dir,
                    "background_path": bg_dir,
                    "clip_index": i,
                })
                .to_string())
            })
            .collect::<Result<_, _>>()
    })?;
    let manifest = out.join("manifests.jsonl");
    fs::write(&manifest, lines.join("\n") + "\n").map_err(|e| LoadError::Io {
        path: manifest.clone(),
        source: e,
    })?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lines_take_config_defaults_and_resolve_paths() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("m.jsonl");
        fs::write(
            &path,
            concat!(
                r#"{"person_path": "p", "background_path": "/abs/b", "clip_index": 3}"#,
                "\n\n",
                r#"{"person_path": "p", "background_path": "b", "clip_index": 4, "master_seed": 9, "clip_length": 5}"#,
                "\nnot json\n"
            ),
        )
        .unwrap();
        let config = PipelineConfig {
            master_seed: 7,
            clip_length: 11,
            ..PipelineConfig::default()
        };
        let lines = read_manifests(&path, &config).unwrap();
        assert_eq!(lines.len(), 3);
        let a = lines[0].as_ref().unwrap();
        assert_eq!(a.master_seed, Some(7));
        assert_eq!(a.clip_length, 11);
        assert_eq!(Path::new(&a.person_path), tmp.path().join("p"));
        assert_eq!(a.background_path, "/abs/b");
        let b = lines[1].as_ref().unwrap();
        assert_eq!((b.master_seed, b.clip_length), (Some(9), 5));
        assert!(lines[2].is_err());
    }

    #[test]
    fn runtime_settings_stay_out_of_embedded_config() {
        let config = PipelineConfig {
            jobs: 8,
            output_root: Some("/tmp/x".into()),
            ..PipelineConfig::default()
        };
        let json = config.to_json();
        assert!(!json.contains("jobs") && !json.contains("output_root"));
        let back: PipelineConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, PipelineConfig::default());
    }

    #[test]
    fn inspect_rates() {
        let mut stats = InspectStats {
            clips: 4,
            occluder_clips: 4,
            occluders_accepted: 1,
            clips_with_total_occlusion: 2,
            ..InspectStats::default()
        };
        stats.keypoint_states.insert("Visible".into(), 30);
        stats.keypoint_states.insert("HiddenDepth".into(), 10);
        assert_eq!(stats.occluder_acceptance_rate(), 0.25);
        assert_eq!(stats.total_occlusion_rate(), 0.5);
        assert_eq!(stats.hidden_rate("HiddenDepth"), 0.25);
        assert_eq!(InspectStats::default().occluder_acceptance_rate(), 0.0);
    }
}
