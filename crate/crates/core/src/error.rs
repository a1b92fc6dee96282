use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("schema parse error: {0}")]
    Parse(String),
    #[error("expected 14 evaluation joints, found {0}")]
    EvalJointCount(usize),
    #[error("expected 12 input keypoints, found {0}")]
    InputKeypointCount(usize),
    #[error("duplicate joint name {0:?}")]
    DuplicateJoint(String),
    #[error("input keypoint {0:?} is not an evaluation joint")]
    UnknownKeypoint(String),
    #[error("invalid leg subset {0:?}")]
    LegSubset(Vec<usize>),
}

/// Failure while reading or writing a clip directory. Always names the file.
#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: missing file")]
    Missing { path: PathBuf },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: image error: {message}")]
    Image { path: PathBuf, message: String },
    #[error("{path}: dimension mismatch: expected {expected}, found {found}")]
    Dimension {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}: joint count {count} in frame {frame}, expected 14")]
    JointCount {
        path: PathBuf,
        frame: usize,
        count: usize,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum FlowError {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("image too small for the flow solver: {0}x{1} (minimum 16x16)")]
    TooSmall(usize, usize),
    #[error("non-finite input pixel")]
    NonFinite,
    #[error("invalid solver parameters: {0}")]
    InvalidParams(String),
    #[error("empty flow field or mask")]
    EmptyMask,
    #[error("center index {center} out of range for {len} frames")]
    CenterOutOfRange { center: usize, len: usize },
    #[error("bad magic number {0}")]
    BadMagic(f32),
    #[error("truncated flow file: {0}")]
    Truncated(String),
    #[error("flow file io: {0}")]
    Io(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum SlicError {
    #[error("camera track has {track} offsets but the video has {frames} frames")]
    TrackLength { track: usize, frames: usize },
    #[error("{k} clusters requested but the video has {cells} cells")]
    TooManyClusters { k: usize, cells: usize },
    #[error("label {label} out of range (cluster count {count})")]
    LabelOutOfRange { label: u32, count: usize },
    #[error("invalid SLIC parameters: {0}")]
    InvalidParams(String),
    #[error("empty video")]
    Empty,
}

#[derive(Debug, Error, PartialEq)]
pub enum ComposeError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("no visible keypoints in the whole clip")]
    NoVisibleKeypoints,
    #[error("need >= 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("degenerate source pose (zero variance)")]
    Degenerate,
    #[error("non-finite pose entries")]
    NonFinite,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unmatched person ids: only in predictions {only_pred:?}, only in ground truth {only_gt:?}")]
    UnmatchedIds {
        only_pred: Vec<String>,
        only_gt: Vec<String>,
    },
    #[error("record parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("no person has a usable frame")]
    NoUsableFrames,
}

/// Any error raised by a pipeline stage.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Slic(#[from] SlicError),
    #[error(transparent)]
    Compose(#[from] ComposeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Error from `build_training_clip`, tagged with the failing stage.
#[derive(Debug, Error)]
#[error("stage {stage}: {source}")]
pub struct PipelineError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

impl PipelineError {
    pub fn new(stage: &'static str, source: impl Into<Error>) -> Self {
        Self {
            stage,
            source: source.into(),
        }
    }
}
