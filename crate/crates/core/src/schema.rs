//! Joint naming and ordering.
//!
//! Evaluation joints follow the 14-joint LSP ordering used by COCO-common
//! protocols. Input keypoints are the 12 limb joints fed to heatmaps, ordered
//! left/right per limb segment from the feet upward.

use serde::{Deserialize, Serialize};

use crate::error::SchemaError;

pub const EVAL_JOINT_COUNT: usize = 14;
pub const INPUT_KEYPOINT_COUNT: usize = 12;

pub const DEFAULT_EVAL_JOINTS: [&str; EVAL_JOINT_COUNT] = [
    "right_ankle",
    "right_knee",
    "right_hip",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_wrist",
    "right_elbow",
    "right_shoulder",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "neck",
    "head_top",
];

pub const DEFAULT_INPUT_KEYPOINTS: [&str; INPUT_KEYPOINT_COUNT] = [
    "left_ankle",
    "right_ankle",
    "left_knee",
    "right_knee",
    "left_hip",
    "right_hip",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointSchema {
    pub eval_joints: Vec<String>,
    pub input_keypoints: Vec<String>,
    /// Indices into `input_keypoints` that count as leg keypoints.
    pub leg_subset: Vec<usize>,
}

impl Default for JointSchema {
    fn default() -> Self {
        Self {
            eval_joints: DEFAULT_EVAL_JOINTS.iter().map(|s| s.to_string()).collect(),
            input_keypoints: DEFAULT_INPUT_KEYPOINTS.iter().map(|s| s.to_string()).collect(),
            leg_subset: vec![0, 1, 2, 3],
        }
    }
}

impl JointSchema {
    /// Same as the default but with the hips counted as leg keypoints.
    pub fn with_hips_in_legs() -> Self {
        Self {
            leg_subset: vec![0, 1, 2, 3, 4, 5],
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let schema: Self =
            serde_json::from_str(text).map_err(|e| SchemaError::Parse(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.eval_joints.len() != EVAL_JOINT_COUNT {
            return Err(SchemaError::EvalJointCount(self.eval_joints.len()));
        }
        if self.input_keypoints.len() != INPUT_KEYPOINT_COUNT {
            return Err(SchemaError::InputKeypointCount(self.input_keypoints.len()));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &self.eval_joints {
            if !seen.insert(name) {
                return Err(SchemaError::DuplicateJoint(name.clone()));
            }
        }
        for name in &self.input_keypoints {
            if !self.eval_joints.contains(name) {
                return Err(SchemaError::UnknownKeypoint(name.clone()));
            }
        }
        if self.leg_subset.is_empty()
            || self.leg_subset.iter().any(|&i| i >= INPUT_KEYPOINT_COUNT)
        {
            return Err(SchemaError::LegSubset(self.leg_subset.clone()));
        }
        Ok(())
    }

    /// For each input keypoint, its index among the evaluation joints.
    pub fn input_to_eval(&self) -> [usize; INPUT_KEYPOINT_COUNT] {
        let mut map = [0; INPUT_KEYPOINT_COUNT];
        for (slot, name) in map.iter_mut().zip(&self.input_keypoints) {
            *slot = self
                .eval_joints
                .iter()
                .position(|j| j == name)
                .expect("validated schema");
        }
        map
    }

    pub fn is_leg(&self, input_index: usize) -> bool {
        self.leg_subset.contains(&input_index)
    }

    pub fn eval_index(&self, name: &str) -> Option<usize> {
        self.eval_joints.iter().position(|j| j == name)
    }

    pub fn input_index(&self, name: &str) -> Option<usize> {
        self.input_keypoints.iter().position(|j| j == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schema_is_valid() {
        let schema = JointSchema::default();
        schema.validate().unwrap();
        assert_eq!(schema.leg_subset.len(), 4);
        for &i in &schema.leg_subset {
            let name = &schema.input_keypoints[i];
            assert!(name.ends_with("ankle") || name.ends_with("knee"), "{name}");
        }
    }

    #[test]
    fn input_keypoints_map_into_eval_joints() {
        let schema = JointSchema::default();
        let map = schema.input_to_eval();
        for (i, &e) in map.iter().enumerate() {
            assert_eq!(schema.input_keypoints[i], schema.eval_joints[e]);
        }
    }

    #[test]
    fn rejects_wrong_counts_and_unknown_names() {
        let mut schema = JointSchema::default();
        schema.eval_joints.pop();
        assert!(matches!(schema.validate(), Err(SchemaError::EvalJointCount(13))));

        let mut schema = JointSchema::default();
        schema.input_keypoints[0] = "nose".into();
        assert!(matches!(schema.validate(), Err(SchemaError::UnknownKeypoint(_))));

        let mut schema = JointSchema::default();
        schema.leg_subset = vec![12];
        assert!(schema.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let schema = JointSchema::with_hips_in_legs();
        let text = serde_json::to_string(&schema).unwrap();
        assert_eq!(JointSchema::from_json(&text).unwrap(), schema);
    }
}
