//! Per-frame keypoint files as written by 2-D pose estimators:
//! `{"people": [{"pose_keypoints_2d": [x0, y0, c0, x1, ...]}, ...]}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Keypoints of the selected person in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseFrame {
    pub joints: Vec<[f64; 3]>,
    /// No person was detected; all joints are zero.
    pub missing: bool,
}

impl PoseFrame {
    pub fn new(joints: Vec<[f64; 3]>) -> Self {
        let missing = joints.iter().all(|j| j[2] == 0.0);
        Self { joints, missing }
    }

    pub fn missing(num_joints: usize) -> Self {
        Self {
            joints: vec![[0.0; 3]; num_joints],
            missing: true,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    version: Option<f64>,
    people: Vec<Person>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Person {
    pose_keypoints_2d: Vec<f64>,
}

fn parse_err(reason: impl Into<String>) -> Error {
    Error::Parse {
        what: "keypoint file".into(),
        reason: reason.into(),
    }
}

/// Parses one frame file, keeping the person with the highest total
/// confidence (the first one on ties). No people gives a missing frame.
pub fn parse_pose_keypoints(content: &str, num_joints: usize) -> Result<PoseFrame> {
    let file: PoseFile = serde_json::from_str(content).map_err(|e| parse_err(e.to_string()))?;
    let mut best: Option<(f64, Vec<[f64; 3]>)> = None;
    for (k, person) in file.people.iter().enumerate() {
        let flat = &person.pose_keypoints_2d;
        if flat.len() % 3 != 0 || flat.len() != 3 * num_joints {
            return Err(parse_err(format!(
                "person {k} has {} keypoint values, expected {}",
                flat.len(),
                3 * num_joints
            )));
        }
        let mut joints = Vec::with_capacity(num_joints);
        for triple in flat.chunks_exact(3) {
            let (x, y, c) = (triple[0], triple[1], triple[2]);
            if !(x.is_finite() && y.is_finite() && (0.0..=1.0).contains(&c)) {
                return Err(parse_err(format!(
                    "person {k} has an invalid keypoint ({x}, {y}, {c})"
                )));
            }
            // undetected joints are reported at the origin with c = 0
            joints.push(if c == 0.0 { [0.0; 3] } else { [x, y, c] });
        }
        let total: f64 = joints.iter().map(|j| j[2]).sum();
        if best.as_ref().is_none_or(|(b, _)| total > *b) {
            best = Some((total, joints));
        }
    }
    Ok(match best {
        Some((_, joints)) => PoseFrame::new(joints),
        None => PoseFrame::missing(num_joints),
    })
}

/// Serializes a frame in the same format; a missing frame has no people.
pub fn frame_to_json(frame: &PoseFrame) -> String {
    let people = if frame.missing {
        Vec::new()
    } else {
        vec![Person {
            pose_keypoints_2d: frame.joints.iter().flatten().copied().collect(),
        }]
    };
    serde_json::to_string(&PoseFile {
        version: Some(1.3),
        people,
    })
    .expect("keypoints are finite")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn person(values: &[f64]) -> String {
        format!(
            "{{\"pose_keypoints_2d\":[{}]}}",
            values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
        )
    }

    #[test]
    fn single_person_de_flattens_in_order() {
        let values: Vec<f64> = (0..54).map(|i| if i % 3 == 2 { 0.5 } else { i as f64 }).collect();
        let text = format!("{{\"version\":1.3,\"people\":[{}]}}", person(&values));
        let f = parse_pose_keypoints(&text, 18).unwrap();
        assert_eq!(f.joints.len(), 18);
        assert_eq!(f.joints[0], [0.0, 1.0, 0.5]);
        assert_eq!(f.joints[17], [51.0, 52.0, 0.5]);
        assert!(!f.missing);
    }

    #[test]
    fn empty_people_is_missing() {
        let f = parse_pose_keypoints("{\"people\":[]}", 18).unwrap();
        assert!(f.missing);
        assert!(f.joints.iter().all(|j| *j == [0.0; 3]));
    }

    #[test]
    fn picks_most_confident_person() {
        let weak: Vec<f64> = [1.0, 1.0, 0.61].repeat(10);
        let strong: Vec<f64> = [2.0, 2.0, 1.0].repeat(10)
            .into_iter()
            .enumerate()
            .map(|(i, v)| if i == 29 { 0.2 } else { v })
            .collect();
        let text = format!("{{\"people\":[{},{}]}}", person(&weak), person(&strong));
        let f = parse_pose_keypoints(&text, 10).unwrap();
        let total: f64 = f.joints.iter().map(|j| j[2]).sum();
        assert!((total - 9.2).abs() < 1e-12);
        assert_eq!(f.joints[0][0], 2.0);
    }

    #[test]
    fn malformed_inputs() {
        assert!(parse_pose_keypoints("{\"people\":[", 18).is_err());
        assert!(parse_pose_keypoints("{\"people\":[{\"pose_keypoints_2d\":[1,2]}]}", 18).is_err());
        let short = format!("{{\"people\":[{}]}}", person(&[1.0; 51]));
        assert!(parse_pose_keypoints(&short, 18).is_err());
    }

    #[test]
    fn zero_confidence_joint_is_zeroed() {
        let text = "{\"people\":[{\"pose_keypoints_2d\":[5,6,0,1,2,0.3]}]}";
        let f = parse_pose_keypoints(text, 2).unwrap();
        assert_eq!(f.joints[0], [0.0; 3]);
        assert_eq!(f.joints[1], [1.0, 2.0, 0.3]);
    }
}
