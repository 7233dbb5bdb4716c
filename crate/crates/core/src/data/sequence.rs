use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::pose::{frame_to_json, parse_pose_keypoints, PoseFrame};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Walking condition: normal, carrying a bag, wearing a coat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Nm,
    Bg,
    Cl,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Nm, Condition::Bg, Condition::Cl];

    pub fn tag(self) -> &'static str {
        match self {
            Condition::Nm => "nm",
            Condition::Bg => "bg",
            Condition::Cl => "cl",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag().to_ascii_uppercase())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nm" => Ok(Condition::Nm),
            "bg" => Ok(Condition::Bg),
            "cl" => Ok(Condition::Cl),
            other => Err(Error::Parse {
                what: "condition".into(),
                reason: format!("`{other}` is not one of nm, bg, cl"),
            }),
        }
    }
}

/// Identity, condition, sequence number and camera view of one recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub identity: u32,
    pub condition: Condition,
    pub seq_index: u32,
    /// Camera view in degrees.
    pub view: u32,
}

impl SequenceMeta {
    /// `<id>-<condition>-<seq>-<view>`, e.g. `001-nm-01-090`.
    pub fn dir_name(&self) -> String {
        format!(
            "{:03}-{}-{:02}-{:03}",
            self.identity,
            self.condition.tag(),
            self.seq_index,
            self.view
        )
    }

    pub fn parse_dir_name(name: &str) -> Result<Self> {
        let err = |reason: &str| Error::Parse {
            what: format!("sequence directory name `{name}`"),
            reason: reason.to_string(),
        };
        let parts: Vec<&str> = name.split('-').collect();
        let [id, cond, seq, view] = parts[..] else {
            return Err(err("expected <id>-<condition>-<seq>-<view>"));
        };
        let number = |s: &str, what: &str| {
            s.parse::<u32>()
                .map_err(|_| err(&format!("{what} `{s}` is not a number")))
        };
        let seq_index = number(seq, "sequence index")?;
        if seq_index == 0 {
            return Err(err("sequence index starts at 1"));
        }
        Ok(Self {
            identity: number(id, "identity")?,
            condition: cond.parse().map_err(|_| err("unknown condition"))?,
            seq_index,
            view: number(view, "view")?,
        })
    }
}

/// `T×N×3` keypoints, `(x, y, confidence)` per joint per frame.
///
/// A joint with confidence 0 is missing and sits at `(0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    pub meta: SequenceMeta,
    num_joints: usize,
    frames: Vec<[f64; 3]>,
}

impl SkeletonSequence {
    pub fn new(meta: SequenceMeta, num_joints: usize, frames: Vec<[f64; 3]>) -> Result<Self> {
        if num_joints == 0 || frames.is_empty() || frames.len() % num_joints != 0 {
            return Err(Error::Data(format!(
                "{}: {} keypoints do not form whole frames of {num_joints} joints",
                meta.dir_name(),
                frames.len()
            )));
        }
        for (k, &[x, y, c]) in frames.iter().enumerate() {
            if !(x.is_finite() && y.is_finite()) || !(0.0..=1.0).contains(&c) {
                return Err(Error::Data(format!(
                    "{}: keypoint {k} is invalid ({x}, {y}, {c})",
                    meta.dir_name()
                )));
            }
            if c == 0.0 && (x != 0.0 || y != 0.0) {
                return Err(Error::Data(format!(
                    "{}: missing keypoint {k} is not at the origin",
                    meta.dir_name()
                )));
            }
        }
        Ok(Self {
            meta,
            num_joints,
            frames,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len() / self.num_joints
    }

    pub fn num_joints(&self) -> usize {
        self.num_joints
    }

    pub fn keypoints(&self) -> &[[f64; 3]] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &[[f64; 3]] {
        &self.frames[t * self.num_joints..(t + 1) * self.num_joints]
    }

    pub fn joint(&self, t: usize, j: usize) -> [f64; 3] {
        self.frames[t * self.num_joints + j]
    }

    /// `1×3×T×N` network input with channels x, y, confidence.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        self.window_tensor(0, self.num_frames())
    }

    /// `1×3×len×N` tensor starting at frame `start`, wrapping around the end.
    pub fn window_tensor<T: Real>(&self, start: usize, len: usize) -> Tensor<T> {
        let n = self.num_joints;
        let total = self.num_frames();
        let mut data = vec![T::zero(); 3 * len * n];
        for k in 0..len {
            let src = (start + k) % total;
            for j in 0..n {
                let p = self.frames[src * n + j];
                for (c, &v) in p.iter().enumerate() {
                    data[(c * len + k) * n + j] = T::from_f64(v);
                }
            }
        }
        Tensor::new(vec![1, 3, len, n], data).expect("window shape matches")
    }

    pub fn to_frames(&self) -> Vec<PoseFrame> {
        self.frames
            .chunks(self.num_joints)
            .map(|f| PoseFrame::new(f.to_vec()))
            .collect()
    }
}

/// Stacks frames in order and trims fully missing frames at both ends.
pub fn assemble_sequence(frames: &[PoseFrame], meta: SequenceMeta) -> Result<SkeletonSequence> {
    let Some(first) = frames.iter().position(|f| !f.missing) else {
        return Err(Error::Data(format!(
            "{}: no frame contains a detected person",
            meta.dir_name()
        )));
    };
    let last = frames.iter().rposition(|f| !f.missing).expect("first exists");
    let num_joints = frames[first].joints.len();
    let mut data = Vec::with_capacity((last - first + 1) * num_joints);
    for (t, f) in frames[first..=last].iter().enumerate() {
        if f.joints.len() != num_joints {
            return Err(Error::Data(format!(
                "{}: frame {t} has {} joints, expected {num_joints}",
                meta.dir_name(),
                f.joints.len()
            )));
        }
        data.extend_from_slice(&f.joints);
    }
    SkeletonSequence::new(meta, num_joints, data)
}

/// File name of frame `t` inside a sequence directory.
pub fn frame_file_name(meta: &SequenceMeta, t: usize) -> String {
    format!("{}_{t:012}_keypoints.json", meta.dir_name())
}

/// Keypoint files of a sequence directory, in frame order.
pub fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads `<root>/<id>-<cond>-<seq>-<view>/*.json`.
pub fn load_sequence_dir(dir: &Path, num_joints: usize) -> Result<SkeletonSequence> {
    let name = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Data(format!("{}: not a sequence directory", dir.display())))?;
    let meta = SequenceMeta::parse_dir_name(name)?;
    let files = frame_files(dir)?;
    if files.is_empty() {
        return Err(Error::Data(format!("{}: no keypoint files", dir.display())));
    }
    let frames = files
        .iter()
        .map(|path| {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_pose_keypoints(&text, num_joints).map_err(|e| match e {
                Error::Parse { what: _, reason } => Error::Parse {
                    what: path.display().to_string(),
                    reason,
                },
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    assemble_sequence(&frames, meta)
}

pub fn write_sequence_dir(root: &Path, seq: &SkeletonSequence) -> Result<PathBuf> {
    let dir = root.join(seq.meta.dir_name());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (t, frame) in seq.to_frames().iter().enumerate() {
        let path = dir.join(frame_file_name(&seq.meta, t));
        fs::write(&path, frame_to_json(frame)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(dir)
}

/// Loads every sequence directory under `root`, sorted by metadata.
///
/// Entries that are not directories (manifests, configs) are ignored.
pub fn load_dataset(root: &Path, num_joints: usize) -> Result<Vec<SkeletonSequence>> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "data directory not found"),
        ));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut seqs = dirs
        .iter()
        .map(|d| load_sequence_dir(d, num_joints))
        .collect::<Result<Vec<_>>>()?;
    seqs.sort_by_key(|s| s.meta);
    if seqs.is_empty() {
        return Err(Error::Data(format!(
            "{}: no sequence directories found",
            root.display()
        )));
    }
    Ok(seqs)
}
