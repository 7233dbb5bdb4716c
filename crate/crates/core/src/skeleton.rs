//! Joint layouts and the spatial part of the gait graph.
//!
//! A [`SkeletonLayout`] is the per-frame joint graph. Each node's spatial
//! neighborhood is itself plus its 1-hop neighbors, and
//! [`partition_adjacency`] splits that neighborhood into labelled subsets,
//! one 0/1 matrix per label. [`PartitionedAdjacency::normalized`] divides
//! every row by its count so each label contributes the mean of its members.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Built-in 18-keypoint pose-estimator layout, in keypoint order.
pub const COCO18_JOINTS: [&str; 18] = [
    "nose",
    "neck",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "right_eye",
    "left_eye",
    "right_ear",
    "left_ear",
];

const COCO18_EDGES: [(usize, usize); 17] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 4),
    (1, 5),
    (5, 6),
    (6, 7),
    (1, 8),
    (8, 9),
    (9, 10),
    (1, 11),
    (11, 12),
    (12, 13),
    (0, 14),
    (14, 16),
    (0, 15),
    (15, 17),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonLayout {
    name: String,
    num_joints: usize,
    edges: Vec<(usize, usize)>,
    gravity_joint: usize,
    hops: Vec<usize>,
}

/// How a layout is requested: by built-in name or spelled out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LayoutSpec {
    Named(String),
    Explicit {
        num_joints: usize,
        edges: Vec<(usize, usize)>,
        #[serde(default)]
        gravity_joint: usize,
    },
}

impl Default for LayoutSpec {
    fn default() -> Self {
        LayoutSpec::Named("coco18".to_string())
    }
}

pub fn build_layout(spec: &LayoutSpec) -> Result<SkeletonLayout> {
    match spec {
        LayoutSpec::Named(name) => match name.as_str() {
            "coco18" => Ok(SkeletonLayout::coco18()),
            other => Err(Error::Layout(format!("unknown layout name `{other}`"))),
        },
        LayoutSpec::Explicit {
            num_joints,
            edges,
            gravity_joint,
        } => SkeletonLayout::new("custom", *num_joints, edges.clone(), *gravity_joint),
    }
}

impl SkeletonLayout {
    /// Validates the edge list and precomputes all-pairs hop distances.
    pub fn new(
        name: impl Into<String>,
        num_joints: usize,
        edges: Vec<(usize, usize)>,
        gravity_joint: usize,
    ) -> Result<Self> {
        if num_joints == 0 {
            return Err(Error::Layout("a layout needs at least one joint".into()));
        }
        if gravity_joint >= num_joints {
            return Err(Error::Layout(format!(
                "gravity joint {gravity_joint} out of range for {num_joints} joints"
            )));
        }
        let mut seen = BTreeSet::new();
        for &(a, b) in &edges {
            if a >= num_joints || b >= num_joints {
                return Err(Error::Layout(format!(
                    "edge ({a}, {b}) out of range for {num_joints} joints"
                )));
            }
            if a == b {
                return Err(Error::Layout(format!("self-loop on joint {a}")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::Layout(format!("duplicate edge ({a}, {b})")));
            }
        }

        let mut neighbors = vec![Vec::new(); num_joints];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        let mut hops = vec![usize::MAX; num_joints * num_joints];
        for src in 0..num_joints {
            let row = &mut hops[src * num_joints..(src + 1) * num_joints];
            row[src] = 0;
            let mut queue = VecDeque::from([src]);
            while let Some(u) = queue.pop_front() {
                for &v in &neighbors[u] {
                    if row[v] == usize::MAX {
                        row[v] = row[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            if let Some(j) = row.iter().position(|&d| d == usize::MAX) {
                return Err(Error::Layout(format!(
                    "joint graph is disconnected: no path from {src} to {j}"
                )));
            }
        }

        Ok(Self {
            name: name.into(),
            num_joints,
            edges,
            gravity_joint,
            hops,
        })
    }

    /// The 18-keypoint layout with the neck as gravity joint.
    pub fn coco18() -> Self {
        Self::new("coco18", 18, COCO18_EDGES.to_vec(), 1).expect("built-in layout is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_joints(&self) -> usize {
        self.num_joints
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn gravity_joint(&self) -> usize {
        self.gravity_joint
    }

    /// Shortest-path hop count between two joints.
    ///
    /// Panics if either index is out of range.
    pub fn graph_distance(&self, i: usize, j: usize) -> usize {
        assert!(i < self.num_joints && j < self.num_joints, "joint index out of range");
        self.hops[i * self.num_joints + j]
    }

    /// Symmetric 0/1 adjacency matrix, row-major, without self loops.
    pub fn adjacency(&self) -> Vec<f64> {
        let n = self.num_joints;
        let mut a = vec![0.0; n * n];
        for &(i, j) in &self.edges {
            a[i * n + j] = 1.0;
            a[j * n + i] = 1.0;
        }
        a
    }

    /// The same skeleton with joint `k` renamed to `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_joints;
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..n).collect::<Vec<_>>() {
            return Err(Error::invalid("not a permutation of the joint indices"));
        }
        let edges = self
            .edges
            .iter()
            .map(|&(a, b)| (perm[a], perm[b]))
            .collect();
        Self::new(self.name.clone(), n, edges, perm[self.gravity_joint])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionStrategy {
    /// One label for the whole neighborhood.
    Uniform,
    /// Anchor vs. everything at hop distance 1.
    Distance,
    /// Same / farther / nearer than the anchor, measured from the gravity joint.
    Spatial,
}

impl PartitionStrategy {
    pub const ALL: [PartitionStrategy; 3] = [
        PartitionStrategy::Uniform,
        PartitionStrategy::Distance,
        PartitionStrategy::Spatial,
    ];

    pub fn num_labels(self) -> usize {
        match self {
            PartitionStrategy::Uniform => 1,
            PartitionStrategy::Distance => 2,
            PartitionStrategy::Spatial => 3,
        }
    }

    /// Label of neighbor `j` inside anchor `i`'s neighborhood.
    ///
    /// Callers must ensure `graph_distance(i, j) <= 1`.
    pub fn label(self, layout: &SkeletonLayout, anchor: usize, neighbor: usize) -> usize {
        match self {
            PartitionStrategy::Uniform => 0,
            PartitionStrategy::Distance => usize::from(anchor != neighbor),
            PartitionStrategy::Spatial => {
                let g = layout.gravity_joint();
                let ri = layout.graph_distance(anchor, g);
                let rj = layout.graph_distance(neighbor, g);
                match ri.cmp(&rj) {
                    std::cmp::Ordering::Equal => 0,
                    std::cmp::Ordering::Less => 1,
                    std::cmp::Ordering::Greater => 2,
                }
            }
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PartitionStrategy::Uniform => "uniform",
            PartitionStrategy::Distance => "distance",
            PartitionStrategy::Spatial => "spatial",
        }
    }
}

impl fmt::Display for PartitionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PartitionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(PartitionStrategy::Uniform),
            "distance" => Ok(PartitionStrategy::Distance),
            "spatial" => Ok(PartitionStrategy::Spatial),
            other => Err(Error::invalid(format!(
                "unknown partition strategy `{other}` (expected uniform, distance or spatial)"
            ))),
        }
    }
}

/// One N×N matrix per partition label; row = anchor joint, column = neighbor.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedAdjacency {
    strategy: PartitionStrategy,
    num_joints: usize,
    matrices: Vec<Vec<f64>>,
    normalized: bool,
}

/// Unnormalized 0/1 label matrices over hop-distance ≤ 1 pairs.
pub fn partition_adjacency(
    layout: &SkeletonLayout,
    strategy: PartitionStrategy,
) -> PartitionedAdjacency {
    let n = layout.num_joints();
    let mut matrices = vec![vec![0.0; n * n]; strategy.num_labels()];
    for i in 0..n {
        for j in 0..n {
            if layout.graph_distance(i, j) <= 1 {
                let s = strategy.label(layout, i, j);
                matrices[s][i * n + j] = 1.0;
            }
        }
    }
    PartitionedAdjacency {
        strategy,
        num_joints: n,
        matrices,
        normalized: false,
    }
}

impl PartitionedAdjacency {
    /// Wraps caller-provided matrices. Entries must be finite and non-negative.
    pub fn from_matrices(
        strategy: PartitionStrategy,
        num_joints: usize,
        matrices: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if matrices.len() != strategy.num_labels() {
            return Err(Error::invalid(format!(
                "{strategy} partition needs {} matrices, got {}",
                strategy.num_labels(),
                matrices.len()
            )));
        }
        for m in &matrices {
            if m.len() != num_joints * num_joints {
                return Err(Error::shape(format!(
                    "partition matrix has {} entries, expected {}",
                    m.len(),
                    num_joints * num_joints
                )));
            }
            if m.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::invalid("partition entries must be finite and >= 0"));
            }
        }
        Ok(Self {
            strategy,
            num_joints,
            matrices,
            normalized: false,
        })
    }

    pub fn strategy(&self) -> PartitionStrategy {
        self.strategy
    }

    pub fn num_labels(&self) -> usize {
        self.matrices.len()
    }

    pub fn num_joints(&self) -> usize {
        self.num_joints
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn matrix(&self, label: usize) -> &[f64] {
        &self.matrices[label]
    }

    pub fn matrices(&self) -> &[Vec<f64>] {
        &self.matrices
    }

    pub fn get(&self, label: usize, anchor: usize, neighbor: usize) -> f64 {
        self.matrices[label][anchor * self.num_joints + neighbor]
    }

    /// Divides each row of each label matrix by its sum; zero rows stay zero.
    pub fn normalized(&self) -> Self {
        let n = self.num_joints;
        let matrices = self
            .matrices
            .iter()
            .map(|m| {
                let mut m = m.clone();
                for row in m.chunks_mut(n) {
                    let sum: f64 = row.iter().sum();
                    if sum > 0.0 {
                        row.iter_mut().for_each(|v| *v /= sum);
                    }
                }
                m
            })
            .collect();
        Self {
            strategy: self.strategy,
            num_joints: n,
            matrices,
            normalized: true,
        }
    }

    /// Elementwise sum over labels.
    pub fn label_sum(&self) -> Vec<f64> {
        let n = self.num_joints;
        let mut total = vec![0.0; n * n];
        for m in &self.matrices {
            for (t, v) in total.iter_mut().zip(m) {
                *t += v;
            }
        }
        total
    }
}
