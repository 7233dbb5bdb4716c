use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::norm::BatchNorm;
use super::unit::{StgcnUnit, UnitSpec};
use super::Bindings;
use crate::error::{Error, Result};
use crate::skeleton::{
    build_layout, partition_adjacency, LayoutSpec, PartitionStrategy, PartitionedAdjacency,
    SkeletonLayout,
};
use crate::tensor::{BatchStats, Mode, Real, Tape, Tensor, Var};

pub const EMBEDDING_DIM: usize = 256;
/// Input channels: x, y and keypoint confidence.
pub const INPUT_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Depth {
    Shallow,
    Normal,
    Deeper,
}

impl Depth {
    pub const ALL: [Depth; 3] = [Depth::Shallow, Depth::Normal, Depth::Deeper];

    /// Number of stride-1 units in each of the 64, 128 and 256 channel blocks,
    /// not counting the unit that enters the block.
    fn block_repeats(self) -> [usize; 3] {
        match self {
            Depth::Shallow => [2, 1, 1],
            Depth::Normal => [3, 2, 2],
            Depth::Deeper => [3, 3, 3],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Depth::Shallow => "shallow",
            Depth::Normal => "normal",
            Depth::Deeper => "deeper",
        }
    }
}

impl fmt::Display for Depth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Depth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "shallow" => Ok(Depth::Shallow),
            "normal" => Ok(Depth::Normal),
            "deeper" => Ok(Depth::Deeper),
            other => Err(Error::invalid(format!(
                "unknown depth `{other}` (expected shallow, normal or deeper)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub depth: Depth,
    pub partition: PartitionStrategy,
    /// Temporal kernel size, odd.
    pub temporal_kernel: usize,
    pub layout: LayoutSpec,
    pub embedding_dim: usize,
    /// Batch norm after the spatial and the temporal convolution of each unit.
    pub unit_norms: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            depth: Depth::Normal,
            partition: PartitionStrategy::Spatial,
            temporal_kernel: 9,
            layout: LayoutSpec::default(),
            embedding_dim: EMBEDDING_DIM,
            unit_norms: true,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temporal_kernel % 2 == 0 {
            return Err(Error::invalid(format!(
                "temporal kernel size must be odd, got {}",
                self.temporal_kernel
            )));
        }
        if self.embedding_dim != EMBEDDING_DIM {
            return Err(Error::invalid(format!(
                "embedding dimension is fixed at {EMBEDDING_DIM}, got {}",
                self.embedding_dim
            )));
        }
        Ok(())
    }

    /// `(C_in, C_out, stride)` per unit.
    pub fn unit_specs(&self) -> Vec<UnitSpec> {
        let [r64, r128, r256] = self.depth.block_repeats();
        let mut specs = vec![UnitSpec {
            c_in: INPUT_CHANNELS,
            c_out: 64,
            stride: 1,
            residual: false,
        }];
        let mut push = |c_in, c_out, stride| {
            specs.push(UnitSpec {
                c_in,
                c_out,
                stride,
                residual: true,
            })
        };
        (0..r64).for_each(|_| push(64, 64, 1));
        push(64, 128, 2);
        (0..r128).for_each(|_| push(128, 128, 1));
        push(128, 256, 2);
        (0..r256).for_each(|_| push(256, 256, 1));
        specs
    }
}

/// Input batch norm, the ST-GCN units and global max pooling.
#[derive(Debug, Clone)]
pub struct StgcnNetwork<T: Real> {
    config: NetworkConfig,
    layout: SkeletonLayout,
    adjacency: PartitionedAdjacency,
    pub input_norm: BatchNorm<T>,
    pub units: Vec<StgcnUnit<T>>,
}

/// Builds and randomly initializes a network for `config`.
pub fn build_network<T: Real, R: Rng + ?Sized>(
    config: &NetworkConfig,
    rng: &mut R,
) -> Result<StgcnNetwork<T>> {
    config.validate()?;
    let layout = build_layout(&config.layout)?;
    let joints = layout.num_joints();
    let adjacency = partition_adjacency(&layout, config.partition).normalized();
    let labels = adjacency.num_labels();
    let units = config
        .unit_specs()
        .into_iter()
        .map(|spec| {
            StgcnUnit::new(
                spec,
                labels,
                config.temporal_kernel,
                joints,
                config.unit_norms,
                rng,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StgcnNetwork {
        config: config.clone(),
        input_norm: BatchNorm::new(INPUT_CHANNELS, joints),
        layout,
        adjacency,
        units,
    })
}

impl<T: Real> StgcnNetwork<T> {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layout(&self) -> &SkeletonLayout {
        &self.layout
    }

    pub fn adjacency(&self) -> &PartitionedAdjacency {
        &self.adjacency
    }

    pub fn num_units(&self) -> usize {
        self.units.len()
    }

    /// Channel count at the input and after every unit.
    pub fn channel_trace(&self) -> Vec<usize> {
        std::iter::once(INPUT_CHANNELS)
            .chain(self.units.iter().map(|u| u.spec.c_out))
            .collect()
    }

    /// Shortest input the strided units can reduce without running out of frames.
    pub fn min_frames(&self) -> usize {
        self.units
            .iter()
            .map(|u| u.spec.stride)
            .product::<usize>()
            .max(1)
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        match *shape {
            [_, c, t, n] => {
                if c != INPUT_CHANNELS || n != self.layout.num_joints() {
                    return Err(Error::shape(format!(
                        "network input must be B×{INPUT_CHANNELS}×T×{}, got {shape:?}",
                        self.layout.num_joints()
                    )));
                }
                if t < self.min_frames() {
                    return Err(Error::invalid(format!(
                        "sequence too short: {t} frames, need at least {}",
                        self.min_frames()
                    )));
                }
                Ok(())
            }
            _ => Err(Error::shape(format!(
                "network input must be rank 4, got {shape:?}"
            ))),
        }
    }

    fn forward_inner(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        mode: Mode,
    ) -> Result<(Var, Bindings, Vec<Option<BatchStats<T>>>)> {
        self.check_input(tape.value(x).shape())?;
        let mut binds = Vec::new();
        let mut stats = Vec::new();
        let (mut h, s) = self.input_norm.forward(tape, x, mode, &mut binds)?;
        stats.push(s);
        for unit in &self.units {
            h = unit.forward(tape, h, &self.adjacency, mode, &mut binds, &mut stats)?;
        }
        let pooled = tape.global_max_pool(h)?;
        Ok((pooled, Bindings { params: binds }, stats))
    }

    /// Forward pass recording onto `tape`; returns the B×256 embeddings.
    ///
    /// In train mode the batch-norm running statistics are updated.
    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<(Var, Bindings)> {
        let (out, binds, stats) = self.forward_inner(tape, x, mode)?;
        if mode == Mode::Train {
            for (bn, s) in self.norms_mut().zip(stats) {
                if let Some(s) = s {
                    bn.absorb(&s);
                }
            }
        }
        Ok((out, binds))
    }

    /// Eval-mode forward pass on a shared, unchanged network.
    pub fn forward_frozen(&self, tape: &mut Tape<T>, x: Var) -> Result<(Var, Bindings)> {
        let (out, binds, _) = self.forward_inner(tape, x, Mode::Eval)?;
        Ok((out, binds))
    }

    /// Eval-mode embedding of a single `1×3×T×N` input.
    pub fn embed(&self, input: &Tensor<T>) -> Result<Vec<T>> {
        if input.shape().first() != Some(&1) {
            return Err(Error::shape(format!(
                "embed takes a single sequence (1×3×T×N), got {:?}",
                input.shape()
            )));
        }
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let (out, _) = self.forward_frozen(&mut tape, x)?;
        Ok(tape.value(out).data().to_vec())
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            ("input_norm.gamma".to_string(), &self.input_norm.gamma),
            ("input_norm.beta".to_string(), &self.input_norm.beta),
        ];
        for (i, unit) in self.units.iter().enumerate() {
            out.extend(unit.named_params(&format!("units.{i}")));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.input_norm.gamma, &mut self.input_norm.beta];
        for unit in &mut self.units {
            out.extend(unit.params_mut());
        }
        out
    }

    fn norm_names(&self) -> Vec<String> {
        let mut names = vec!["input_norm".to_string()];
        for (i, unit) in self.units.iter().enumerate() {
            if unit.norm1.is_some() {
                names.push(format!("units.{i}.norm1"));
            }
            if unit.norm2.is_some() {
                names.push(format!("units.{i}.norm2"));
            }
        }
        names
    }

    /// Batch-norm running statistics, which are state but not parameters.
    pub fn named_buffers(&self) -> Vec<(String, &Tensor<T>)> {
        let norms = std::iter::once(&self.input_norm).chain(self.units.iter().flat_map(|u| u.norms()));
        self.norm_names()
            .into_iter()
            .zip(norms)
            .flat_map(|(name, bn)| {
                [
                    (format!("{name}.running_mean"), &bn.running_mean),
                    (format!("{name}.running_var"), &bn.running_var),
                ]
            })
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.norms_mut()
            .flat_map(|bn| [&mut bn.running_mean, &mut bn.running_var])
            .collect()
    }

    pub fn norms_mut(&mut self) -> impl Iterator<Item = &mut BatchNorm<T>> {
        std::iter::once(&mut self.input_norm).chain(self.units.iter_mut().flat_map(|u| u.norms_mut()))
    }

    pub fn num_parameters(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }
}
