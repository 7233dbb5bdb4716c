use rand::Rng;

use super::norm::BatchNorm;
use super::init_uniform;
use crate::error::{Error, Result};
use crate::skeleton::PartitionedAdjacency;
use crate::tensor::{BatchStats, Mode, Real, Tape, Tensor, Var};

/// Spatial graph convolution with per-label weights `S×C_out×C_in`.
///
/// Per frame, `F_out = Σ_s A_s · F_in · W_sᵀ` with each `A_s` row-normalized.
pub fn spatial_graph_conv<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    adjacency: &PartitionedAdjacency,
    weights: Var,
) -> Result<Var> {
    tape.graph_conv(x, adjacency, weights)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnitSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
    /// The first unit of the network has no residual path.
    pub residual: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Residual<T: Real> {
    None,
    Identity,
    /// Temporal average pooling with window = stride, then a 1×1 channel
    /// projection. Every input frame feeds the pooled output.
    Projection { stride: usize, weight: Tensor<T> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StgcnUnit<T: Real> {
    pub spec: UnitSpec,
    /// `S×C_out×C_in`, one matrix per partition label.
    pub spatial: Tensor<T>,
    pub norm1: Option<BatchNorm<T>>,
    /// `C_out×C_out×K`.
    pub temporal: Tensor<T>,
    pub temporal_bias: Tensor<T>,
    pub norm2: Option<BatchNorm<T>>,
    pub residual: Residual<T>,
}

impl<T: Real> StgcnUnit<T> {
    pub fn new<R: Rng + ?Sized>(
        spec: UnitSpec,
        labels: usize,
        kernel: usize,
        joints: usize,
        unit_norms: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::invalid(format!(
                "temporal kernel size must be odd, got {kernel}"
            )));
        }
        if !(1..=2).contains(&spec.stride) {
            return Err(Error::invalid("unit stride must be 1 or 2"));
        }
        let (c_in, c_out) = (spec.c_in, spec.c_out);
        let spatial = init_uniform(vec![labels, c_out, c_in], labels * c_in, rng);
        let temporal = init_uniform(vec![c_out, c_out, kernel], c_out * kernel, rng);
        let temporal_bias = init_uniform(vec![c_out], c_out * kernel, rng);
        let residual = if !spec.residual {
            Residual::None
        } else if c_in == c_out && spec.stride == 1 {
            Residual::Identity
        } else {
            Residual::Projection {
                stride: spec.stride,
                weight: init_uniform(vec![c_out, c_in], c_in, rng),
            }
        };
        Ok(Self {
            spec,
            spatial,
            norm1: unit_norms.then(|| BatchNorm::new(c_out, joints)),
            temporal,
            temporal_bias,
            norm2: unit_norms.then(|| BatchNorm::new(c_out, joints)),
            residual,
        })
    }

    pub fn kernel(&self) -> usize {
        self.temporal.shape()[2]
    }

    /// `relu(bn₂(tconv(relu(bn₁(gconv(x))))) + residual(x))`.
    ///
    /// Parameter handles are appended to `binds` in [`Self::named_params`]
    /// order; batch statistics (train mode) in [`Self::norms_mut`] order.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        adjacency: &PartitionedAdjacency,
        mode: Mode,
        binds: &mut Vec<Var>,
        stats: &mut Vec<Option<BatchStats<T>>>,
    ) -> Result<Var> {
        let c_in = tape.value(x).dims4()?.1;
        if c_in != self.spec.c_in {
            return Err(Error::shape(format!(
                "unit expects {} input channels, got {c_in}",
                self.spec.c_in
            )));
        }
        let w = tape.param(self.spatial.clone());
        binds.push(w);
        let mut h = spatial_graph_conv(tape, x, adjacency, w)?;
        if let Some(bn) = &self.norm1 {
            let (y, s) = bn.forward(tape, h, mode, binds)?;
            stats.push(s);
            h = y;
        }
        h = tape.relu(h);

        let u = tape.param(self.temporal.clone());
        let b = tape.param(self.temporal_bias.clone());
        binds.extend([u, b]);
        h = tape.temporal_conv(h, u, b, self.spec.stride)?;
        if let Some(bn) = &self.norm2 {
            let (y, s) = bn.forward(tape, h, mode, binds)?;
            stats.push(s);
            h = y;
        }

        let summed = match &self.residual {
            Residual::None => h,
            Residual::Identity => tape.add(h, x)?,
            Residual::Projection { stride, weight } => {
                let p = tape.param(weight.clone());
                binds.push(p);
                let pooled = if *stride > 1 {
                    tape.avg_pool_time(x, *stride)?
                } else {
                    x
                };
                let r = tape.channel_mix(pooled, p)?;
                tape.add(h, r)?
            }
        };
        Ok(tape.relu(summed))
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![(format!("{prefix}.spatial.weight"), &self.spatial)];
        if let Some(bn) = &self.norm1 {
            out.push((format!("{prefix}.norm1.gamma"), &bn.gamma));
            out.push((format!("{prefix}.norm1.beta"), &bn.beta));
        }
        out.push((format!("{prefix}.temporal.weight"), &self.temporal));
        out.push((format!("{prefix}.temporal.bias"), &self.temporal_bias));
        if let Some(bn) = &self.norm2 {
            out.push((format!("{prefix}.norm2.gamma"), &bn.gamma));
            out.push((format!("{prefix}.norm2.beta"), &bn.beta));
        }
        if let Residual::Projection { weight, .. } = &self.residual {
            out.push((format!("{prefix}.residual.weight"), weight));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.spatial];
        if let Some(bn) = &mut self.norm1 {
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
        }
        out.push(&mut self.temporal);
        out.push(&mut self.temporal_bias);
        if let Some(bn) = &mut self.norm2 {
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
        }
        if let Residual::Projection { weight, .. } = &mut self.residual {
            out.push(weight);
        }
        out
    }

    pub fn norms(&self) -> impl Iterator<Item = &BatchNorm<T>> {
        self.norm1.iter().chain(self.norm2.iter())
    }

    pub fn norms_mut(&mut self) -> impl Iterator<Item = &mut BatchNorm<T>> {
        self.norm1.iter_mut().chain(self.norm2.iter_mut())
    }
}
