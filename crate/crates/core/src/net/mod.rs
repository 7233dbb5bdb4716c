//! The spatio-temporal graph convolutional network.
//!
//! Each [`StgcnUnit`] is a partitioned spatial graph convolution followed by
//! a temporal convolution, with batch norm, ReLU and a residual path. The
//! full [`StgcnNetwork`] stacks 7, 10 or 12 units and max-pools over time
//! and joints to a 256-d embedding.

mod model;
mod norm;
mod reference;
mod unit;

pub use model::{build_network, Depth, NetworkConfig, StgcnNetwork, EMBEDDING_DIM};
pub use norm::BatchNorm;
pub use reference::literal_st_conv_reference;
pub use unit::{spatial_graph_conv, Residual, StgcnUnit, UnitSpec};

use crate::tensor::{Real, Tensor, Var};
use rand::distributions::{Distribution, Uniform};
use rand::Rng;

/// Uniform in ±1/√fan_in.
pub(crate) fn init_uniform<T: Real, R: Rng + ?Sized>(
    shape: Vec<usize>,
    fan_in: usize,
    rng: &mut R,
) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    let len = shape.iter().product();
    let data = (0..len).map(|_| T::from_f64(dist.sample(rng))).collect();
    Tensor::new(shape, data).expect("shape product matches")
}

/// Parameter handles bound on a tape during one forward pass, in the order
/// of [`StgcnNetwork::named_params`].
#[derive(Debug, Default, Clone)]
pub struct Bindings {
    pub params: Vec<Var>,
}
