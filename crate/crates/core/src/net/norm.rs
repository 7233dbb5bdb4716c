use crate::error::Result;
use crate::tensor::{BatchStats, Mode, Real, Tape, Tensor, Var};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

/// Batch norm over (batch, time) with one affine pair and one running
/// mean/variance per (channel, joint).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T: Real> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize, joints: usize) -> Self {
        let shape = vec![channels, joints];
        Self {
            gamma: Tensor::full(shape.clone(), T::one()).expect("positive dims"),
            beta: Tensor::zeros(shape.clone()).expect("positive dims"),
            running_mean: Tensor::zeros(shape.clone()).expect("positive dims"),
            running_var: Tensor::full(shape, T::one()).expect("positive dims"),
            eps: DEFAULT_EPS,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        mode: Mode,
        binds: &mut Vec<Var>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let gamma = tape.param(self.gamma.clone());
        let beta = tape.param(self.beta.clone());
        binds.extend([gamma, beta]);
        tape.batch_norm(
            x,
            gamma,
            beta,
            self.running_mean.data(),
            self.running_var.data(),
            self.eps,
            mode,
        )
    }

    /// Exponential moving update of the running statistics.
    pub fn absorb(&mut self, stats: &BatchStats<T>) {
        let m = T::from_f64(self.momentum);
        let keep = T::one() - m;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = keep * *r + m * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = keep * *r + m * b;
        }
    }
}
