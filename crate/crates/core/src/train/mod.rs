//! P×K batch sampling, Adam and the batch-hard triplet training loop.

mod adam;
mod checkpoint;
mod sampler;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointConfig, FORMAT_VERSION, MAGIC,
};
pub use sampler::{group_by_identity, sample_pk_batch, PkBatch};

use crate::data::SkeletonSequence;
use crate::error::{Error, Result};
use crate::metric::{batch_hard_triplets, pairwise_distances, triplet_loss, DEFAULT_MARGIN};
use crate::net::{build_network, NetworkConfig, StgcnNetwork};
use crate::tensor::{Mode, Real, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// P: distinct identities per batch.
    pub identities_per_batch: usize,
    /// K: sequences per identity in a batch.
    pub samples_per_identity: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    /// Defaults to `max(1, training sequences / (P·K))`.
    pub steps_per_epoch: Option<usize>,
    pub crop_length: usize,
    pub seed: u64,
    /// Multiply the learning rate by `decay_factor` every this many steps.
    pub decay_every: Option<usize>,
    pub decay_factor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            identities_per_batch: 8,
            samples_per_identity: 4,
            margin: DEFAULT_MARGIN,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 50,
            steps_per_epoch: None,
            crop_length: 64,
            seed: 0,
            decay_every: None,
            decay_factor: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.identities_per_batch < 2 {
            return Err(Error::invalid("a batch needs at least 2 identities"));
        }
        if self.samples_per_identity < 2 {
            return Err(Error::invalid("a batch needs at least 2 sequences per identity"));
        }
        if self.crop_length < 4 {
            return Err(Error::invalid("crop length must be at least 4 frames"));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::invalid("margin must be finite and non-negative"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.decay_every == Some(0) {
            return Err(Error::invalid("decay interval must be positive"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor.is_finite()) {
            return Err(Error::invalid("decay factor must be finite and positive"));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::invalid("steps per epoch must be positive"));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.identities_per_batch * self.samples_per_identity
    }

    /// Learning rate in effect for `step` (counted from 1).
    pub fn learning_rate_at(&self, step: u64) -> f64 {
        match self.decay_every {
            Some(every) => self.learning_rate * self.decay_factor.powi(((step - 1) / every as u64) as i32),
            None => self.learning_rate,
        }
    }

    /// Optimizer settings for `step`.
    pub fn adam(&self, step: u64) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate_at(step),
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn total_steps(&self, train_sequences: usize) -> usize {
        let per_epoch = self
            .steps_per_epoch
            .unwrap_or_else(|| (train_sequences / self.batch_size()).max(1));
        self.epochs * per_epoch
    }
}

/// `(step, loss)` pairs, steps counted from 1.
pub type LossTrace = Vec<(u64, f64)>;

/// `step,loss` CSV with a header row.
pub fn loss_csv(trace: &[(u64, f64)]) -> String {
    let mut out = String::from("step,loss\n");
    for (step, loss) in trace {
        writeln!(out, "{step},{loss}").expect("writing to a string");
    }
    out
}

/// Stateful training loop over a fixed training set.
pub struct Trainer<'a, T: Real> {
    data: &'a [SkeletonSequence],
    groups: BTreeMap<u32, Vec<usize>>,
    cfg: TrainConfig,
    model: StgcnNetwork<T>,
    optimizer: AdamState<T>,
    rng: ChaCha8Rng,
    step: u64,
    trace: LossTrace,
}

impl<'a, T: Real> Trainer<'a, T> {
    /// Initializes the network from the seed. Initialization and batch
    /// sampling draw from separate streams of the same seed.
    pub fn new(data: &'a [SkeletonSequence], network: &NetworkConfig, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = build_network(network, &mut init_rng)?;
        Self::with_model(data, model, cfg)
    }

    pub fn with_model(data: &'a [SkeletonSequence], model: StgcnNetwork<T>, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let groups = group_by_identity(data);
        if groups.len() < cfg.identities_per_batch {
            return Err(Error::Data(format!(
                "training set has {} identities, batches need {}",
                groups.len(),
                cfg.identities_per_batch
            )));
        }
        if cfg.crop_length < model.min_frames() {
            return Err(Error::invalid(format!(
                "crop length {} is shorter than the network minimum of {} frames",
                cfg.crop_length,
                model.min_frames()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        Ok(Self {
            data,
            groups,
            cfg: cfg.clone(),
            optimizer: AdamState::new(model.named_params().into_iter().map(|(_, t)| t)),
            model,
            rng,
            step: 0,
            trace: Vec::new(),
        })
    }

    pub fn model(&self) -> &StgcnNetwork<T> {
        &self.model
    }

    pub fn optimizer(&self) -> &AdamState<T> {
        &self.optimizer
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn total_steps(&self) -> usize {
        self.cfg.total_steps(self.data.len())
    }

    pub fn trace(&self) -> &[(u64, f64)] {
        &self.trace
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint::capture(&self.model, Some(&self.optimizer), Some(&self.cfg), self.step)
    }

    pub fn next_batch(&mut self) -> Result<PkBatch> {
        sample_pk_batch(
            self.data,
            &self.groups,
            self.cfg.identities_per_batch,
            self.cfg.samples_per_identity,
            self.cfg.crop_length,
            &mut self.rng,
        )
    }

    /// Samples a batch and takes one optimizer step on it.
    pub fn step(&mut self) -> Result<f64> {
        let batch = self.next_batch()?;
        self.step_on(&batch)
    }

    /// One optimizer step on a given batch; returns the loss before the update.
    pub fn step_on(&mut self, batch: &PkBatch) -> Result<f64> {
        let step = self.step + 1;
        let input = batch.to_tensor::<T>(self.data)?;
        let mut tape = Tape::new();
        let x = tape.constant(input);
        let (embeddings, binds) = self.model.forward(&mut tape, x, Mode::Train)?;
        let distances = pairwise_distances(&mut tape, embeddings)?;
        let matrix = tape.value(distances).to_f64();
        let triplets = batch_hard_triplets(&matrix, &batch.labels, self.cfg.margin)?;
        let loss = triplet_loss(&mut tape, distances, &triplets)?;
        let value = tape.value(loss).item()?.to_f64();
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { step, value });
        }
        tape.backward(loss)?;
        let grads: Vec<Vec<T>> = binds.params.iter().map(|&v| tape.grad_tensor(v).into_data()).collect();
        let grad_refs: Vec<&[T]> = grads.iter().map(Vec::as_slice).collect();
        adam_step(&mut self.model.params_mut(), &grad_refs, &mut self.optimizer, &self.cfg.adam(step))?;
        self.step = step;
        self.trace.push((step, value));
        Ok(value)
    }

    /// Runs the configured number of steps, calling `on_step` after each.
    pub fn run(&mut self, mut on_step: impl FnMut(&Self, u64, f64) -> Result<()>) -> Result<()> {
        let total = self.total_steps() as u64;
        while self.step < total {
            let loss = self.step()?;
            on_step(self, self.step, loss)?;
        }
        Ok(())
    }

    pub fn finish(self) -> TrainOutcome<T> {
        TrainOutcome {
            model: self.model,
            optimizer: self.optimizer,
            config: self.cfg,
            step: self.step,
            trace: self.trace,
        }
    }
}

pub struct TrainOutcome<T: Real> {
    pub model: StgcnNetwork<T>,
    pub optimizer: AdamState<T>,
    pub config: TrainConfig,
    pub step: u64,
    pub trace: LossTrace,
}

impl<T: Real> TrainOutcome<T> {
    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint::capture(&self.model, Some(&self.optimizer), Some(&self.config), self.step)
    }
}

/// Trains a freshly initialized network for `cfg.epochs` epochs.
pub fn train<T: Real>(
    data: &[SkeletonSequence],
    network: &NetworkConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let mut trainer = Trainer::new(data, network, cfg)?;
    trainer.run(|_, _, _| Ok(()))?;
    Ok(trainer.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_format() {
        assert_eq!(loss_csv(&[(1, 0.5), (2, 0.25)]), "step,loss\n1,0.5\n2,0.25\n");
        assert_eq!(loss_csv(&[]), "step,loss\n");
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { identities_per_batch: 1, ..TrainConfig::default() },
            TrainConfig { samples_per_identity: 1, ..TrainConfig::default() },
            TrainConfig { crop_length: 3, ..TrainConfig::default() },
            TrainConfig { margin: -0.1, ..TrainConfig::default() },
            TrainConfig { decay_every: Some(0), ..TrainConfig::default() },
            TrainConfig { decay_factor: 0.0, ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
        let cfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
        assert_eq!(cfg.total_steps(64), 6);
        assert_eq!(cfg.total_steps(10), 3);
    }

    #[test]
    fn step_decay() {
        let flat = TrainConfig { learning_rate: 0.5, ..TrainConfig::default() };
        assert_eq!(flat.learning_rate_at(1000), 0.5);
        let cfg = TrainConfig { decay_every: Some(10), decay_factor: 0.5, ..flat };
        let rates: Vec<f64> = [1, 10, 11, 20, 21].iter().map(|&s| cfg.learning_rate_at(s)).collect();
        assert_eq!(rates, [0.5, 0.5, 0.25, 0.25, 0.125]);
    }
}
