mod common;

use std::collections::BTreeMap;

use common::{rng, synth_split, SynthSplit};
use gaitgcn::data::{ProtocolSpec, SynthConfig};
use gaitgcn::net::{Depth, NetworkConfig};
use gaitgcn::train::{
    adam_step, group_by_identity, load_checkpoint, sample_pk_batch, save_checkpoint, AdamConfig, AdamState,
    Checkpoint, TrainConfig, Trainer,
};
use gaitgcn::Tensor;

fn small_split() -> SynthSplit {
    let cfg = SynthConfig { identities: 8, frames: 16, ..SynthConfig::default() };
    synth_split(&cfg, &ProtocolSpec::default())
}

fn shallow() -> NetworkConfig {
    NetworkConfig { depth: Depth::Shallow, ..NetworkConfig::default() }
}

fn quick(seed: u64, steps: usize) -> TrainConfig {
    TrainConfig {
        identities_per_batch: 2,
        samples_per_identity: 2,
        crop_length: 8,
        epochs: steps,
        steps_per_epoch: Some(1),
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn identical_seeds_give_identical_traces() {
    let split = small_split();
    let data = split.train_set();
    let run = |seed| {
        let mut t = Trainer::<f32>::new(&data, &shallow(), &quick(seed, 3)).unwrap();
        t.run(|_, _, _| Ok(())).unwrap();
        t.finish()
    };
    let (a, b, c) = (run(7), run(7), run(8));
    let bits = |trace: &[(u64, f64)]| trace.iter().map(|(s, l)| (*s, l.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(&a.trace), bits(&b.trace));
    assert_eq!(a.trace.len(), 3);
    assert_ne!(bits(&a.trace), bits(&c.trace));
    assert!(a.trace.iter().all(|(_, l)| l.is_finite()));
    assert_eq!(a.model.named_params(), b.model.named_params());
}

#[test]
fn zero_epochs_leave_the_model_untouched() {
    let split = small_split();
    let data = split.train_set();
    let fresh = Trainer::<f64>::new(&data, &shallow(), &quick(3, 0)).unwrap();
    let before = fresh.model().named_params().into_iter().map(|(n, t)| (n, t.clone())).collect::<Vec<_>>();
    let out = gaitgcn::train::train::<f64>(&data, &shallow(), &quick(3, 0)).unwrap();
    assert!(out.trace.is_empty());
    let after = out.model.named_params().into_iter().map(|(n, t)| (n, t.clone())).collect::<Vec<_>>();
    assert_eq!(before, after);
}

#[test]
fn every_step_moves_some_parameter() {
    let split = small_split();
    let data = split.train_set();
    let mut t = Trainer::<f64>::new(&data, &shallow(), &quick(1, 4)).unwrap();
    for _ in 0..4 {
        let before: Vec<Tensor<f64>> = t.model().named_params().into_iter().map(|(_, p)| p.clone()).collect();
        let loss = t.step().unwrap();
        let after: Vec<Tensor<f64>> = t.model().named_params().into_iter().map(|(_, p)| p.clone()).collect();
        if loss > 0.0 {
            assert_ne!(before, after);
        }
    }
}

#[test]
fn fixed_batch_overfits() {
    let split = small_split();
    let data = split.train_set();
    let cfg = TrainConfig { learning_rate: 1e-3, ..quick(2, 500) };
    let mut t = Trainer::<f32>::new(&data, &NetworkConfig::default(), &cfg).unwrap();
    let batch = t.next_batch().unwrap();
    let mut last = f64::INFINITY;
    for _ in 0..500 {
        last = t.step_on(&batch).unwrap();
        if last < 0.01 {
            break;
        }
    }
    assert!(last < 0.01, "loss stuck at {last}");
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let split = small_split();
    let data = split.train_set();
    let mut t = Trainer::<f32>::new(&data, &shallow(), &quick(5, 2)).unwrap();
    t.run(|_, _, _| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    save_checkpoint(&t.checkpoint(), &path).unwrap();

    let loaded = load_checkpoint::<f32>(&path).unwrap();
    assert_eq!(loaded, t.checkpoint());
    assert_eq!(loaded.step, 2);
    let model = loaded.network().unwrap();
    assert_eq!(model.named_params(), t.model().named_params());
    assert_eq!(model.named_buffers(), t.model().named_buffers());
    let opt = loaded.optimizer(&model).unwrap().unwrap();
    assert_eq!(opt.m, t.optimizer().m);
    assert_eq!(opt.v, t.optimizer().v);
    assert_eq!(opt.step, t.optimizer().step);

    for seq in split.sequences.iter().take(4) {
        let a = t.model().embed(&seq.to_tensor()).unwrap();
        let b = model.embed(&seq.to_tensor()).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(a.len(), 256);
    }

    // a checkpoint written in one precision loads in the other
    let wide = load_checkpoint::<f64>(&path).unwrap();
    assert_eq!(wide.tensors.len(), loaded.tensors.len());
}

#[test]
fn damaged_or_mismatched_checkpoints_are_rejected() {
    let split = small_split();
    let data = split.train_set();
    let t = Trainer::<f32>::new(&data, &shallow(), &quick(5, 1)).unwrap();
    let bytes = t.checkpoint().to_bytes();
    for cut in [0, 7, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(Checkpoint::<f32>::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Checkpoint::<f32>::from_bytes(&extra).is_err());
    let mut magic = bytes.clone();
    magic[0] ^= 0xff;
    assert!(Checkpoint::<f32>::from_bytes(&magic).is_err());
    let mut version = bytes.clone();
    version[8] = 99;
    assert!(Checkpoint::<f32>::from_bytes(&version).is_err());

    let deeper = NetworkConfig { depth: Depth::Deeper, ..NetworkConfig::default() };
    let err = t.checkpoint().network_with(&deeper).unwrap_err().to_string();
    assert!(err.contains("units."), "{err}");
    let uniform = NetworkConfig { partition: gaitgcn::PartitionStrategy::Uniform, ..shallow() };
    let err = t.checkpoint().network_with(&uniform).unwrap_err().to_string();
    assert!(err.contains("spatial.weight"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cut.bin");
    std::fs::write(&path, &bytes[..bytes.len() / 3]).unwrap();
    assert!(load_checkpoint::<f32>(&path).is_err());
}

#[test]
fn pk_batches_follow_the_sampling_rules() {
    let split = small_split();
    let data = split.train_set();
    let groups = group_by_identity(&data);
    let mut r = rng(9);
    for _ in 0..50 {
        let batch = sample_pk_batch(&data, &groups, 3, 4, 12, &mut r).unwrap();
        assert_eq!(batch.len(), 12);
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for ((&s, &start), &label) in batch.sequences.iter().zip(&batch.starts).zip(&batch.labels) {
            assert_eq!(data[s].meta.identity, label);
            assert!(start + 12 <= data[s].num_frames());
            *counts.entry(label).or_default() += 1;
        }
        assert_eq!(counts.len(), 3);
        assert!(counts.values().all(|&c| c == 4));
        assert_eq!(batch.to_tensor::<f32>(&data).unwrap().shape(), &[12, 3, 12, 18]);
    }
    assert!(sample_pk_batch(&data, &groups, 5, 2, 12, &mut r).is_err());

    // two sequences per identity and K = 4: drawn with replacement
    let mut thin: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (&id, members) in &groups {
        thin.insert(id, members[..2].to_vec());
    }
    let batch = sample_pk_batch(&data, &thin, 2, 4, 40, &mut r).unwrap();
    assert_eq!(batch.len(), 8);
    // crops longer than the sequence wrap around cyclically
    let x = batch.to_tensor::<f64>(&data).unwrap();
    assert_eq!(x.shape(), &[8, 3, 40, 18]);
}

#[test]
fn config_preconditions() {
    let split = small_split();
    let data = split.train_set();
    for bad in [
        TrainConfig { identities_per_batch: 1, ..quick(0, 1) },
        TrainConfig { samples_per_identity: 1, ..quick(0, 1) },
        TrainConfig { crop_length: 3, ..quick(0, 1) },
        TrainConfig { identities_per_batch: 9, ..quick(0, 1) },
    ] {
        assert!(Trainer::<f32>::new(&data, &shallow(), &bad).is_err());
    }
    assert_eq!(TrainConfig::default().batch_size(), 32);
}

#[test]
fn adam_first_step_by_hand() {
    let mut p = Tensor::new(vec![1], vec![1.0f64]).unwrap();
    let mut state = AdamState::new([&p]);
    let cfg = AdamConfig { learning_rate: 0.1, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 };
    adam_step(&mut [&mut p], &[&[1.0]], &mut state, &cfg).unwrap();
    assert!((p.data()[0] - 0.9).abs() < 1e-6);
    let mut q = Tensor::new(vec![2], vec![0.5f64, -0.5]).unwrap();
    let mut state = AdamState::new([&q]);
    adam_step(&mut [&mut q], &[&[0.0, 0.0]], &mut state, &cfg).unwrap();
    assert_eq!(q.data(), &[0.5, -0.5]);
    assert!(adam_step(&mut [&mut q], &[&[0.0]], &mut state, &cfg).is_err());
}
