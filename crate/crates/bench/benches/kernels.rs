use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use gaitgcn::metric::batch_hard_triplets;
use gaitgcn::net::{build_network, NetworkConfig, StgcnNetwork};
use gaitgcn::skeleton::partition_adjacency;
use gaitgcn::tensor::Mode;
use gaitgcn::{PartitionStrategy, SkeletonLayout, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BATCH: usize = 16;
const CHANNELS: usize = 64;
const FRAMES: usize = 32;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn kernels(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let layout = SkeletonLayout::coco18();
    let joints = layout.num_joints();
    let adjacency = partition_adjacency(&layout, PartitionStrategy::Spatial).normalized();
    let x = random(&[BATCH, CHANNELS, FRAMES, joints], &mut rng);
    let gw = random(&[3, CHANNELS, CHANNELS], &mut rng);
    let tw = random(&[CHANNELS, CHANNELS, 9], &mut rng);
    let bias = random(&[CHANNELS], &mut rng);

    let mut group = c.benchmark_group("kernels");
    group.bench_function("graph_conv_fwd_bwd", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone(), true);
            let wv = tape.param(gw.clone());
            let y = tape.graph_conv(xv, &adjacency, wv).unwrap();
            let loss = tape.sum(y);
            tape.backward(loss).unwrap();
        })
    });
    group.bench_function("temporal_conv_fwd_bwd", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone(), true);
            let wv = tape.param(tw.clone());
            let bv = tape.param(bias.clone());
            let y = tape.temporal_conv(xv, wv, bv, 1).unwrap();
            let loss = tape.sum(y);
            tape.backward(loss).unwrap();
        })
    });
    group.finish();
}

fn network(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net: StgcnNetwork<f32> = build_network(&NetworkConfig::default(), &mut rng).unwrap();
    let sequence = random(&[1, 3, 64, 18], &mut rng);
    let batch = random(&[BATCH, 3, FRAMES, 18], &mut rng);

    let mut group = c.benchmark_group("network");
    group.sample_size(10);
    group.bench_function("embed_64_frames", |b| b.iter(|| net.embed(&sequence).unwrap()));
    group.bench_function("train_step_16x32", |b| {
        b.iter_batched(
            || net.clone(),
            |mut net| {
                let mut tape = Tape::new();
                let xv = tape.constant(batch.clone());
                let (out, _) = net.forward(&mut tape, xv, Mode::Train).unwrap();
                let loss = tape.sum(out);
                tape.backward(loss).unwrap();
            },
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

fn mining(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 64;
    let labels: Vec<usize> = (0..n).map(|i| i / 4).collect();
    let mut distances = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..i {
            let d = rng.gen_range(0.0..4.0);
            distances[i * n + j] = d;
            distances[j * n + i] = d;
        }
    }
    c.bench_function("batch_hard_triplets_64", |b| {
        b.iter(|| batch_hard_triplets(&distances, &labels, 0.2).unwrap())
    });
}

criterion_group!(benches, kernels, network, mining);
criterion_main!(benches);
