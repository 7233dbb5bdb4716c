//! Independent oracles and random instance generators shared by the
//! integration tests and the acceptance harness.
#![allow(dead_code)]

use std::collections::VecDeque;

use gaitgcn::data::{
    build_protocol, normalize_sequence, DatasetProtocol, ProtocolSpec, SequenceMeta,
    SkeletonSequence, SynthConfig, SynthManifest,
};
use gaitgcn::metric::{batch_hard_triplets, pairwise_distances, triplet_loss};
use gaitgcn::net::{literal_st_conv_reference, spatial_graph_conv, StgcnUnit, UnitSpec};
use gaitgcn::skeleton::partition_adjacency;
use gaitgcn::tensor::Mode;
use gaitgcn::{PartitionStrategy, SkeletonLayout, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], rng: &mut impl Rng, lo: f64, hi: f64) -> Tensor<f64> {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

// ---------------------------------------------------------------- graphs

/// A random connected tree on `n` joints with shuffled labels and a random
/// gravity joint.
pub fn random_tree(n: usize, rng: &mut impl Rng) -> SkeletonLayout {
    let mut names: Vec<usize> = (0..n).collect();
    names.shuffle(rng);
    let edges = (1..n)
        .map(|i| (names[rng.gen_range(0..i)], names[i]))
        .collect();
    SkeletonLayout::new("tree", n, edges, rng.gen_range(0..n)).unwrap()
}

/// Hop distances by breadth-first search from every joint.
pub fn bfs_hops(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    (0..n)
        .map(|src| {
            let mut dist = vec![usize::MAX; n];
            dist[src] = 0;
            let mut queue = VecDeque::from([src]);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
            dist
        })
        .collect()
}

/// Label matrices evaluated pair by pair from the labelling rule.
pub fn oracle_partition(layout: &SkeletonLayout, strategy: PartitionStrategy) -> Vec<Vec<f64>> {
    let n = layout.num_joints();
    let hops = bfs_hops(n, layout.edges());
    let r = &hops[layout.gravity_joint()];
    let labels = match strategy {
        PartitionStrategy::Uniform => 1,
        PartitionStrategy::Distance => 2,
        PartitionStrategy::Spatial => 3,
    };
    let mut out = vec![vec![0.0; n * n]; labels];
    for i in 0..n {
        for j in 0..n {
            if hops[i][j] > 1 {
                continue;
            }
            let s = match strategy {
                PartitionStrategy::Uniform => 0,
                PartitionStrategy::Distance => {
                    if i == j {
                        0
                    } else {
                        1
                    }
                }
                PartitionStrategy::Spatial => {
                    if r[i] == r[j] {
                        0
                    } else if r[i] < r[j] {
                        1
                    } else {
                        2
                    }
                }
            };
            out[s][i * n + j] = 1.0;
        }
    }
    out
}

/// Maximum absolute deviation between the factorized spatial + temporal
/// forward and the literal neighborhood sum on one random instance.
pub fn factorization_gap(strategy: PartitionStrategy, rng: &mut impl Rng) -> f64 {
    let n = rng.gen_range(1..=6);
    let layout = random_tree(n, rng);
    let frames = rng.gen_range(1..=8);
    let kernel = [1, 3, 5][rng.gen_range(0..3)];
    let (c_in, c_mid, c_out) = (rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=3));
    let labels = strategy.num_labels();

    let x = uniform(&[c_in, frames, n], rng, -1.0, 1.0);
    let spatial = uniform(&[labels, c_mid, c_in], rng, -1.0, 1.0);
    let temporal = uniform(&[c_out, c_mid, kernel], rng, -1.0, 1.0);

    let pa = partition_adjacency(&layout, strategy).normalized();
    let mut tape = Tape::<f64>::new();
    let xv = tape.constant(x.clone().reshape(vec![1, c_in, frames, n]).unwrap());
    let w = tape.constant(spatial.clone());
    let u = tape.constant(temporal.clone());
    let zero = tape.constant(Tensor::zeros(vec![c_out]).unwrap());
    let h = spatial_graph_conv(&mut tape, xv, &pa, w).unwrap();
    let y = tape.temporal_conv(h, u, zero, 1).unwrap();

    // combined[s + S·δ] = U_δ · W_s
    let mut combined = vec![0.0; labels * kernel * c_out * c_in];
    for d in 0..kernel {
        for s in 0..labels {
            let l = s + labels * d;
            for o in 0..c_out {
                for c in 0..c_in {
                    let mut acc = 0.0;
                    for m in 0..c_mid {
                        acc += temporal.data()[(o * c_mid + m) * kernel + d]
                            * spatial.data()[(s * c_mid + m) * c_in + c];
                    }
                    combined[(l * c_out + o) * c_in + c] = acc;
                }
            }
        }
    }
    let combined = Tensor::new(vec![labels * kernel, c_out, c_in], combined).unwrap();
    let reference = literal_st_conv_reference(&x, &combined, &layout, strategy, kernel).unwrap();
    tape.value(y)
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------- mining

/// Per anchor, the farthest same-label sample and the closest other-label
/// sample, ties broken towards the lower index.
pub fn exhaustive_batch_hard(distances: &[f64], labels: &[u32]) -> Vec<(usize, usize, usize)> {
    let b = labels.len();
    (0..b)
        .map(|a| {
            let d = |j: usize| distances[a * b + j];
            let mut positives: Vec<usize> = (0..b).filter(|&j| j != a && labels[j] == labels[a]).collect();
            let mut negatives: Vec<usize> = (0..b).filter(|&j| labels[j] != labels[a]).collect();
            positives.sort_by(|&x, &y| d(y).total_cmp(&d(x)).then(x.cmp(&y)));
            negatives.sort_by(|&x, &y| d(x).total_cmp(&d(y)).then(x.cmp(&y)));
            (a, positives[0], negatives[0])
        })
        .collect()
}

/// A random labelled batch of at most 16 rows where every label occurs at
/// least twice and at least two labels are present. Distances come from
/// random points, from points clustered by label (so margins often hold),
/// or are small integers, which forces ties.
pub fn random_mining_batch(rng: &mut impl Rng) -> (Vec<f64>, Vec<u32>) {
    let classes = rng.gen_range(2..=4);
    let mut labels = Vec::new();
    for c in 0..classes {
        for _ in 0..rng.gen_range(2..=4) {
            labels.push(c as u32);
        }
    }
    labels.shuffle(rng);
    let b = labels.len();
    let dim = rng.gen_range(1..=4);
    let mode = rng.gen_range(0..3);
    let spread = if mode == 1 { 0.1 } else { 1.0 };
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| if mode == 1 { rng.gen_range(-3.0..3.0) } else { 0.0 }).collect())
        .collect();
    let points: Vec<Vec<f64>> = labels
        .iter()
        .map(|&l| centers[l as usize].iter().map(|c| c + spread * rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut d = vec![0.0; b * b];
    for i in 0..b {
        for j in (i + 1)..b {
            let v = if mode == 2 {
                rng.gen_range(1..=3) as f64
            } else {
                gaitgcn::metric::euclidean(&points[i], &points[j])
            };
            d[i * b + j] = v;
            d[j * b + i] = v;
        }
    }
    (d, labels)
}

// ---------------------------------------------------------------- gradients

/// Builds a graph from input values; returns the output and the handles of
/// the inputs, in input order.
pub trait GraphBuilder: Fn(&mut Tape<f64>, &[Tensor<f64>]) -> (Var, Vec<Var>) {}
impl<F: Fn(&mut Tape<f64>, &[Tensor<f64>]) -> (Var, Vec<Var>)> GraphBuilder for F {}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`. Gradients that are zero by construction (a
/// bias followed by batch norm) leave both sides at roundoff level; those
/// are compared by absolute difference instead.
fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-6 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Worst norm-wise relative error, over all inputs, between the tape
/// gradient of `Σ R ⊙ f(inputs)` (R random) and central differences.
pub fn gradient_error(inputs: &[Tensor<f64>], rng: &mut impl Rng, build: impl GraphBuilder) -> f64 {
    let mut tape = Tape::new();
    let (out, vars) = build(&mut tape, inputs);
    assert_eq!(vars.len(), inputs.len());
    let shape = tape.value(out).shape().to_vec();
    let weights = uniform(&shape, rng, -1.0, 1.0);
    let w = tape.constant(weights.clone());
    let weighted = tape.mul(out, w).unwrap();
    let loss = tape.sum(weighted);
    tape.backward(loss).unwrap();

    let objective = |xs: &[Tensor<f64>]| -> f64 {
        let mut t = Tape::new();
        let (o, _) = build(&mut t, xs);
        t.value(o).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
    };

    let mut worst: f64 = 0.0;
    let mut xs = inputs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let analytic = tape.grad_tensor(v).into_data();
        let mut numeric = vec![0.0; analytic.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = xs[k].data()[i];
            xs[k].data_mut()[i] = orig + FD_STEP;
            let up = objective(&xs);
            xs[k].data_mut()[i] = orig - FD_STEP;
            let down = objective(&xs);
            xs[k].data_mut()[i] = orig;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

fn params(tape: &mut Tape<f64>, xs: &[Tensor<f64>]) -> Vec<Var> {
    xs.iter().map(|x| tape.param(x.clone())).collect()
}

pub const GRADIENT_OPS: [&str; 8] = [
    "matmul",
    "relu",
    "batch_norm",
    "temporal_conv",
    "spatial_graph_conv",
    "global_max_pool",
    "triplet_loss",
    "stgcn_unit",
];

/// One random finite-difference instance of the named operation.
pub fn gradient_instance(op: &str, rng: &mut ChaCha8Rng) -> f64 {
    match op {
        "matmul" => {
            let (m, k, n) = (rng.gen_range(1..=5), rng.gen_range(1..=5), rng.gen_range(1..=5));
            let inputs = [uniform(&[m, k], rng, -1.0, 1.0), uniform(&[k, n], rng, -1.0, 1.0)];
            gradient_error(&inputs, rng, |t, xs| {
                let v = params(t, xs);
                (t.matmul(v[0], v[1]).unwrap(), v)
            })
        }
        "relu" => {
            let shape = [rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=5)];
            let inputs = [uniform(&shape, rng, -1.0, 1.0)];
            gradient_error(&inputs, rng, |t, xs| {
                let v = params(t, xs);
                (t.relu(v[0]), v)
            })
        }
        "batch_norm" => {
            let (b, c, f, n) = (rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(2..=4), rng.gen_range(1..=4));
            let inputs = [
                uniform(&[b, c, f, n], rng, -2.0, 2.0),
                uniform(&[c, n], rng, 0.5, 1.5),
                uniform(&[c, n], rng, -0.5, 0.5),
            ];
            let zeros = vec![0.0; c * n];
            let ones = vec![1.0; c * n];
            gradient_error(&inputs, rng, |t, xs| {
                let v = params(t, xs);
                let (y, _) = t.batch_norm(v[0], v[1], v[2], &zeros, &ones, 1e-5, Mode::Train).unwrap();
                (y, v)
            })
        }
        "temporal_conv" => {
            let (b, ci, co, f, n) = (
                rng.gen_range(1..=2),
                rng.gen_range(1..=3),
                rng.gen_range(1..=3),
                rng.gen_range(1..=7),
                rng.gen_range(1..=4),
            );
            let kernel = [1, 3, 5][rng.gen_range(0..3)];
            let stride = rng.gen_range(1..=2);
            let inputs = [
                uniform(&[b, ci, f, n], rng, -1.0, 1.0),
                uniform(&[co, ci, kernel], rng, -1.0, 1.0),
                uniform(&[co], rng, -1.0, 1.0),
            ];
            gradient_error(&inputs, rng, |t, xs| {
                let v = params(t, xs);
                (t.temporal_conv(v[0], v[1], v[2], stride).unwrap(), v)
            })
        }
        "spatial_graph_conv" => {
            let n = rng.gen_range(1..=6);
            let layout = random_tree(n, rng);
            let strategy = PartitionStrategy::ALL[rng.gen_range(0..3)];
            let pa = partition_adjacency(&layout, strategy).normalized();
            let (b, ci, co, f) = (rng.gen_range(1..=2), rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=4));
            let inputs = [
                uniform(&[b, ci, f, n], rng, -1.0, 1.0),
                uniform(&[strategy.num_labels(), co, ci], rng, -1.0, 1.0),
            ];
            gradient_error(&inputs, rng, |t, xs| {
                let v = params(t, xs);
                (spatial_graph_conv(t, v[0], &pa, v[1]).unwrap(), v)
            })
        }
        "global_max_pool" => {
            let shape = [rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=5), rng.gen_range(1..=5)];
            let inputs = [uniform(&shape, rng, -1.0, 1.0)];
            gradient_error(&inputs, rng, |t, xs| {
                let v = params(t, xs);
                (t.global_max_pool(v[0]).unwrap(), v)
            })
        }
        "triplet_loss" => {
            let (p, k, dim) = (rng.gen_range(2..=3), rng.gen_range(2..=3), rng.gen_range(1..=6));
            let labels: Vec<u32> = (0..p * k).map(|i| (i / k) as u32).collect();
            let inputs = [uniform(&[p * k, dim], rng, -1.0, 1.0)];
            let margin = rng.gen_range(0.1..1.0);
            gradient_error(&inputs, rng, |t, xs| {
                let v = params(t, xs);
                let d = pairwise_distances(t, v[0]).unwrap();
                let mined = batch_hard_triplets(t.value(d).data(), &labels, margin).unwrap();
                (triplet_loss(t, d, &mined).unwrap(), v)
            })
        }
        "stgcn_unit" => {
            let n = rng.gen_range(2..=5);
            let layout = random_tree(n, rng);
            let strategy = PartitionStrategy::ALL[rng.gen_range(0..3)];
            let pa = partition_adjacency(&layout, strategy).normalized();
            let spec = UnitSpec {
                c_in: rng.gen_range(1..=3),
                c_out: rng.gen_range(1..=3),
                stride: rng.gen_range(1..=2),
                residual: rng.gen_bool(0.8),
            };
            let kernel = [1, 3, 5][rng.gen_range(0..3)];
            let mut unit = StgcnUnit::<f64>::new(spec, strategy.num_labels(), kernel, n, true, rng).unwrap();
            for p in unit.params_mut() {
                let shape = p.shape().to_vec();
                *p = uniform(&shape, rng, -1.0, 1.0);
            }
            let (b, f) = (rng.gen_range(1..=2), rng.gen_range(4..=6));
            let mut inputs = vec![uniform(&[b, spec.c_in, f, n], rng, -1.0, 1.0)];
            inputs.extend(unit.named_params("u").into_iter().map(|(_, t)| t.clone()));
            gradient_error(&inputs, rng, |t, xs| {
                let mut local = unit.clone();
                for (p, v) in local.params_mut().into_iter().zip(&xs[1..]) {
                    *p = v.clone();
                }
                let x = t.param(xs[0].clone());
                let mut binds = Vec::new();
                let y = local.forward(t, x, &pa, Mode::Train, &mut binds, &mut Vec::new()).unwrap();
                let mut vars = vec![x];
                vars.extend(binds);
                (y, vars)
            })
        }
        other => panic!("no gradient case for {other}"),
    }
}

// ---------------------------------------------------------------- data

/// A normalized synthetic dataset and its evaluation protocol.
pub struct SynthSplit {
    pub sequences: Vec<SkeletonSequence>,
    pub protocol: DatasetProtocol,
}

impl SynthSplit {
    pub fn train_set(&self) -> Vec<SkeletonSequence> {
        self.protocol.train.iter().map(|&i| self.sequences[i].clone()).collect()
    }
}

pub fn synth_split(cfg: &SynthConfig, spec: &ProtocolSpec) -> SynthSplit {
    let layout = SkeletonLayout::coco18();
    let sequences: Vec<SkeletonSequence> = SynthManifest::generate(cfg)
        .unwrap()
        .sequences()
        .unwrap()
        .iter()
        .map(|s| normalize_sequence(s, &layout).unwrap())
        .collect();
    let index: Vec<SequenceMeta> = sequences.iter().map(|s| s.meta).collect();
    let protocol = build_protocol(&index, spec).unwrap();
    SynthSplit { sequences, protocol }
}
