mod common;

use common::{oracle_partition, random_tree, rng};
use gaitgcn::skeleton::{build_layout, partition_adjacency, LayoutSpec};
use gaitgcn::{PartitionStrategy, SkeletonLayout};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn identity_plus_adjacency(layout: &SkeletonLayout) -> Vec<f64> {
    let n = layout.num_joints();
    let mut m = layout.adjacency();
    for i in 0..n {
        m[i * n + i] += 1.0;
    }
    m
}

#[test]
fn partitions_match_label_rule_on_random_trees() {
    let mut r = rng(11);
    for _ in 0..50 {
        let n = rand::Rng::gen_range(&mut r, 1..=20);
        let layout = random_tree(n, &mut r);
        for strategy in PartitionStrategy::ALL {
            let pa = partition_adjacency(&layout, strategy);
            assert_eq!(pa.matrices(), oracle_partition(&layout, strategy).as_slice());
            assert_eq!(pa.label_sum(), identity_plus_adjacency(&layout));
        }
    }
}

#[test]
fn coco18_shape() {
    let layout = SkeletonLayout::coco18();
    assert_eq!(layout.num_joints(), 18);
    assert_eq!(layout.edges().len(), 17);
    assert_eq!(layout.gravity_joint(), 1);
    // wrist to ankle on the same side: wrist-elbow-shoulder-neck-hip-knee-ankle
    assert_eq!(layout.graph_distance(4, 10), 6);
    assert_eq!(build_layout(&LayoutSpec::default()).unwrap(), layout);
}

#[test]
fn chain_spatial_by_hand() {
    let chain = SkeletonLayout::new("chain", 3, vec![(0, 1), (1, 2)], 1).unwrap();
    let pa = partition_adjacency(&chain, PartitionStrategy::Spatial);
    assert_eq!(pa.matrix(0), &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
    assert_eq!(pa.matrix(1), &[0., 0., 0., 1., 0., 1., 0., 0., 0.]);
    assert_eq!(pa.matrix(2), &[0., 1., 0., 0., 0., 0., 0., 1., 0.]);
    let norm = pa.normalized();
    assert_eq!(norm.get(1, 1, 0), 0.5);
    assert_eq!(norm.get(1, 1, 2), 0.5);
}

#[test]
fn invalid_layouts_rejected() {
    assert!(SkeletonLayout::new("x", 3, vec![(0, 1)], 0).is_err());
    assert!(SkeletonLayout::new("x", 2, vec![(0, 2)], 0).is_err());
    assert!(SkeletonLayout::new("x", 2, vec![(0, 1), (1, 0)], 0).is_err());
    assert!(SkeletonLayout::new("x", 2, vec![(1, 1)], 0).is_err());
    assert!(SkeletonLayout::new("x", 2, vec![(0, 1)], 2).is_err());
    assert!(SkeletonLayout::new("x", 0, vec![], 0).is_err());
    assert!(build_layout(&LayoutSpec::Named("openpose25".into())).is_err());
}

#[test]
fn normalized_rows_sum_to_one() {
    let layout = SkeletonLayout::coco18();
    for strategy in PartitionStrategy::ALL {
        let pa = partition_adjacency(&layout, strategy).normalized();
        assert!(pa.is_normalized());
        for m in pa.matrices() {
            for row in m.chunks(18) {
                let s: f64 = row.iter().sum();
                assert!(s == 0.0 || (s - 1.0).abs() < 1e-12, "row sum {s}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relabelling_joints_permutes_partitions(seed in any::<u64>(), n in 1usize..=12) {
        let mut r = rng(seed);
        let layout = random_tree(n, &mut r);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let moved = layout.permuted(&perm).unwrap();
        for strategy in PartitionStrategy::ALL {
            let a = partition_adjacency(&layout, strategy);
            let b = partition_adjacency(&moved, strategy);
            for s in 0..strategy.num_labels() {
                for i in 0..n {
                    for j in 0..n {
                        prop_assert_eq!(a.get(s, i, j), b.get(s, perm[i], perm[j]));
                    }
                }
            }
        }
    }

    #[test]
    fn hop_distance_is_a_metric(seed in any::<u64>(), n in 1usize..=15) {
        let layout = random_tree(n, &mut rng(seed));
        for i in 0..n {
            prop_assert_eq!(layout.graph_distance(i, i), 0);
            for j in 0..n {
                prop_assert_eq!(layout.graph_distance(i, j), layout.graph_distance(j, i));
                for k in 0..n {
                    prop_assert!(layout.graph_distance(i, k) <= layout.graph_distance(i, j) + layout.graph_distance(j, k));
                }
            }
        }
    }
}
