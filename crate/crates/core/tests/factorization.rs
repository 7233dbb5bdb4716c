mod common;

use common::{factorization_gap, rng, uniform};
use gaitgcn::net::literal_st_conv_reference;
use gaitgcn::{PartitionStrategy, SkeletonLayout, Tensor};

#[test]
fn factorized_layers_match_literal_neighborhood_sum() {
    for strategy in PartitionStrategy::ALL {
        let mut r = rng(31 + strategy.num_labels() as u64);
        for i in 0..50 {
            let gap = factorization_gap(strategy, &mut r);
            assert!(gap <= 1e-10, "{strategy} instance {i}: gap {gap:e}");
        }
    }
}

#[test]
fn reference_by_hand_on_a_chain() {
    // Single frame, one channel, Γ = 1: each joint averages within its
    // labelled groups, one weight per label.
    let chain = SkeletonLayout::new("chain", 3, vec![(0, 1), (1, 2)], 1).unwrap();
    let x = Tensor::new(vec![1, 1, 3], vec![1., 2., 3.]).unwrap();
    let w = Tensor::new(vec![3, 1, 1], vec![1., 10., 100.]).unwrap();
    let y = literal_st_conv_reference(&x, &w, &chain, PartitionStrategy::Spatial, 1).unwrap();
    // The neck sees both ends as farther out (label 1, mean 2); each end
    // sees the neck as closer (label 2).
    assert_eq!(y.data(), &[1. + 100. * 2., 2. + 10. * 2., 3. + 100. * 2.]);
}

#[test]
fn reference_rejects_bad_shapes() {
    let chain = SkeletonLayout::new("chain", 2, vec![(0, 1)], 0).unwrap();
    let mut r = rng(1);
    let x = uniform(&[1, 2, 2], &mut r, -1.0, 1.0);
    let w = uniform(&[3, 1, 1], &mut r, -1.0, 1.0);
    assert!(literal_st_conv_reference(&x, &w, &chain, PartitionStrategy::Spatial, 2).is_err());
    assert!(literal_st_conv_reference(&x, &w, &chain, PartitionStrategy::Distance, 1).is_err());
    let x3 = uniform(&[1, 2, 3], &mut r, -1.0, 1.0);
    assert!(literal_st_conv_reference(&x3, &w, &chain, PartitionStrategy::Spatial, 1).is_err());
}
