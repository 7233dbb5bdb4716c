//! Direct evaluation of the spatio-temporal graph convolution as a weighted
//! sum over each node's labelled neighborhood. Forward-only; it exists to
//! check the factorized layers against.

use crate::error::{Error, Result};
use crate::skeleton::{PartitionStrategy, SkeletonLayout};
use crate::tensor::Tensor;

/// Evaluates, for every anchor node `(t, i)`,
///
/// ```text
/// out(t,i) = Σ_{(q,j) ∈ B(t,i)} W[l(q,j)] · x(q,j) / Z(t,i,j)
/// ```
///
/// where `B` holds joints within one hop and frames within ⌊K/2⌋,
/// `l(q,j) = s(i,j) + S·(q − t + ⌊K/2⌋)` with `s` the spatial partition label,
/// and `Z` counts the anchor-frame neighbors sharing label `s(i,j)`.
/// Frames outside `[0, T)` contribute zero.
///
/// `x` is `C_in×T×N`; `weights` is `(S·K)×C_out×C_in`. Returns `C_out×T×N`.
pub fn literal_st_conv_reference(
    x: &Tensor<f64>,
    weights: &Tensor<f64>,
    layout: &SkeletonLayout,
    strategy: PartitionStrategy,
    kernel: usize,
) -> Result<Tensor<f64>> {
    if kernel % 2 == 0 {
        return Err(Error::invalid(format!(
            "temporal kernel size must be odd, got {kernel}"
        )));
    }
    let (c_in, frames, joints) = match x.shape()[..] {
        [c, t, n] => (c, t, n),
        _ => return Err(Error::shape("reference input must be C_in×T×N")),
    };
    if joints != layout.num_joints() {
        return Err(Error::shape("input joint count differs from the layout"));
    }
    let labels = strategy.num_labels();
    let (c_out, w_in) = match weights.shape()[..] {
        [l, o, i] if l == labels * kernel => (o, i),
        _ => {
            return Err(Error::shape(format!(
                "combined weights must be {}×C_out×C_in, got {:?}",
                labels * kernel,
                weights.shape()
            )))
        }
    };
    if w_in != c_in {
        return Err(Error::shape("combined weights disagree on input channels"));
    }

    let half = kernel / 2;
    let xv = x.data();
    let wv = weights.data();
    let mut out = vec![0.0; c_out * frames * joints];
    for t in 0..frames {
        for i in 0..joints {
            let neighborhood: Vec<(usize, usize)> = (0..joints)
                .filter(|&j| layout.graph_distance(i, j) <= 1)
                .map(|j| (j, strategy.label(layout, i, j)))
                .collect();
            for q in t.saturating_sub(half)..(t + half + 1).min(frames) {
                let offset = q + half - t;
                for &(j, s) in &neighborhood {
                    let z = neighborhood.iter().filter(|&&(_, sk)| sk == s).count() as f64;
                    let l = s + labels * offset;
                    for o in 0..c_out {
                        let mut acc = 0.0;
                        for c in 0..c_in {
                            acc += wv[(l * c_out + o) * c_in + c] * xv[(c * frames + q) * joints + j];
                        }
                        out[(o * frames + t) * joints + i] += acc / z;
                    }
                }
            }
        }
    }
    Tensor::new(vec![c_out, frames, joints], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_node_average() {
        let layout = SkeletonLayout::new("pair", 2, vec![(0, 1)], 0).unwrap();
        let x = Tensor::new(vec![1, 1, 2], vec![1.0, 3.0]).unwrap();
        let w = Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
        let y = literal_st_conv_reference(&x, &w, &layout, PartitionStrategy::Uniform, 1).unwrap();
        assert_eq!(y.data(), &[2.0, 2.0]);
    }

    #[test]
    fn rejects_even_kernel() {
        let layout = SkeletonLayout::new("pair", 2, vec![(0, 1)], 0).unwrap();
        let x = Tensor::new(vec![1, 1, 2], vec![1.0, 3.0]).unwrap();
        let w = Tensor::new(vec![2, 1, 1], vec![1.0, 1.0]).unwrap();
        assert!(
            literal_st_conv_reference(&x, &w, &layout, PartitionStrategy::Uniform, 2).is_err()
        );
    }
}
