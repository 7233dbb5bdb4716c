use super::sequence::SkeletonSequence;
use crate::error::{Error, Result};
use crate::skeleton::SkeletonLayout;

/// Centers a sequence on the mean position of the gravity joint and scales
/// it by the median per-frame skeleton height.
///
/// Only present joints (confidence > 0) enter the statistics and get
/// transformed; missing joints stay at `(0, 0, 0)`. The result is invariant
/// to translating or uniformly scaling the input.
pub fn normalize_sequence(seq: &SkeletonSequence, layout: &SkeletonLayout) -> Result<SkeletonSequence> {
    let n = seq.num_joints();
    if n != layout.num_joints() {
        return Err(Error::Data(format!(
            "{}: sequence has {n} joints, layout `{}` has {}",
            seq.meta.dir_name(),
            layout.name(),
            layout.num_joints()
        )));
    }
    let g = layout.gravity_joint();
    let (mut cx, mut cy, mut count) = (0.0, 0.0, 0usize);
    for t in 0..seq.num_frames() {
        let [x, y, c] = seq.joint(t, g);
        if c > 0.0 {
            cx += x;
            cy += y;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Data(format!(
            "{}: gravity joint {g} is missing in every frame",
            seq.meta.dir_name()
        )));
    }
    cx /= count as f64;
    cy /= count as f64;

    let mut heights: Vec<f64> = (0..seq.num_frames())
        .filter_map(|t| {
            let ys = seq.frame(t).iter().filter(|p| p[2] > 0.0).map(|p| p[1]);
            let (lo, hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| {
                (lo.min(y), hi.max(y))
            });
            (hi >= lo).then_some(hi - lo)
        })
        .collect();
    heights.sort_by(f64::total_cmp);
    let height = median(&heights);
    if !(height > 0.0) {
        return Err(Error::Data(format!(
            "{}: median skeleton height is zero",
            seq.meta.dir_name()
        )));
    }

    let frames = seq
        .keypoints()
        .iter()
        .map(|&[x, y, c]| {
            if c > 0.0 {
                [(x - cx) / height, (y - cy) / height, c]
            } else {
                [0.0; 3]
            }
        })
        .collect();
    SkeletonSequence::new(seq.meta, n, frames)
}

fn median(sorted: &[f64]) -> f64 {
    match sorted.len() {
        0 => 0.0,
        len if len % 2 == 1 => sorted[len / 2],
        len => 0.5 * (sorted[len / 2 - 1] + sorted[len / 2]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sequence::{Condition, SequenceMeta};

    fn meta() -> SequenceMeta {
        SequenceMeta {
            identity: 3,
            condition: Condition::Nm,
            seq_index: 2,
            view: 90,
        }
    }

    fn chain() -> SkeletonLayout {
        SkeletonLayout::new("chain", 3, vec![(0, 1), (1, 2)], 1).unwrap()
    }

    #[test]
    fn centers_and_scales() {
        let seq = SkeletonSequence::new(
            meta(),
            3,
            vec![
                [10.0, 0.0, 1.0],
                [10.0, 2.0, 1.0],
                [10.0, 4.0, 1.0],
                [12.0, 0.0, 1.0],
                [12.0, 2.0, 1.0],
                [0.0, 0.0, 0.0],
            ],
        )
        .unwrap();
        let out = normalize_sequence(&seq, &chain()).unwrap();
        // heights 4 and 2 give median 3; center (11, 2)
        assert_eq!(out.joint(0, 0), [-1.0 / 3.0, -2.0 / 3.0, 1.0]);
        assert_eq!(out.joint(1, 1), [1.0 / 3.0, 0.0, 1.0]);
        assert_eq!(out.joint(1, 2), [0.0; 3]);
    }

    #[test]
    fn errors() {
        let no_root = SkeletonSequence::new(
            meta(),
            3,
            vec![[1.0, 1.0, 1.0], [0.0, 0.0, 0.0], [2.0, 2.0, 1.0]],
        )
        .unwrap();
        assert!(normalize_sequence(&no_root, &chain()).is_err());
        let flat = SkeletonSequence::new(meta(), 3, vec![[1.0, 1.0, 1.0]; 3]).unwrap();
        assert!(normalize_sequence(&flat, &chain()).is_err());
    }
}
