use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::SkeletonSequence;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Which sequences (and crop offsets) make up one P×K batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PkBatch {
    /// Indices into the training set.
    pub sequences: Vec<usize>,
    /// Crop start per entry; crops wrap around the sequence end.
    pub starts: Vec<usize>,
    pub labels: Vec<u32>,
    pub crop: usize,
}

impl PkBatch {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Stacks the crops into a `B×3×crop×N` tensor.
    pub fn to_tensor<T: Real>(&self, data: &[SkeletonSequence]) -> Result<Tensor<T>> {
        let joints = data[self.sequences[0]].num_joints();
        let mut out = Vec::with_capacity(self.len() * 3 * self.crop * joints);
        for (&s, &start) in self.sequences.iter().zip(&self.starts) {
            if data[s].num_joints() != joints {
                return Err(Error::shape("training sequences disagree on joint count"));
            }
            out.extend(data[s].window_tensor::<T>(start, self.crop).into_data());
        }
        Tensor::new(vec![self.len(), 3, self.crop, joints], out)
    }
}

/// Training-set indices grouped by identity, in label order.
pub fn group_by_identity(data: &[SkeletonSequence]) -> BTreeMap<u32, Vec<usize>> {
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, s) in data.iter().enumerate() {
        groups.entry(s.meta.identity).or_default().push(i);
    }
    groups
}

/// Draws `p` distinct identities and `k` sequences of each, every one
/// cropped to `crop` frames at a random start.
///
/// An identity with fewer than `k` sequences is sampled with replacement.
pub fn sample_pk_batch<R: Rng + ?Sized>(
    data: &[SkeletonSequence],
    groups: &BTreeMap<u32, Vec<usize>>,
    p: usize,
    k: usize,
    crop: usize,
    rng: &mut R,
) -> Result<PkBatch> {
    if groups.len() < p {
        return Err(Error::Data(format!(
            "batch needs {p} identities but the training set has {}",
            groups.len()
        )));
    }
    if p == 0 || k == 0 || crop == 0 {
        return Err(Error::invalid("batch dimensions must be positive"));
    }
    let ids: Vec<u32> = groups.keys().copied().collect();
    let mut batch = PkBatch {
        sequences: Vec::with_capacity(p * k),
        starts: Vec::with_capacity(p * k),
        labels: Vec::with_capacity(p * k),
        crop,
    };
    for &id in ids.choose_multiple(rng, p) {
        let members = &groups[&id];
        let picked: Vec<usize> = if members.len() >= k {
            members.choose_multiple(rng, k).copied().collect()
        } else {
            (0..k)
                .map(|_| *members.choose(rng).expect("groups are non-empty"))
                .collect()
        };
        for s in picked {
            let frames = data[s].num_frames();
            let start = if frames >= crop {
                rng.gen_range(0..=frames - crop)
            } else {
                rng.gen_range(0..frames)
            };
            batch.sequences.push(s);
            batch.starts.push(start);
            batch.labels.push(id);
        }
    }
    Ok(batch)
}
