//! Embedding distances, batch-hard triplet mining and the triplet loss.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Var};

pub const DEFAULT_MARGIN: f64 = 0.2;

/// One ⟨anchor, positive, negative⟩ triple per batch element.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    pub anchors: Vec<usize>,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    pub margin: f64,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.anchors
            .iter()
            .zip(&self.positives)
            .zip(&self.negatives)
            .map(|((&a, &p), &n)| (a, p, n))
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Differentiable B×B distance matrix of a B×D embedding batch.
pub fn pairwise_distances<T: Real>(tape: &mut Tape<T>, embeddings: Var) -> Result<Var> {
    let (rows, _) = tape.value(embeddings).dims2()?;
    if rows < 2 {
        return Err(Error::invalid("pairwise distances need at least two rows"));
    }
    tape.pairwise_distances(embeddings)
}

/// For every anchor, the farthest same-label and the nearest other-label
/// element. Ties go to the smallest index.
///
/// `distances` is a row-major B×B matrix.
pub fn batch_hard_triplets<L: PartialEq>(
    distances: &[f64],
    labels: &[L],
    margin: f64,
) -> Result<TripletBatch> {
    let b = labels.len();
    if distances.len() != b * b {
        return Err(Error::shape(format!(
            "distance matrix has {} entries for {b} labels",
            distances.len()
        )));
    }
    if margin < 0.0 || !margin.is_finite() {
        return Err(Error::invalid("margin must be finite and non-negative"));
    }
    let mut batch = TripletBatch {
        anchors: Vec::with_capacity(b),
        positives: Vec::with_capacity(b),
        negatives: Vec::with_capacity(b),
        margin,
    };
    for a in 0..b {
        let row = &distances[a * b..(a + 1) * b];
        let mut pos: Option<usize> = None;
        let mut neg: Option<usize> = None;
        for j in 0..b {
            if labels[j] == labels[a] {
                if j != a && pos.is_none_or(|p| row[j] > row[p]) {
                    pos = Some(j);
                }
            } else if neg.is_none_or(|n| row[j] < row[n]) {
                neg = Some(j);
            }
        }
        let pos = pos.ok_or_else(|| {
            Error::invalid(format!("batch element {a} has no other sample with its label"))
        })?;
        let neg = neg.ok_or_else(|| Error::invalid("batch contains a single label"))?;
        batch.anchors.push(a);
        batch.positives.push(pos);
        batch.negatives.push(neg);
    }
    Ok(batch)
}

/// Mean hinge `max(d(a,p) − d(a,n) + margin, 0)` on the tape.
pub fn triplet_loss<T: Real>(
    tape: &mut Tape<T>,
    distances: Var,
    triplets: &TripletBatch,
) -> Result<Var> {
    let triples: Vec<_> = triplets.triples().collect();
    tape.triplet_hinge(distances, &triples, triplets.margin)
}

/// The same loss evaluated directly on a B×B matrix.
pub fn triplet_loss_value(distances: &[f64], rows: usize, triplets: &TripletBatch) -> f64 {
    let total: f64 = triplets
        .triples()
        .map(|(a, p, n)| {
            (distances[a * rows + p] - distances[a * rows + n] + triplets.margin).max(0.0)
        })
        .sum();
    total / triplets.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn dist_1d(points: &[f64]) -> Vec<f64> {
        let b = points.len();
        (0..b * b)
            .map(|k| (points[k / b] - points[k % b]).abs())
            .collect()
    }

    #[test]
    fn enumerated_batch_hard_example() {
        let d = dist_1d(&[0., 1., 3., 10.]);
        let t = batch_hard_triplets(&d, &['X', 'X', 'Y', 'Y'], 0.2).unwrap();
        assert_eq!((t.positives[0], t.negatives[0]), (1, 2));
        assert_eq!((t.positives[3], t.negatives[3]), (2, 1));
        assert_eq!(t.len(), 4);
    }

    #[test]
    fn mining_preconditions() {
        let d = dist_1d(&[0., 1., 2.]);
        assert!(batch_hard_triplets(&d, &[1, 1, 1], 0.2).is_err());
        assert!(batch_hard_triplets(&d, &[1, 1, 2], 0.2).is_err());
    }

    #[test]
    fn duplicate_embeddings_across_labels() {
        let d = dist_1d(&[0., 0., 0., 5.]);
        let t = batch_hard_triplets(&d, &[0, 1, 0, 1], 0.2).unwrap();
        assert_eq!(t.negatives[0], 1);
        assert_eq!(d[t.negatives[0]], 0.0);
    }

    fn single(dap: f64, dan: f64, margin: f64) -> f64 {
        let d = vec![0., dap, dan, dap, 0., 0., dan, 0., 0.];
        let t = TripletBatch {
            anchors: vec![0],
            positives: vec![1],
            negatives: vec![2],
            margin,
        };
        let mut tape = Tape::<f64>::new();
        let dv = tape.constant(Tensor::new(vec![3, 3], d.clone()).unwrap());
        let l = triplet_loss(&mut tape, dv, &t).unwrap();
        let v = tape.value(l).item().unwrap();
        assert_eq!(v, triplet_loss_value(&d, 3, &t));
        v
    }

    #[test]
    fn hinge_cases() {
        assert_eq!(single(2.0, 1.0, 0.3), 2.0 - 1.0 + 0.3);
        assert!((single(2.0, 1.0, 0.3) - 1.3).abs() < 1e-15);
        assert_eq!(single(0.5, 1.0, 0.3), 0.0);
        assert_eq!(single(1.0, 1.0, 0.0), 0.0);
    }

    #[test]
    fn distances_need_two_rows() {
        let mut tape = Tape::<f64>::new();
        let e = tape.constant(Tensor::zeros(vec![1, 4]).unwrap());
        assert!(pairwise_distances(&mut tape, e).is_err());
        assert_eq!(euclidean(&[0., 0.], &[3., 4.]), 5.0);
    }
}
