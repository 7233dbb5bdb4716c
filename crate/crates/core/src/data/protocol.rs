use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::sequence::{Condition, SequenceMeta};
use crate::error::{Error, Result};

/// Sequences of one condition with index in `first..=last`, e.g. `NM #1-4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selector {
    pub condition: Condition,
    pub first: u32,
    pub last: u32,
}

impl Selector {
    pub const fn new(condition: Condition, first: u32, last: u32) -> Self {
        Self {
            condition,
            first,
            last,
        }
    }

    pub fn matches(&self, meta: &SequenceMeta) -> bool {
        meta.condition == self.condition && (self.first..=self.last).contains(&meta.seq_index)
    }

    fn overlaps(&self, other: &Selector) -> bool {
        self.condition == other.condition && self.first <= other.last && other.first <= self.last
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.first == self.last {
            write!(f, "{} #{}", self.condition, self.first)
        } else {
            write!(f, "{} #{}-{}", self.condition, self.first, self.last)
        }
    }
}

/// Parses `nm:1-4`, `bg:2` or the display form `NM #1-4`.
impl FromStr for Selector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let err = |reason: &str| Error::Parse {
            what: format!("sequence selector `{s}`"),
            reason: reason.into(),
        };
        let (cond, range) = s
            .split_once(':')
            .or_else(|| s.split_once('#'))
            .ok_or_else(|| err("expected <condition>:<first>-<last>"))?;
        let condition: Condition = cond.trim().parse().map_err(|_| err("unknown condition"))?;
        let number = |v: &str| v.trim().parse::<u32>().map_err(|_| err("bad sequence index"));
        let (first, last) = match range.split_once('-') {
            Some((a, b)) => (number(a)?, number(b)?),
            None => {
                let v = number(range)?;
                (v, v)
            }
        };
        if first == 0 || last < first {
            return Err(err("indices must satisfy 1 <= first <= last"));
        }
        Ok(Self::new(condition, first, last))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSpec {
    /// Number of identities (lowest labels first) used for training;
    /// `None` takes the first half.
    pub train_identities: Option<usize>,
    pub gallery: Selector,
    pub probes: Vec<Selector>,
}

impl Default for ProtocolSpec {
    /// Gallery NM #1-4; probes NM #5-6, BG #1-2 and CL #1-2.
    fn default() -> Self {
        Self {
            train_identities: None,
            gallery: Selector::new(Condition::Nm, 1, 4),
            probes: vec![
                Selector::new(Condition::Nm, 5, 6),
                Selector::new(Condition::Bg, 1, 2),
                Selector::new(Condition::Cl, 1, 2),
            ],
        }
    }
}

/// A materialized split. Sets hold indices into the dataset index.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetProtocol {
    pub spec: ProtocolSpec,
    pub train_ids: Vec<u32>,
    pub test_ids: Vec<u32>,
    pub train: Vec<usize>,
    pub gallery: Vec<usize>,
    /// One set per probe selector, in spec order.
    pub probes: Vec<Vec<usize>>,
}

pub fn build_protocol(index: &[SequenceMeta], spec: &ProtocolSpec) -> Result<DatasetProtocol> {
    for (k, p) in spec.probes.iter().enumerate() {
        if p.overlaps(&spec.gallery) {
            return Err(Error::invalid(format!(
                "probe selector {p} overlaps the gallery selector {}",
                spec.gallery
            )));
        }
        if spec.probes[..k].iter().any(|q| q.overlaps(p)) {
            return Err(Error::invalid(format!("probe selector {p} is listed twice")));
        }
    }
    let ids: Vec<u32> = index
        .iter()
        .map(|m| m.identity)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n_train = spec.train_identities.unwrap_or(ids.len() / 2);
    if n_train == 0 || n_train >= ids.len() {
        return Err(Error::Data(format!(
            "cannot split {} identities into {n_train} for training and at least one for testing",
            ids.len()
        )));
    }
    let (train_ids, test_ids) = ids.split_at(n_train);
    let is_test = |m: &SequenceMeta| test_ids.binary_search(&m.identity).is_ok();

    // every (test identity, view) must carry the full gallery
    let mut present: BTreeMap<(u32, u32), BTreeSet<u32>> = BTreeMap::new();
    for m in index.iter().filter(|m| is_test(m)) {
        let seqs = present.entry((m.identity, m.view)).or_default();
        if spec.gallery.matches(m) {
            seqs.insert(m.seq_index);
        }
    }
    for ((id, view), seqs) in &present {
        if let Some(missing) = (spec.gallery.first..=spec.gallery.last).find(|s| !seqs.contains(s)) {
            return Err(Error::Data(format!(
                "test identity {id:03} at view {view} lacks gallery sequence {} #{missing}",
                spec.gallery.condition
            )));
        }
    }

    let select = |pred: &dyn Fn(&SequenceMeta) -> bool| -> Vec<usize> {
        (0..index.len()).filter(|&i| pred(&index[i])).collect()
    };
    Ok(DatasetProtocol {
        spec: spec.clone(),
        train_ids: train_ids.to_vec(),
        test_ids: test_ids.to_vec(),
        train: select(&|m| !is_test(m)),
        gallery: select(&|m| is_test(m) && spec.gallery.matches(m)),
        probes: spec
            .probes
            .iter()
            .map(|p| select(&|m| is_test(m) && p.matches(m)))
            .collect(),
    })
}
