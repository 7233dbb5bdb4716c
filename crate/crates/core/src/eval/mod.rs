//! Gallery enrolment, rank-1 identification and accuracy tables.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{DatasetProtocol, SequenceMeta, SkeletonSequence};
use crate::error::{Error, Result};
use crate::metric::euclidean;
use crate::net::StgcnNetwork;
use crate::tensor::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryEntry {
    pub identity: u32,
    pub embedding: Vec<f64>,
    pub meta: SequenceMeta,
}

/// Enrolled embeddings with known identities.
#[derive(Debug, Clone, PartialEq)]
pub struct GalleryIndex {
    entries: Vec<GalleryEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub identity: u32,
    pub distance: f64,
    /// Position of the matched entry in the index.
    pub entry: usize,
}

impl GalleryIndex {
    pub fn new(entries: Vec<GalleryEntry>) -> Result<Self> {
        let Some(first) = entries.first() else {
            return Err(Error::invalid("gallery is empty"));
        };
        let dim = first.embedding.len();
        if dim == 0 || entries.iter().any(|e| e.embedding.len() != dim) {
            return Err(Error::shape("gallery embeddings must share one non-zero length"));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[GalleryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.entries[0].embedding.len()
    }

    /// Entries recorded at `view`, if any.
    pub fn view(&self, view: u32) -> Option<GalleryIndex> {
        let entries: Vec<_> = self.entries.iter().filter(|e| e.meta.view == view).cloned().collect();
        (!entries.is_empty()).then_some(GalleryIndex { entries })
    }

    /// Nearest entry by Euclidean distance; equal distances go to the
    /// smaller identity label.
    ///
    /// # Panics
    ///
    /// If `probe` does not have the gallery's embedding length.
    pub fn identify(&self, probe: &[f64]) -> Match {
        assert_eq!(probe.len(), self.dim(), "probe embedding length differs from the gallery");
        let mut best: Option<Match> = None;
        for (i, e) in self.entries.iter().enumerate() {
            let d = euclidean(probe, &e.embedding);
            let better = match best {
                None => true,
                Some(b) => d < b.distance || (d == b.distance && e.identity < b.identity),
            };
            if better {
                best = Some(Match {
                    identity: e.identity,
                    distance: d,
                    entry: i,
                });
            }
        }
        best.expect("index is non-empty")
    }
}

/// Eval-mode embeddings of whole sequences, widened to `f64`.
pub fn embed_sequences<T: Real>(model: &StgcnNetwork<T>, seqs: &[&SkeletonSequence]) -> Result<Vec<Vec<f64>>> {
    seqs.iter()
        .map(|s| {
            let e = model.embed(&s.to_tensor::<T>()).map_err(|e| match e {
                Error::InvalidArgument(msg) => {
                    Error::InvalidArgument(format!("{}: {msg}", s.meta.dir_name()))
                }
                other => other,
            })?;
            Ok(e.into_iter().map(Real::to_f64).collect())
        })
        .collect()
}

pub fn build_gallery<T: Real>(model: &StgcnNetwork<T>, gallery: &[&SkeletonSequence]) -> Result<GalleryIndex> {
    if gallery.is_empty() {
        return Err(Error::invalid("gallery is empty"));
    }
    let embeddings = embed_sequences(model, gallery)?;
    GalleryIndex::new(
        gallery
            .iter()
            .zip(embeddings)
            .map(|(s, embedding)| GalleryEntry {
                identity: s.meta.identity,
                embedding,
                meta: s.meta,
            })
            .collect(),
    )
}

/// Rank-1 tally of one (condition, view) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub correct: usize,
    pub total: usize,
}

impl Cell {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub name: String,
    /// One cell per report view.
    pub cells: Vec<Cell>,
}

impl ConditionRow {
    /// Unweighted mean over views.
    pub fn mean(&self) -> f64 {
        self.cells.iter().map(Cell::accuracy).sum::<f64>() / self.cells.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub views: Vec<u32>,
    pub rows: Vec<ConditionRow>,
}

impl AccuracyReport {
    /// Unweighted mean of the condition means.
    pub fn average(&self) -> f64 {
        self.rows.iter().map(ConditionRow::mean).sum::<f64>() / self.rows.len() as f64
    }
}

/// A named probe set with precomputed embeddings.
pub struct ProbeSet<'a> {
    pub name: String,
    pub probes: Vec<(&'a SequenceMeta, &'a [f64])>,
}

/// Identifies every probe against the gallery entries of its own view.
///
/// Report views are those present in the gallery; every (probe set, view)
/// cell must have at least one probe.
pub fn evaluate_embeddings(gallery: &GalleryIndex, probe_sets: &[ProbeSet<'_>]) -> Result<AccuracyReport> {
    if probe_sets.is_empty() {
        return Err(Error::invalid("no probe sets to evaluate"));
    }
    let views: Vec<u32> = gallery
        .entries()
        .iter()
        .map(|e| e.meta.view)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let per_view: Vec<GalleryIndex> = views
        .iter()
        .map(|&v| gallery.view(v).expect("view taken from the gallery"))
        .collect();
    let mut rows = Vec::with_capacity(probe_sets.len());
    for set in probe_sets {
        if let Some((meta, _)) = set.probes.iter().find(|(m, _)| !views.contains(&m.view)) {
            return Err(Error::Data(format!(
                "probe {} has view {} with no gallery entries",
                meta.dir_name(),
                meta.view
            )));
        }
        let mut cells = Vec::with_capacity(views.len());
        for (&view, index) in views.iter().zip(&per_view) {
            let mut cell = Cell { correct: 0, total: 0 };
            for (meta, emb) in set.probes.iter().filter(|(m, _)| m.view == view) {
                cell.total += 1;
                if index.identify(emb).identity == meta.identity {
                    cell.correct += 1;
                }
            }
            if cell.total == 0 {
                return Err(Error::Data(format!(
                    "probe set {} has no probes at view {view}",
                    set.name
                )));
            }
            cells.push(cell);
        }
        rows.push(ConditionRow {
            name: set.name.clone(),
            cells,
        });
    }
    Ok(AccuracyReport { views, rows })
}

/// Embeds the protocol's gallery and probe sets from `data` (the index the
/// protocol was built on) and scores them.
pub fn evaluate<T: Real>(
    model: &StgcnNetwork<T>,
    data: &[SkeletonSequence],
    protocol: &DatasetProtocol,
) -> Result<AccuracyReport> {
    let gallery_seqs: Vec<&SkeletonSequence> = protocol.gallery.iter().map(|&i| &data[i]).collect();
    let gallery = build_gallery(model, &gallery_seqs)?;
    let probe_embeddings: Vec<Vec<Vec<f64>>> = protocol
        .probes
        .iter()
        .map(|set| embed_sequences(model, &set.iter().map(|&i| &data[i]).collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    let sets: Vec<ProbeSet<'_>> = protocol
        .spec
        .probes
        .iter()
        .zip(&protocol.probes)
        .zip(&probe_embeddings)
        .map(|((selector, idx), embs)| ProbeSet {
            name: selector.to_string(),
            probes: idx.iter().map(|&i| &data[i].meta).zip(embs.iter().map(Vec::as_slice)).collect(),
        })
        .collect();
    evaluate_embeddings(&gallery, &sets)
}

/// Scores the gallery against itself; every cell should be 1.0.
pub fn evaluate_gallery_as_probe<T: Real>(
    model: &StgcnNetwork<T>,
    data: &[SkeletonSequence],
    protocol: &DatasetProtocol,
) -> Result<AccuracyReport> {
    let seqs: Vec<&SkeletonSequence> = protocol.gallery.iter().map(|&i| &data[i]).collect();
    let gallery = build_gallery(model, &seqs)?;
    let set = ProbeSet {
        name: protocol.spec.gallery.to_string(),
        probes: gallery
            .entries()
            .iter()
            .map(|e| (&e.meta, e.embedding.as_slice()))
            .collect(),
    };
    evaluate_embeddings(&gallery, &[set])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "txt" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::invalid(format!("unknown report format `{other}`"))),
        }
    }
}

fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

/// Percentages with one decimal: one row per probe condition with a column
/// per view plus the mean, then the overall average.
pub fn render_report(report: &AccuracyReport, format: ReportFormat) -> String {
    let mut header = vec!["Probe".to_string()];
    header.extend(report.views.iter().map(|v| format!("{v:03}")));
    header.push("Mean".into());
    let mut table: Vec<Vec<String>> = vec![header];
    for row in &report.rows {
        let mut line = vec![row.name.clone()];
        line.extend(row.cells.iter().map(|c| pct(c.accuracy())));
        line.push(pct(row.mean()));
        table.push(line);
    }
    let mut average = vec!["Average".to_string()];
    average.extend(report.views.iter().map(|_| String::new()));
    average.push(pct(report.average()));
    table.push(average);

    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            for line in &table {
                out.push_str(&line.join(","));
                out.push('\n');
            }
        }
        ReportFormat::Text => {
            let cols = table[0].len();
            let widths: Vec<usize> = (0..cols)
                .map(|c| table.iter().map(|l| l[c].len()).max().unwrap_or(0))
                .collect();
            for line in &table {
                let mut text = format!("{:<w$}", line[0], w = widths[0]);
                for (cell, w) in line.iter().zip(&widths).skip(1) {
                    write!(text, "  {cell:>w$}").expect("writing to a string");
                }
                out.push_str(text.trim_end());
                out.push('\n');
            }
        }
    }
    out
}
