//! Per-group accuracy, group confusion and oracle-group evaluation, plus
//! report I/O.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{GroupPartition, GROUP_NAMES};
use crate::numeric::{Matrix, Real};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("{what}: expected {expected} entries, found {found}")]
    Length {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("label {label} is outside the {classes} partitioned classes")]
    Label { label: usize, classes: usize },
    #[error("no samples to evaluate")]
    Empty,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: unsupported report version {found}")]
    Version { path: PathBuf, found: u32 },
}

/// One value per group, keyed by group name.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerGroup<V> {
    pub many: V,
    pub medium: V,
    pub few: V,
}

impl<V: Copy> PerGroup<V> {
    pub fn from_array(a: [V; 3]) -> Self {
        Self {
            many: a[0],
            medium: a[1],
            few: a[2],
        }
    }

    pub fn to_array(&self) -> [V; 3] {
        [self.many, self.medium, self.few]
    }
}

/// Raw counts behind the percentages of a [`MetricsReport`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Counts {
    pub total: usize,
    pub correct: usize,
    pub samples: PerGroup<usize>,
    pub correct_per_group: PerGroup<usize>,
    pub oracle_correct: PerGroup<usize>,
    /// `[true group][predicted group]` over misclassified samples.
    pub misclassified: [[usize; 3]; 3],
}

/// Percentages of misclassified samples of each true group landing in each
/// predicted group.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupConfusion {
    pub percent: [[f64; 3]; 3],
    pub counts: [[usize; 3]; 3],
    /// Rows with no misclassified sample; their percentages are all zero.
    pub empty: [bool; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub version: u32,
    pub overall: f64,
    /// `None` for groups without test samples.
    pub per_group: PerGroup<Option<f64>>,
    pub group_confusion: [[f64; 3]; 3],
    pub confusion_row_empty: [bool; 3],
    pub oracle_per_group: PerGroup<Option<f64>>,
    pub counts: Counts,
}

fn check_inputs(n_pred: usize, labels: &[usize], partition: &GroupPartition) -> Result<(), AnalysisError> {
    if labels.is_empty() {
        return Err(AnalysisError::Empty);
    }
    if n_pred != labels.len() {
        return Err(AnalysisError::Length {
            what: "predictions",
            expected: labels.len(),
            found: n_pred,
        });
    }
    let classes = partition.num_classes();
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(AnalysisError::Label { label, classes });
    }
    Ok(())
}

pub fn group_confusion(
    predictions: &[usize],
    labels: &[usize],
    partition: &GroupPartition,
) -> Result<GroupConfusion, AnalysisError> {
    check_inputs(predictions.len(), labels, partition)?;
    let classes = partition.num_classes();
    let mut counts = [[0usize; 3]; 3];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p >= classes {
            return Err(AnalysisError::Label { label: p, classes });
        }
        if p != y {
            counts[partition.group(y)][partition.group(p)] += 1;
        }
    }
    let mut percent = [[0.0; 3]; 3];
    let mut empty = [false; 3];
    for i in 0..3 {
        let row: usize = counts[i].iter().sum();
        if row == 0 {
            empty[i] = true;
        } else {
            for j in 0..3 {
                percent[i][j] = 100.0 * counts[i][j] as f64 / row as f64;
            }
        }
    }
    Ok(GroupConfusion { percent, counts, empty })
}

/// For every sample, the highest-scoring class inside its true group.
pub fn oracle_predictions<T: Real>(
    scores: &Matrix<T>,
    labels: &[usize],
    partition: &GroupPartition,
) -> Result<Vec<usize>, AnalysisError> {
    check_inputs(scores.rows(), labels, partition)?;
    if scores.cols() != partition.num_classes() {
        return Err(AnalysisError::Length {
            what: "score columns",
            expected: partition.num_classes(),
            found: scores.cols(),
        });
    }
    let members: Vec<Vec<usize>> = (0..3).map(|g| partition.members(g)).collect();
    Ok(labels
        .par_iter()
        .enumerate()
        .map(|(i, &y)| {
            let row = scores.row(i);
            let mut best = usize::MAX;
            for &c in &members[partition.group(y)] {
                if best == usize::MAX || row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

fn per_group_accuracy(hits: &[bool], labels: &[usize], partition: &GroupPartition) -> ([usize; 3], [usize; 3]) {
    let mut samples = [0; 3];
    let mut correct = [0; 3];
    for (&h, &y) in hits.iter().zip(labels) {
        let g = partition.group(y);
        samples[g] += 1;
        correct[g] += usize::from(h);
    }
    (samples, correct)
}

fn percent(correct: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| 100.0 * correct as f64 / total as f64)
}

/// Top-1 accuracy overall and per true group, the group confusion of the
/// mistakes, and oracle-group accuracy from `oracle_scores` (any per-class
/// scores, e.g. base logits or scaled logits).
pub fn evaluate<T: Real>(
    predictions: &[usize],
    oracle_scores: &Matrix<T>,
    labels: &[usize],
    partition: &GroupPartition,
) -> Result<MetricsReport, AnalysisError> {
    let confusion = group_confusion(predictions, labels, partition)?;
    let oracle = oracle_predictions(oracle_scores, labels, partition)?;
    let hits: Vec<bool> = predictions.iter().zip(labels).map(|(p, y)| p == y).collect();
    let oracle_hits: Vec<bool> = oracle.iter().zip(labels).map(|(p, y)| p == y).collect();
    let (samples, correct) = per_group_accuracy(&hits, labels, partition);
    let (_, oracle_correct) = per_group_accuracy(&oracle_hits, labels, partition);
    for g in 0..3 {
        assert!(
            oracle_correct[g] >= correct[g] || !same_scores(predictions, oracle_scores),
            "oracle accuracy fell below standard accuracy in group {}",
            GROUP_NAMES[g]
        );
    }
    let total_correct: usize = correct.iter().sum();
    Ok(MetricsReport {
        version: REPORT_VERSION,
        overall: 100.0 * total_correct as f64 / labels.len() as f64,
        per_group: PerGroup::from_array([0, 1, 2].map(|g| percent(correct[g], samples[g]))),
        group_confusion: confusion.percent,
        confusion_row_empty: confusion.empty,
        oracle_per_group: PerGroup::from_array([0, 1, 2].map(|g| percent(oracle_correct[g], samples[g]))),
        counts: Counts {
            total: labels.len(),
            correct: total_correct,
            samples: PerGroup::from_array(samples),
            correct_per_group: PerGroup::from_array(correct),
            oracle_correct: PerGroup::from_array(oracle_correct),
            misclassified: confusion.counts,
        },
    })
}

/// Dominance only holds when the predictions are the argmax of the same
/// scores the oracle restricts.
fn same_scores<T: Real>(predictions: &[usize], scores: &Matrix<T>) -> bool {
    scores.argmax_rows() == predictions
}

pub fn write_report(report: &MetricsReport, path: &Path) -> Result<(), AnalysisError> {
    let text = serde_json::to_string_pretty(report).expect("report serializes") + "\n";
    std::fs::write(path, text).map_err(|source| AnalysisError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_report(path: &Path) -> Result<MetricsReport, AnalysisError> {
    let text = std::fs::read_to_string(path).map_err(|source| AnalysisError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let report: MetricsReport = serde_json::from_str(&text).map_err(|source| AnalysisError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    if report.version != REPORT_VERSION {
        return Err(AnalysisError::Version {
            path: path.to_path_buf(),
            found: report.version,
        });
    }
    Ok(report)
}

/// `metric,group,value` rows for plotting. Empty groups get an empty value.
pub fn report_csv(report: &MetricsReport) -> String {
    let mut out = String::from("metric,group,value\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    writeln!(out, "accuracy,all,{:?}", report.overall).unwrap();
    for (g, name) in GROUP_NAMES.iter().enumerate() {
        writeln!(out, "accuracy,{name},{}", opt(report.per_group.to_array()[g])).unwrap();
    }
    for (g, name) in GROUP_NAMES.iter().enumerate() {
        writeln!(out, "oracle_accuracy,{name},{}", opt(report.oracle_per_group.to_array()[g])).unwrap();
    }
    for (i, from) in GROUP_NAMES.iter().enumerate() {
        for (j, to) in GROUP_NAMES.iter().enumerate() {
            writeln!(out, "misclassified_to_{to},{from},{:?}", report.group_confusion[i][j]).unwrap();
        }
    }
    for (g, name) in GROUP_NAMES.iter().enumerate() {
        writeln!(out, "samples,{name},{}", report.counts.samples.to_array()[g]).unwrap();
    }
    out
}

pub fn write_report_csv(report: &MetricsReport, path: &Path) -> Result<(), AnalysisError> {
    std::fs::write(path, report_csv(report)).map_err(|source| AnalysisError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.1}")).unwrap_or_else(|| "-".into())
}

/// Aligned `Many / Medium / Few / All` accuracy table, one row per entry.
pub fn render_table(rows: &[(&str, &MetricsReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.chars().count()).max().unwrap_or(0).max(6);
    let mut out = format!("{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}\n", "Method", "Many", "Medium", "Few", "All");
    for (name, r) in rows {
        let g = r.per_group.to_array();
        writeln!(
            out,
            "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}",
            name,
            cell(g[0]),
            cell(g[1]),
            cell(g[2]),
            cell(Some(r.overall))
        )
        .unwrap();
    }
    out
}

/// Confusion matrix rows as an aligned text block.
pub fn render_confusion(report: &MetricsReport) -> String {
    let mut out = format!("{:<8}  {:>6}  {:>6}  {:>6}\n", "true\\pred", "Many", "Medium", "Few");
    for (i, name) in GROUP_NAMES.iter().enumerate() {
        let row = report.group_confusion[i];
        if report.confusion_row_empty[i] {
            writeln!(out, "{name:<9}  {:>6}  {:>6}  {:>6}", "-", "-", "-").unwrap();
        } else {
            writeln!(out, "{name:<9}  {:>6.1}  {:>6.1}  {:>6.1}", row[0], row[1], row[2]).unwrap();
        }
    }
    out
}
