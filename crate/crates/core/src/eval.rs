//! Ranking accuracy, macro precision/recall/F1 and cold-start group reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::io::{self, Write};

use crate::error::EvalError;
use crate::tensor::Mat;

/// Test-set scores with ground-truth labels.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionMatrix {
    scores: Mat,
    truth: Vec<usize>,
}

impl PredictionMatrix {
    pub fn new(scores: Mat, truth: Vec<usize>) -> Result<Self, EvalError> {
        if scores.rows() != truth.len() {
            return Err(EvalError::Predictions(format!(
                "{} score rows for {} labels",
                scores.rows(),
                truth.len()
            )));
        }
        if scores.cols() < 2 {
            return Err(EvalError::Predictions(
                "at least two classes are required".into(),
            ));
        }
        if let Some(&bad) = truth.iter().find(|&&y| y >= scores.cols()) {
            return Err(EvalError::Predictions(format!(
                "label {bad} outside {} classes",
                scores.cols()
            )));
        }
        Ok(Self { scores, truth })
    }

    pub fn classes(&self) -> usize {
        self.scores.cols()
    }

    pub fn rows(&self) -> usize {
        self.truth.len()
    }

    pub fn scores(&self) -> &Mat {
        &self.scores
    }

    pub fn truth(&self) -> &[usize] {
        &self.truth
    }

    /// The `k` best classes of `row`, best first; equal scores rank the lower index first.
    pub fn top_k(&self, row: usize, k: usize) -> Vec<usize> {
        let s = self.scores.row(row);
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
        order.truncate(k);
        order
    }

    pub fn argmax(&self, row: usize) -> usize {
        let s = self.scores.row(row);
        (1..s.len()).fold(0, |best, c| if s[c] > s[best] { c } else { best })
    }

    pub fn argmaxes(&self) -> Vec<usize> {
        (0..self.rows()).map(|r| self.argmax(r)).collect()
    }
}

/// Share of rows whose label is among the `k` highest scores.
pub fn acc_at_k(pred: &PredictionMatrix, k: usize) -> Result<f64, EvalError> {
    if k == 0 || k > pred.classes() {
        return Err(EvalError::InvalidK {
            k,
            classes: pred.classes(),
        });
    }
    if pred.rows() == 0 {
        return Ok(0.0);
    }
    let hits = (0..pred.rows())
        .filter(|&r| {
            let y = pred.truth[r];
            let s = pred.scores.row(r);
            // rank of y = classes that beat it outright or tie with a lower index
            let ahead = (0..s.len())
                .filter(|&c| s[c] > s[y] || (s[c] == s[y] && c < y))
                .count();
            ahead < k
        })
        .count();
    Ok(hits as f64 / pred.rows() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MacroScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-class precision, recall and F1 from argmax predictions.
fn per_class(pred: &PredictionMatrix) -> Vec<(f64, f64, f64)> {
    let q = pred.classes();
    let (mut tp, mut fp, mut fneg) = (vec![0usize; q], vec![0usize; q], vec![0usize; q]);
    for (r, &y) in pred.truth.iter().enumerate() {
        let p = pred.argmax(r);
        if p == y {
            tp[y] += 1;
        } else {
            fp[p] += 1;
            fneg[y] += 1;
        }
    }
    (0..q)
        .map(|c| {
            let ratio = |num: usize, den: usize| {
                if den == 0 {
                    0.0
                } else {
                    num as f64 / den as f64
                }
            };
            let p = ratio(tp[c], tp[c] + fp[c]);
            let r = ratio(tp[c], tp[c] + fneg[c]);
            let f = if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            };
            (p, r, f)
        })
        .collect()
}

/// Classes that occur in the ground truth.
pub fn truth_classes(pred: &PredictionMatrix) -> BTreeSet<usize> {
    pred.truth.iter().copied().collect()
}

/// Macro averages over the classes present in the ground truth.
pub fn macro_prf(pred: &PredictionMatrix) -> MacroScores {
    macro_prf_within(pred, &truth_classes(pred)).unwrap_or_default()
}

/// Macro averages over `classes ∩ truth classes`; `None` when that set is empty.
///
/// Per-class counts always use every row, so restricting the class set only
/// changes which terms enter the mean.
pub fn macro_prf_within(pred: &PredictionMatrix, classes: &BTreeSet<usize>) -> Option<MacroScores> {
    let present = truth_classes(pred);
    let selected: Vec<usize> = classes.intersection(&present).copied().collect();
    if selected.is_empty() {
        return None;
    }
    let stats = per_class(pred);
    let n = selected.len() as f64;
    let mean =
        |f: fn(&(f64, f64, f64)) -> f64| selected.iter().map(|&c| f(&stats[c])).sum::<f64>() / n;
    Some(MacroScores {
        precision: mean(|s| s.0),
        recall: mean(|s| s.1),
        f1: mean(|s| s.2),
    })
}

/// Activity tier of a user by training-set size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    Active,
    Normal,
    Inactive,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Active, Group::Normal, Group::Inactive];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Active => "active",
            Group::Normal => "normal",
            Group::Inactive => "inactive",
        }
    }
}

/// Share of users placed in each of the active and inactive tiers.
pub const GROUP_FRACTION: f64 = 0.3;

/// Tier of each user: the top 30% by training count (floor) are active, the
/// bottom 30% inactive, the rest normal. Ties rank the lower index first.
pub fn cold_start_groups(train_counts: &[usize]) -> Result<Vec<Group>, EvalError> {
    let n = train_counts.len();
    if n < 4 {
        return Err(EvalError::Grouping(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| train_counts[b].cmp(&train_counts[a]).then(a.cmp(&b)));
    let edge = (GROUP_FRACTION * n as f64 + 1e-9).floor() as usize;
    let mut groups = vec![Group::Normal; n];
    for (rank, &u) in order.iter().enumerate() {
        if rank < edge {
            groups[u] = Group::Active;
        } else if rank >= n - edge {
            groups[u] = Group::Inactive;
        }
    }
    Ok(groups)
}

/// Macro-F1 of each tier over its users present in the ground truth.
/// Tiers without any such user are absent from the map.
pub fn cold_start_report(
    train_counts: &[usize],
    pred: &PredictionMatrix,
) -> Result<BTreeMap<Group, f64>, EvalError> {
    if train_counts.len() != pred.classes() {
        return Err(EvalError::Predictions(format!(
            "{} training counts for {} classes",
            train_counts.len(),
            pred.classes()
        )));
    }
    let groups = cold_start_groups(train_counts)?;
    let mut out = BTreeMap::new();
    for g in Group::ALL {
        let members: BTreeSet<usize> = (0..groups.len()).filter(|&u| groups[u] == g).collect();
        if let Some(s) = macro_prf_within(pred, &members) {
            out.insert(g, s.f1);
        }
    }
    Ok(out)
}

/// All metrics of one evaluation run.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Variant tag, e.g. `FULL` or `A+D`.
    pub variant: String,
    pub acc: BTreeMap<usize, f64>,
    pub macro_scores: MacroScores,
    pub per_group: BTreeMap<Group, f64>,
}

pub const REPORT_KS: [usize; 2] = [1, 5];

impl EvalReport {
    /// Computes every metric. `k` values above the class count are clamped to it.
    pub fn compute(
        variant: &str,
        pred: &PredictionMatrix,
        train_counts: &[usize],
    ) -> Result<Self, EvalError> {
        let mut acc = BTreeMap::new();
        for k in REPORT_KS {
            acc.insert(k, acc_at_k(pred, k.min(pred.classes()))?);
        }
        Ok(Self {
            variant: variant.to_string(),
            acc,
            macro_scores: macro_prf(pred),
            per_group: cold_start_report(train_counts, pred)?,
        })
    }

    /// `(metric, group, value)` rows in output order.
    pub fn rows(&self) -> Vec<(String, &'static str, f64)> {
        let mut rows: Vec<(String, &'static str, f64)> = self
            .acc
            .iter()
            .map(|(k, &v)| (format!("acc@{k}"), "all", v))
            .collect();
        rows.push(("macro_p".into(), "all", self.macro_scores.precision));
        rows.push(("macro_r".into(), "all", self.macro_scores.recall));
        rows.push(("macro_f1".into(), "all", self.macro_scores.f1));
        for (g, &v) in &self.per_group {
            rows.push(("macro_f1".into(), g.as_str(), v));
        }
        rows
    }

    /// Machine-readable `metric<TAB>group<TAB>value` lines, preceded by a variant line.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "variant\tall\t{}", self.variant)?;
        for (metric, group, v) in self.rows() {
            writeln!(out, "{metric}\t{group}\t{v:.4}")?;
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut buf = Vec::new();
        self.write_tsv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ASCII report")
    }
}

impl fmt::Display for EvalReport {
    /// Aligned table with the same four-decimal values as the TSV lines.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        writeln!(s, "variant: {}", self.variant)?;
        writeln!(s, "{:<10} {:<9} {:>7}", "metric", "group", "value")?;
        for (metric, group, v) in self.rows() {
            writeln!(s, "{metric:<10} {group:<9} {v:>7.4}")?;
        }
        f.write_str(&s)
    }
}

/// Mean and sample standard deviation of each metric across repeated runs.
pub fn summarize(reports: &[EvalReport]) -> Vec<(String, &'static str, f64, f64)> {
    let Some(first) = reports.first() else {
        return Vec::new();
    };
    first
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, (metric, group, _))| {
            let vals: Vec<f64> = reports
                .iter()
                .filter_map(|r| r.rows().get(i).map(|row| row.2))
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = if vals.len() > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            (metric, group, mean, std)
        })
        .collect()
}
