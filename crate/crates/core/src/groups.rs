//! Class–attribute groups and spuriousness scoring.
//!
//! For each class `k` and attribute `a`, the member set holds the class-`k`
//! samples whose caption mentions `a`, and the complement holds the rest of
//! class `k`. A classifier's accuracy on the two sets, `p` and `q`, feeds one
//! of several spuriousness metrics; the default is `tanh(|ln(p/q)|)`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::corpus::AttributeIncidence;
use crate::error::{Error, Result};

/// Member and complement sets for every (class, attribute) pair. Sample
/// references are indices into the split the index was built over, stored in
/// ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupIndex {
    n_classes: usize,
    n_attributes: usize,
    class_samples: Vec<Vec<usize>>,
    members: Vec<Vec<usize>>,
    complements: Vec<Vec<usize>>,
}

impl GroupIndex {
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_attributes(&self) -> usize {
        self.n_attributes
    }

    pub fn class_samples(&self, class: usize) -> &[usize] {
        &self.class_samples[class]
    }

    pub fn member(&self, class: usize, attribute: usize) -> &[usize] {
        &self.members[class * self.n_attributes + attribute]
    }

    pub fn complement(&self, class: usize, attribute: usize) -> &[usize] {
        &self.complements[class * self.n_attributes + attribute]
    }

    /// Samples of `class` carrying `first` but not `second`.
    pub fn difference(&self, class: usize, first: usize, second: usize) -> Vec<usize> {
        let exclude = self.member(class, second);
        self.member(class, first)
            .iter()
            .copied()
            .filter(|s| exclude.binary_search(s).is_err())
            .collect()
    }

    /// Iterates nonempty member sets as `(class, attribute, members)`.
    pub fn nonempty_groups(&self) -> impl Iterator<Item = (usize, usize, &[usize])> {
        (0..self.n_classes).flat_map(move |k| {
            (0..self.n_attributes).filter_map(move |a| {
                let m = self.member(k, a);
                (!m.is_empty()).then_some((k, a, m))
            })
        })
    }
}

/// Partitions every class by presence of every attribute.
pub fn build_group_index(
    labels: &[usize],
    n_classes: usize,
    incidence: &AttributeIncidence,
) -> Result<GroupIndex> {
    if labels.len() != incidence.len() {
        return Err(Error::Shape(format!(
            "{} labels but {} incidence rows",
            labels.len(),
            incidence.len()
        )));
    }
    let n_attributes = incidence.n_attributes();
    let mut class_samples = vec![Vec::new(); n_classes];
    for (sample, &label) in labels.iter().enumerate() {
        if label >= n_classes {
            return Err(Error::Data(format!(
                "sample {} has label {label} outside the {n_classes} declared classes",
                incidence.sample_ids()[sample]
            )));
        }
        class_samples[label].push(sample);
    }
    let mut members = vec![Vec::new(); n_classes * n_attributes];
    let mut complements = vec![Vec::new(); n_classes * n_attributes];
    for (k, samples) in class_samples.iter().enumerate() {
        for &s in samples {
            let row = incidence.row(s);
            for a in 0..n_attributes {
                let cell = k * n_attributes + a;
                if row.binary_search(&a).is_ok() {
                    members[cell].push(s);
                } else {
                    complements[cell].push(s);
                }
            }
        }
    }
    Ok(GroupIndex {
        n_classes,
        n_attributes,
        class_samples,
        members,
        complements,
    })
}

/// Predicted and true class per sample of one split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionRecord {
    predicted: Vec<usize>,
    truth: Vec<usize>,
}

impl PredictionRecord {
    pub fn new(predicted: Vec<usize>, truth: Vec<usize>) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} labels",
                predicted.len(),
                truth.len()
            )));
        }
        Ok(Self { predicted, truth })
    }

    pub fn predicted(&self) -> &[usize] {
        &self.predicted
    }

    pub fn truth(&self) -> &[usize] {
        &self.truth
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn is_correct(&self, sample: usize) -> Option<bool> {
        Some(self.predicted.get(sample)? == self.truth.get(sample)?)
    }

    /// Fraction of all samples predicted correctly.
    pub fn accuracy(&self) -> f64 {
        if self.truth.is_empty() {
            return 0.0;
        }
        let correct = self
            .predicted
            .iter()
            .zip(&self.truth)
            .filter(|(p, t)| p == t)
            .count();
        correct as f64 / self.truth.len() as f64
    }

    fn count_correct(&self, group: &[usize]) -> Result<usize> {
        let mut correct = 0;
        for &s in group {
            match self.is_correct(s) {
                Some(true) => correct += 1,
                Some(false) => {}
                None => {
                    return Err(Error::Data(format!("no prediction for sample index {s}")));
                }
            }
        }
        Ok(correct)
    }
}

/// Accuracy of `predictions` restricted to `group`.
pub fn group_accuracy(group: &[usize], predictions: &PredictionRecord) -> Result<f64> {
    if group.is_empty() {
        return Err(Error::Data("accuracy of an empty group is undefined".into()));
    }
    Ok(predictions.count_correct(group)? as f64 / group.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricKind {
    /// `tanh(|ln(p/q)|)`
    TanhAbsLogRatio,
    /// `|p - q|`
    AbsDelta,
    /// `p - q`
    Delta,
    /// `tanh(ln(p/q))`
    TanhLogRatio,
    /// `1` for every realizable pair.
    Constant,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        MetricKind::TanhAbsLogRatio,
        MetricKind::AbsDelta,
        MetricKind::Delta,
        MetricKind::TanhLogRatio,
        MetricKind::Constant,
    ];

    /// Score assigned when the member or complement set is empty.
    pub fn alpha(self) -> f64 {
        0.0
    }

    pub fn uses_ratio(self) -> bool {
        matches!(self, MetricKind::TanhAbsLogRatio | MetricKind::TanhLogRatio)
    }

    /// Score from member accuracy `p` and complement accuracy `q`. Ratio
    /// metrics expect both to be positive (see [`MetricKind::score_counts`]).
    pub fn score(self, p: f64, q: f64) -> f64 {
        match self {
            MetricKind::TanhAbsLogRatio => (p.ln() - q.ln()).abs().tanh(),
            MetricKind::AbsDelta => (p - q).abs(),
            MetricKind::Delta => p - q,
            MetricKind::TanhLogRatio => (p.ln() - q.ln()).tanh(),
            MetricKind::Constant => 1.0,
        }
    }

    /// Score from raw counts. Empty groups give `alpha`; for ratio metrics a
    /// zero accuracy is floored at `1 / (2 * group size)`.
    pub fn score_counts(
        self,
        member_correct: usize,
        member_size: usize,
        complement_correct: usize,
        complement_size: usize,
    ) -> f64 {
        if member_size == 0 || complement_size == 0 {
            return self.alpha();
        }
        let mut p = member_correct as f64 / member_size as f64;
        let mut q = complement_correct as f64 / complement_size as f64;
        if self.uses_ratio() {
            p = p.max(0.5 / member_size as f64);
            q = q.max(0.5 / complement_size as f64);
        }
        self.score(p, q)
    }
}

impl FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "tanh-abs-log" => Ok(MetricKind::TanhAbsLogRatio),
            "abs-delta" => Ok(MetricKind::AbsDelta),
            "delta" => Ok(MetricKind::Delta),
            "tanh-log" => Ok(MetricKind::TanhLogRatio),
            "constant" => Ok(MetricKind::Constant),
            other => Err(format!(
                "unknown metric `{other}` (expected tanh-abs-log, abs-delta, delta, tanh-log or constant)"
            )),
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::TanhAbsLogRatio => "tanh-abs-log",
            MetricKind::AbsDelta => "abs-delta",
            MetricKind::Delta => "delta",
            MetricKind::TanhLogRatio => "tanh-log",
            MetricKind::Constant => "constant",
        })
    }
}

pub fn spuriousness_score(
    class: usize,
    attribute: usize,
    index: &GroupIndex,
    predictions: &PredictionRecord,
    metric: MetricKind,
) -> Result<f64> {
    let member = index.member(class, attribute);
    let complement = index.complement(class, attribute);
    Ok(metric.score_counts(
        predictions.count_correct(member)?,
        member.len(),
        predictions.count_correct(complement)?,
        complement.len(),
    ))
}

/// Spuriousness scores for all (class, attribute) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SpuriousnessTable {
    n_classes: usize,
    n_attributes: usize,
    scores: Vec<f64>,
    member_sizes: Vec<usize>,
    complement_sizes: Vec<usize>,
    metric: MetricKind,
    epoch_tag: usize,
}

impl SpuriousnessTable {
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_attributes(&self) -> usize {
        self.n_attributes
    }

    pub fn metric(&self) -> MetricKind {
        self.metric
    }

    pub fn epoch_tag(&self) -> usize {
        self.epoch_tag
    }

    pub fn score(&self, class: usize, attribute: usize) -> f64 {
        self.scores[class * self.n_attributes + attribute]
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.scores[class * self.n_attributes..(class + 1) * self.n_attributes]
    }

    /// Row-major `|Y| x |A|` scores.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn member_size(&self, class: usize, attribute: usize) -> usize {
        self.member_sizes[class * self.n_attributes + attribute]
    }

    pub fn complement_size(&self, class: usize, attribute: usize) -> usize {
        self.complement_sizes[class * self.n_attributes + attribute]
    }

    /// `(class, attribute, score)` rows, highest score first; ties keep
    /// row-major order.
    pub fn sorted_descending(&self) -> Vec<(usize, usize, f64)> {
        let mut cells: Vec<(usize, usize, f64)> = (0..self.n_classes)
            .flat_map(|k| (0..self.n_attributes).map(move |a| (k, a)))
            .map(|(k, a)| (k, a, self.score(k, a)))
            .collect();
        cells.sort_by(|x, y| y.2.total_cmp(&x.2));
        cells
    }

    /// Writes `class,attribute,score,member_size,complement_size`.
    pub fn write_csv(
        &self,
        path: &Path,
        class_names: &[String],
        attribute_names: &[String],
        sort_descending: bool,
    ) -> Result<()> {
        let cells: Vec<(usize, usize, f64)> = if sort_descending {
            self.sorted_descending()
        } else {
            (0..self.n_classes)
                .flat_map(|k| (0..self.n_attributes).map(move |a| (k, a)))
                .map(|(k, a)| (k, a, self.score(k, a)))
                .collect()
        };
        let mut out = String::from("class,attribute,score,member_size,complement_size\n");
        for (k, a, s) in cells {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                class_names.get(k).cloned().unwrap_or_else(|| k.to_string()),
                attribute_names.get(a).cloned().unwrap_or_else(|| a.to_string()),
                s,
                self.member_size(k, a),
                self.complement_size(k, a)
            ));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// One parsed row of a spuriousness CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SpuriousnessRow {
    pub class: String,
    pub attribute: String,
    pub score: f64,
    pub member_size: usize,
    pub complement_size: usize,
}

pub fn read_spuriousness_csv(path: &Path) -> Result<Vec<SpuriousnessRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("class,attribute,score,member_size,complement_size") {
        return Err(Error::parse(path, 1, "unexpected header"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |m: &str| Error::parse(path, i + 2, m.to_string());
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            Ok(SpuriousnessRow {
                class: f[0].to_string(),
                attribute: f[1].to_string(),
                score: f[2].parse().map_err(|_| bad("bad score"))?,
                member_size: f[3].parse().map_err(|_| bad("bad member_size"))?,
                complement_size: f[4].parse().map_err(|_| bad("bad complement_size"))?,
            })
        })
        .collect()
}

fn score_cell(
    cell: usize,
    index: &GroupIndex,
    predictions: &PredictionRecord,
    metric: MetricKind,
) -> Result<f64> {
    let (k, a) = (cell / index.n_attributes, cell % index.n_attributes);
    spuriousness_score(k, a, index, predictions, metric)
}

fn assemble(
    index: &GroupIndex,
    scores: Vec<f64>,
    metric: MetricKind,
    epoch_tag: usize,
) -> SpuriousnessTable {
    SpuriousnessTable {
        n_classes: index.n_classes,
        n_attributes: index.n_attributes,
        scores,
        member_sizes: index.members.iter().map(Vec::len).collect(),
        complement_sizes: index.complements.iter().map(Vec::len).collect(),
        metric,
        epoch_tag,
    }
}

impl SpuriousnessTable {
    /// A table with externally supplied scores over the groups of `index`,
    /// row-major by class.
    pub fn from_scores(
        index: &GroupIndex,
        scores: Vec<f64>,
        metric: MetricKind,
        epoch_tag: usize,
    ) -> Result<Self> {
        if scores.len() != index.members.len() {
            return Err(Error::Shape(format!(
                "{} scores for {} class-attribute pairs",
                scores.len(),
                index.members.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Data("spuriousness scores must be finite".into()));
        }
        Ok(assemble(index, scores, metric, epoch_tag))
    }
}

pub fn build_spuriousness_table(
    index: &GroupIndex,
    predictions: &PredictionRecord,
    metric: MetricKind,
    epoch_tag: usize,
) -> Result<SpuriousnessTable> {
    let scores = (0..index.members.len())
        .map(|cell| score_cell(cell, index, predictions, metric))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(index, scores, metric, epoch_tag))
}

/// Same as [`build_spuriousness_table`], scoring cells on the rayon pool.
pub fn build_spuriousness_table_par(
    index: &GroupIndex,
    predictions: &PredictionRecord,
    metric: MetricKind,
    epoch_tag: usize,
) -> Result<SpuriousnessTable> {
    let scores = (0..index.members.len())
        .into_par_iter()
        .map(|cell| score_cell(cell, index, predictions, metric))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(index, scores, metric, epoch_tag))
}

/// Per-class attribute sampling probabilities, proportional to the positive
/// part of the scores. Rows with no positive score fall back to uniform over
/// attributes with a nonempty member set.
pub fn sampling_distribution(table: &SpuriousnessTable, class: usize) -> Result<Vec<f64>> {
    if class >= table.n_classes {
        return Err(Error::Data(format!(
            "class {class} outside the {} classes of the table",
            table.n_classes
        )));
    }
    let weights: Vec<f64> = table.row(class).iter().map(|&s| s.max(0.0)).collect();
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        return Ok(weights.iter().map(|w| w / total).collect());
    }
    let realizable: Vec<bool> = (0..table.n_attributes)
        .map(|a| table.member_size(class, a) > 0)
        .collect();
    let count = realizable.iter().filter(|&&r| r).count();
    if count == 0 {
        return Err(Error::Sampling {
            class,
            message: "no attribute has a nonempty member set".into(),
        });
    }
    Ok(realizable
        .iter()
        .map(|&r| if r { 1.0 / count as f64 } else { 0.0 })
        .collect())
}
