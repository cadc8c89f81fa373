//! Evaluation reports keyed by ground-truth (class, attribute) groups.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::FeatureStore;
use crate::error::{Error, Result};
use crate::groups::PredictionRecord;
use crate::model::{Classifier, ExtractorParams};
use crate::train::{pseudo_unbiased_from_predictions, ValidationGroups};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub class: usize,
    pub attribute: usize,
    pub count: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoUnbiased {
    pub accuracy: f64,
    pub groups: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub average: f64,
    pub worst_group: f64,
    /// `average - worst_group`.
    pub gap: f64,
    pub groups: Vec<GroupAccuracy>,
    /// (class, attribute) pairs with no test samples.
    pub omitted: Vec<(usize, usize)>,
    pub pseudo_unbiased: Option<PseudoUnbiased>,
}

impl MetricsReport {
    /// Builds the report from predictions on a split whose samples all carry
    /// a ground-truth attribute.
    pub fn from_predictions(store: &FeatureStore, predictions: &PredictionRecord) -> Result<Self> {
        if store.is_empty() {
            return Err(Error::Data("cannot evaluate an empty split".into()));
        }
        if predictions.len() != store.len() {
            return Err(Error::Shape("predictions do not cover the split".into()));
        }
        let mut tallies: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
        let mut n_attributes = 0;
        for (i, (&y, g)) in store.labels().iter().zip(store.groups()).enumerate() {
            let a = g.ok_or_else(|| {
                Error::Data(format!("sample {} has no ground-truth group", store.ids()[i]))
            })?;
            n_attributes = n_attributes.max(a + 1);
            let t = tallies.entry((y, a)).or_insert((0, 0));
            t.0 += 1;
            t.1 += usize::from(predictions.is_correct(i) == Some(true));
        }
        let groups: Vec<GroupAccuracy> = tallies
            .iter()
            .map(|(&(class, attribute), &(count, correct))| GroupAccuracy {
                class,
                attribute,
                count,
                accuracy: correct as f64 / count as f64,
            })
            .collect();
        let omitted = (0..store.n_classes())
            .flat_map(|k| (0..n_attributes).map(move |a| (k, a)))
            .filter(|key| !tallies.contains_key(key))
            .collect();
        let average = predictions.accuracy();
        let worst_group = groups
            .iter()
            .map(|g| g.accuracy)
            .fold(f64::INFINITY, f64::min);
        Ok(Self {
            average,
            worst_group,
            gap: average - worst_group,
            groups,
            omitted,
            pseudo_unbiased: None,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Data(format!("report JSON: {e}")))
    }

    /// Rows `kind,class,attribute,count,value`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("kind,class,attribute,count,value\n");
        let _ = writeln!(out, "average,,,,{}", self.average);
        let _ = writeln!(out, "worst_group,,,,{}", self.worst_group);
        let _ = writeln!(out, "gap,,,,{}", self.gap);
        if let Some(p) = &self.pseudo_unbiased {
            let _ = writeln!(out, "pseudo_unbiased,,,{},{}", p.groups, p.accuracy);
        }
        for g in &self.groups {
            let _ = writeln!(out, "group,{},{},{},{}", g.class, g.attribute, g.count, g.accuracy);
        }
        for (k, a) in &self.omitted {
            let _ = writeln!(out, "omitted,{k},{a},0,");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |line: usize, m: &str| Error::Data(format!("report CSV line {line}: {m}"));
        let mut lines = text.lines().enumerate();
        if lines.next().map(|l| l.1) != Some("kind,class,attribute,count,value") {
            return Err(bad(1, "missing header"));
        }
        let mut report = Self {
            average: f64::NAN,
            worst_group: f64::NAN,
            gap: f64::NAN,
            groups: Vec::new(),
            omitted: Vec::new(),
            pseudo_unbiased: None,
        };
        for (i, line) in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(i + 1, "expected 5 fields"));
            }
            let float = |s: &str| s.parse::<f64>().map_err(|e| bad(i + 1, &e.to_string()));
            let int = |s: &str| s.parse::<usize>().map_err(|e| bad(i + 1, &e.to_string()));
            match f[0] {
                "average" => report.average = float(f[4])?,
                "worst_group" => report.worst_group = float(f[4])?,
                "gap" => report.gap = float(f[4])?,
                "pseudo_unbiased" => {
                    report.pseudo_unbiased = Some(PseudoUnbiased {
                        accuracy: float(f[4])?,
                        groups: int(f[3])?,
                    })
                }
                "group" => report.groups.push(GroupAccuracy {
                    class: int(f[1])?,
                    attribute: int(f[2])?,
                    count: int(f[3])?,
                    accuracy: float(f[4])?,
                }),
                "omitted" => report.omitted.push((int(f[1])?, int(f[2])?)),
                other => return Err(bad(i + 1, &format!("unknown row kind `{other}`"))),
            }
        }
        if report.average.is_nan() || report.worst_group.is_nan() || report.gap.is_nan() {
            return Err(bad(0, "summary rows missing"));
        }
        Ok(report)
    }

    pub fn save(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        fs::write(csv_path, self.to_csv_string()).map_err(|e| Error::io(csv_path, e))?;
        fs::write(json_path, self.to_json()).map_err(|e| Error::io(json_path, e))
    }
}

/// Predicts every sample of `test` and reports accuracy per ground-truth
/// group. With `attribute_groups`, also reports the pseudo-unbiased accuracy
/// over those caption-derived groups of the same split.
pub fn evaluate(
    classifier: &Classifier,
    params: &ExtractorParams,
    test: &FeatureStore,
    attribute_groups: Option<&ValidationGroups>,
) -> Result<MetricsReport> {
    let preds = classifier.predict_store(params, test)?;
    let mut report = MetricsReport::from_predictions(test, &preds)?;
    if let Some(groups) = attribute_groups {
        let (accuracy, count) = pseudo_unbiased_from_predictions(groups, &preds)?;
        report.pseudo_unbiased = Some(PseudoUnbiased {
            accuracy,
            groups: count,
        });
    }
    Ok(report)
}

/// One row of a run comparison, e.g. across temperatures or methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub average: f64,
    pub worst_group: f64,
    pub gap: f64,
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("label,average,worst_group,gap\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.label, r.average, r.worst_group, r.gap);
    }
    out
}

pub fn parse_comparison_csv(text: &str) -> Result<Vec<ComparisonRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader
        .deserialize()
        .map(|r| r.map_err(|e| Error::Data(format!("comparison CSV: {e}"))))
        .collect()
}
