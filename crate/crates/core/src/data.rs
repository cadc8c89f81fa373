//! Labelled feature vectors for one split, plus the dataset file format:
//! a header line `dim=<d> classes=<K>` followed by CSV rows
//! `id,class,group,feat_0,...,feat_{d-1}`. `group` is the ground-truth
//! spurious attribute id, or empty when unknown.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    n_classes: usize,
    ids: Vec<String>,
    labels: Vec<usize>,
    groups: Vec<Option<usize>>,
    features: Vec<f64>,
}

impl FeatureStore {
    pub fn new(dim: usize, n_classes: usize) -> Self {
        Self {
            dim,
            n_classes,
            ids: Vec::new(),
            labels: Vec::new(),
            groups: Vec::new(),
            features: Vec::new(),
        }
    }

    pub fn push(
        &mut self,
        id: impl Into<String>,
        label: usize,
        group: Option<usize>,
        features: &[f64],
    ) -> Result<()> {
        if features.len() != self.dim {
            return Err(Error::Shape(format!(
                "feature vector of length {} for a store of dimension {}",
                features.len(),
                self.dim
            )));
        }
        if label >= self.n_classes {
            return Err(Error::Data(format!(
                "label {label} outside the {} declared classes",
                self.n_classes
            )));
        }
        self.ids.push(id.into());
        self.labels.push(label);
        self.groups.push(group);
        self.features.extend_from_slice(features);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn groups(&self) -> &[Option<usize>] {
        &self.groups
    }

    /// Row-major `len x dim` features.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Concatenated feature rows for `indices`.
    pub fn gather(&self, indices: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            out.extend_from_slice(self.row(i));
        }
        out
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = format!("dim={} classes={}\n", self.dim, self.n_classes);
        for i in 0..self.len() {
            out.push_str(&self.ids[i]);
            out.push(',');
            out.push_str(&self.labels[i].to_string());
            out.push(',');
            if let Some(g) = self.groups[i] {
                out.push_str(&g.to_string());
            }
            for x in self.row(i) {
                out.push(',');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let (header, body) = text.split_once('\n').unwrap_or((text, ""));
        let (dim, n_classes) = parse_header(header).ok_or_else(|| {
            Error::parse(origin, 1, "expected header `dim=<d> classes=<K>`")
        })?;
        let mut store = FeatureStore::new(dim, n_classes);
        let mut seen = HashSet::new();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(body.as_bytes());
        for (i, record) in reader.records().enumerate() {
            let line = i + 2;
            let record = record.map_err(|e| Error::parse(origin, line, e.to_string()))?;
            if record.len() != dim + 3 {
                return Err(Error::parse(
                    origin,
                    line,
                    format!("expected {} fields, found {}", dim + 3, record.len()),
                ));
            }
            let id = record[0].to_string();
            if id.is_empty() {
                return Err(Error::parse(origin, line, "empty sample id"));
            }
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId(id));
            }
            let label: usize = record[1]
                .parse()
                .map_err(|_| Error::parse(origin, line, "bad class"))?;
            let group = match &record[2] {
                "" => None,
                g => Some(
                    g.parse()
                        .map_err(|_| Error::parse(origin, line, "bad group"))?,
                ),
            };
            let features = (3..dim + 3)
                .map(|j| record[j].parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::parse(origin, line, "bad feature value"))?;
            store
                .push(id, label, group, &features)
                .map_err(|e| Error::parse(origin, line, e.to_string()))?;
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut dim = None;
    let mut classes = None;
    for part in line.split_whitespace() {
        let (k, v) = part.split_once('=')?;
        match k {
            "dim" => dim = Some(v.parse().ok()?),
            "classes" => classes = Some(v.parse().ok()?),
            _ => return None,
        }
    }
    Some((dim?, classes?))
}
