//! Caption ingestion and attribute detection.
//!
//! Captions come from a JSON-lines file, one record per sample. Each record
//! either carries free text, which is tokenized and filtered through a
//! part-of-speech lexicon (nouns and adjectives survive), or a pre-extracted
//! attribute list that skips tagging entirely. Surviving words that occur in
//! at least `min_frequency` training samples form the attribute vocabulary,
//! and every sample gets an incidence row listing the vocabulary attributes
//! its caption mentions.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PosTag {
    Noun,
    Adj,
    Other,
}

impl PosTag {
    fn is_informative(self) -> bool {
        matches!(self, PosTag::Noun | PosTag::Adj)
    }
}

impl FromStr for PosTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "NOUN" => Ok(PosTag::Noun),
            "ADJ" => Ok(PosTag::Adj),
            "OTHER" => Ok(PosTag::Other),
            other => Err(format!("unknown tag `{other}` (expected NOUN, ADJ or OTHER)")),
        }
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PosTag::Noun => "NOUN",
            PosTag::Adj => "ADJ",
            PosTag::Other => "OTHER",
        })
    }
}

/// Word → part-of-speech tags. Words are stored lowercase.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PosLexicon {
    entries: BTreeMap<String, BTreeSet<PosTag>>,
}

impl PosLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: &str, tag: PosTag) {
        self.entries
            .entry(word.to_lowercase())
            .or_default()
            .insert(tag);
    }

    /// Tags for `word`; empty when the word is unknown.
    pub fn tags(&self, word: &str) -> BTreeSet<PosTag> {
        self.entries
            .get(&word.to_lowercase())
            .cloned()
            .unwrap_or_default()
    }

    fn is_informative(&self, lowercase_word: &str) -> bool {
        self.entries
            .get(lowercase_word)
            .is_some_and(|tags| tags.iter().any(|t| t.is_informative()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses `word<TAB>TAG[,TAG...]` lines. Blank lines are skipped.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut lexicon = PosLexicon::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let (word, tags) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(origin, line_no, "expected `word<TAB>TAG[,TAG...]`"))?;
            let word = word.trim();
            if word.is_empty() {
                return Err(Error::parse(origin, line_no, "empty word"));
            }
            for tag in tags.split(',') {
                let tag = tag
                    .parse::<PosTag>()
                    .map_err(|m| Error::parse(origin, line_no, m))?;
                lexicon.insert(word, tag);
            }
        }
        Ok(lexicon)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (word, tags) in &self.entries {
            let tags: Vec<String> = tags.iter().map(|t| t.to_string()).collect();
            out.push_str(word);
            out.push('\t');
            out.push_str(&tags.join(","));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaptionFormat {
    /// `{"id": ..., "caption": ...}`
    Text,
    /// `{"id": ..., "attributes": [...]}`
    PreExtracted,
}

impl FromStr for CaptionFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "text" | "caption-text" => Ok(CaptionFormat::Text),
            "attributes" | "pre-extracted" => Ok(CaptionFormat::PreExtracted),
            other => Err(format!("unknown caption format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CaptionContent {
    Text(String),
    Attributes(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionRecord {
    pub sample_id: String,
    pub content: CaptionContent,
}

impl CaptionRecord {
    pub fn text(sample_id: impl Into<String>, caption: &str) -> Self {
        Self {
            sample_id: sample_id.into(),
            content: CaptionContent::Text(caption.to_lowercase()),
        }
    }

    pub fn pre_extracted<S: AsRef<str>>(sample_id: impl Into<String>, attributes: &[S]) -> Self {
        Self {
            sample_id: sample_id.into(),
            content: CaptionContent::Attributes(
                attributes.iter().map(|a| a.as_ref().to_lowercase()).collect(),
            ),
        }
    }

    /// The detected attribute tokens of this record. Pre-extracted lists
    /// bypass the lexicon.
    pub fn attributes(&self, lexicon: &PosLexicon) -> BTreeSet<String> {
        match &self.content {
            CaptionContent::Text(caption) => extract_attributes(caption, lexicon),
            CaptionContent::Attributes(list) => list
                .iter()
                .map(|a| a.trim().to_lowercase())
                .filter(|a| !a.is_empty())
                .collect(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TextLine {
    id: String,
    caption: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttributeLine {
    id: String,
    attributes: Vec<String>,
}

/// Caption records keyed by unique sample id, in file order.
#[derive(Debug, Clone, Default)]
pub struct CaptionSet {
    records: Vec<CaptionRecord>,
    by_id: HashMap<String, usize>,
}

impl CaptionSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<CaptionRecord>) -> Result<Self> {
        let mut set = CaptionSet::new();
        for record in records {
            set.push(record)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, record: CaptionRecord) -> Result<()> {
        if record.sample_id.is_empty() {
            return Err(Error::Data("empty sample id".into()));
        }
        if self.by_id.contains_key(&record.sample_id) {
            return Err(Error::DuplicateId(record.sample_id));
        }
        self.by_id
            .insert(record.sample_id.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn get(&self, sample_id: &str) -> Option<&CaptionRecord> {
        self.by_id.get(sample_id).map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &[CaptionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Restricts the set to the given ids, keeping their order.
    pub fn subset(&self, ids: &[String]) -> Result<CaptionSet> {
        let mut missing = Vec::new();
        let mut out = CaptionSet::new();
        for id in ids {
            match self.get(id) {
                Some(r) => out.push(r.clone())?,
                None => missing.push(id.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingCaptions(missing));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for record in &self.records {
            let line = match &record.content {
                CaptionContent::Text(caption) => serde_json::to_string(&TextLine {
                    id: record.sample_id.clone(),
                    caption: caption.clone(),
                }),
                CaptionContent::Attributes(attributes) => serde_json::to_string(&AttributeLine {
                    id: record.sample_id.clone(),
                    attributes: attributes.clone(),
                }),
            }
            .expect("caption records always serialize");
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

pub fn parse_captions(text: &str, format: CaptionFormat, origin: &Path) -> Result<CaptionSet> {
    let mut set = CaptionSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record = match format {
            CaptionFormat::Text => {
                let parsed: TextLine = serde_json::from_str(line)
                    .map_err(|e| Error::parse(origin, line_no, e.to_string()))?;
                CaptionRecord::text(parsed.id, &parsed.caption)
            }
            CaptionFormat::PreExtracted => {
                let parsed: AttributeLine = serde_json::from_str(line)
                    .map_err(|e| Error::parse(origin, line_no, e.to_string()))?;
                CaptionRecord::pre_extracted(parsed.id, &parsed.attributes)
            }
        };
        if record.sample_id.is_empty() {
            return Err(Error::parse(origin, line_no, "empty sample id"));
        }
        set.push(record)?;
    }
    Ok(set)
}

pub fn load_captions(path: &Path, format: CaptionFormat) -> Result<CaptionSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_captions(&text, format, path)
}

/// Lowercases `caption`, splits it on non-alphabetic characters and keeps
/// the distinct tokens the lexicon tags as a noun or adjective.
pub fn extract_attributes(caption: &str, lexicon: &PosLexicon) -> BTreeSet<String> {
    caption
        .split(|c: char| !c.is_alphabetic())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| lexicon.is_informative(t))
        .collect()
}

/// The attribute set: detected tokens occurring in at least `min_frequency`
/// samples, in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeVocabulary {
    attributes: Vec<String>,
    frequencies: Vec<usize>,
    min_frequency: usize,
    index: HashMap<String, usize>,
}

impl AttributeVocabulary {
    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn frequencies(&self) -> &[usize] {
        &self.frequencies
    }

    pub fn min_frequency(&self) -> usize {
        self.min_frequency
    }

    pub fn index_of(&self, attribute: &str) -> Option<usize> {
        self.index.get(attribute).copied()
    }

    pub fn name(&self, index: usize) -> &str {
        &self.attributes[index]
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    /// Builds a vocabulary from explicit `(attribute, frequency)` pairs.
    pub fn from_counts(counts: BTreeMap<String, usize>, min_frequency: usize) -> Self {
        let (attributes, frequencies): (Vec<String>, Vec<usize>) = counts
            .into_iter()
            .filter(|&(_, n)| n >= min_frequency)
            .unzip();
        let index = attributes
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), i))
            .collect();
        Self {
            attributes,
            frequencies,
            min_frequency,
            index,
        }
    }
}

/// Counts each attribute once per sample, then drops those seen in fewer
/// than `min_frequency` samples.
pub fn build_vocabulary(
    captions: &CaptionSet,
    lexicon: &PosLexicon,
    min_frequency: usize,
) -> Result<AttributeVocabulary> {
    if min_frequency == 0 {
        return Err(Error::Config("min_frequency must be at least 1".into()));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for record in captions.records() {
        for attribute in record.attributes(lexicon) {
            *counts.entry(attribute).or_default() += 1;
        }
    }
    Ok(AttributeVocabulary::from_counts(counts, min_frequency))
}

/// Per-sample sorted lists of vocabulary indices, aligned with `sample_ids`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeIncidence {
    sample_ids: Vec<String>,
    rows: Vec<Vec<usize>>,
    n_attributes: usize,
}

impl AttributeIncidence {
    pub fn new(sample_ids: Vec<String>, rows: Vec<Vec<usize>>, n_attributes: usize) -> Result<Self> {
        if sample_ids.len() != rows.len() {
            return Err(Error::Shape(format!(
                "{} sample ids but {} incidence rows",
                sample_ids.len(),
                rows.len()
            )));
        }
        let mut rows = rows;
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            if let Some(&bad) = row.iter().find(|&&a| a >= n_attributes) {
                return Err(Error::Shape(format!(
                    "attribute index {bad} out of range for {n_attributes} attributes"
                )));
            }
        }
        Ok(Self {
            sample_ids,
            rows,
            n_attributes,
        })
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn row(&self, sample: usize) -> &[usize] {
        &self.rows[sample]
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn n_attributes(&self) -> usize {
        self.n_attributes
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn contains(&self, sample: usize, attribute: usize) -> bool {
        self.rows[sample].binary_search(&attribute).is_ok()
    }
}

/// Builds one incidence row per entry of `sample_ids`: the sample's detected
/// attributes intersected with the vocabulary.
pub fn build_incidence(
    captions: &CaptionSet,
    vocab: &AttributeVocabulary,
    lexicon: &PosLexicon,
    sample_ids: &[String],
) -> Result<AttributeIncidence> {
    let mut seen = HashSet::with_capacity(sample_ids.len());
    let mut missing = Vec::new();
    let mut rows = Vec::with_capacity(sample_ids.len());
    for id in sample_ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
        match captions.get(id) {
            Some(record) => rows.push(
                record
                    .attributes(lexicon)
                    .iter()
                    .filter_map(|a| vocab.index_of(a))
                    .collect(),
            ),
            None => missing.push(id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingCaptions(missing));
    }
    AttributeIncidence::new(sample_ids.to_vec(), rows, vocab.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vase_lexicon() -> PosLexicon {
        let mut lex = PosLexicon::new();
        for w in ["green", "wooden"] {
            lex.insert(w, PosTag::Adj);
        }
        for w in ["vase", "top", "table"] {
            lex.insert(w, PosTag::Noun);
        }
        for w in ["a", "sitting", "on", "of", "the"] {
            lex.insert(w, PosTag::Other);
        }
        lex
    }

    fn set(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn extracts_nouns_and_adjectives_from_worked_example() {
        let got = extract_attributes("a green vase sitting on top of a wooden table", &vase_lexicon());
        assert_eq!(got, set(&["green", "vase", "top", "wooden", "table"]));
    }

    #[test]
    fn empty_and_uninformative_captions_yield_nothing() {
        let lex = vase_lexicon();
        assert!(extract_attributes("", &lex).is_empty());
        assert!(extract_attributes("the the the", &lex).is_empty());
        assert!(extract_attributes("unknown words only", &lex).is_empty());
    }

    #[test]
    fn tokenizes_on_non_alphabetic_boundaries() {
        let got = extract_attributes("Green-vase,TABLE!!top3wooden", &vase_lexicon());
        assert_eq!(got, set(&["green", "vase", "top", "wooden", "table"]));
    }

    #[test]
    fn lexicon_parse_and_lookup() {
        let lex = PosLexicon::parse("Vase\tNOUN\nlight\tNOUN,ADJ\n\nthe\tOTHER\n", Path::new("x")).unwrap();
        assert_eq!(lex.tags("vase"), [PosTag::Noun].into_iter().collect());
        assert_eq!(lex.tags("LIGHT"), [PosTag::Noun, PosTag::Adj].into_iter().collect());
        assert!(lex.tags("absent").is_empty());
    }

    #[test]
    fn lexicon_rejects_bad_tag_with_line_number() {
        let err = PosLexicon::parse("a\tOTHER\nb\tVERB\n", Path::new("lex.tsv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn parses_caption_lines() {
        let set = parse_captions(
            "{\"id\":\"s1\",\"caption\":\"A green vase...\"}\n",
            CaptionFormat::Text,
            Path::new("c"),
        )
        .unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(
            set.get("s1").unwrap().content,
            CaptionContent::Text("a green vase...".into())
        );
        assert!(parse_captions("", CaptionFormat::Text, Path::new("c")).unwrap().is_empty());
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let text = "{\"id\":\"s1\",\"caption\":\"a\"}\n{\"id\":\"s1\",\"caption\":\"b\"}\n";
        let err = parse_captions(text, CaptionFormat::Text, Path::new("c")).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(ref id) if id == "s1"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"id\":\"s1\",\"caption\":\"a\"}\nnot json\n";
        let err = parse_captions(text, CaptionFormat::Text, Path::new("c")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        // Wrong shape for the declared format is also malformed.
        let err = parse_captions(text, CaptionFormat::PreExtracted, Path::new("c")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    fn corpus(n_with: usize, total: usize) -> CaptionSet {
        let records = (0..total)
            .map(|i| {
                let caption = if i < n_with { "a green vase" } else { "a vase" };
                CaptionRecord::text(format!("s{i}"), caption)
            })
            .collect();
        CaptionSet::from_records(records).unwrap()
    }

    #[test]
    fn frequency_threshold_is_inclusive() {
        let lex = vase_lexicon();
        let vocab = build_vocabulary(&corpus(10, 20), &lex, 10).unwrap();
        assert_eq!(vocab.attributes(), &["green".to_string(), "vase".to_string()]);
        assert_eq!(vocab.frequencies(), &[10, 20]);
        let vocab = build_vocabulary(&corpus(9, 20), &lex, 10).unwrap();
        assert_eq!(vocab.attributes(), &["vase".to_string()]);
    }

    #[test]
    fn frequency_counts_samples_not_tokens() {
        let lex = vase_lexicon();
        let captions = CaptionSet::from_records(vec![
            CaptionRecord::text("a", "vase vase vase"),
            CaptionRecord::text("b", "green"),
        ])
        .unwrap();
        let vocab = build_vocabulary(&captions, &lex, 1).unwrap();
        assert_eq!(vocab.frequencies(), &[1, 1]);
        assert!(build_vocabulary(&captions, &lex, 0).is_err());
    }

    #[test]
    fn incidence_intersects_with_vocabulary() {
        let lex = vase_lexicon();
        let captions =
            CaptionSet::from_records(vec![CaptionRecord::text("s", "a vase on a table")]).unwrap();
        let vocab = AttributeVocabulary::from_counts([("vase".to_string(), 1)].into(), 1);
        let inc = build_incidence(&captions, &vocab, &lex, &["s".to_string()]).unwrap();
        assert_eq!(inc.row(0), &[0]);

        let empty = AttributeVocabulary::from_counts(BTreeMap::new(), 1);
        let inc = build_incidence(&captions, &empty, &lex, &["s".to_string()]).unwrap();
        assert!(inc.row(0).is_empty());
    }

    #[test]
    fn incidence_reports_missing_ids() {
        let lex = vase_lexicon();
        let captions = corpus(1, 2);
        let vocab = build_vocabulary(&captions, &lex, 1).unwrap();
        let ids = vec!["s0".to_string(), "x".to_string(), "y".to_string()];
        match build_incidence(&captions, &vocab, &lex, &ids).unwrap_err() {
            Error::MissingCaptions(missing) => assert_eq!(missing, vec!["x", "y"]),
            other => panic!("unexpected {other}"),
        }
    }
}
