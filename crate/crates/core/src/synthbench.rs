//! Synthetic spurious-correlation benchmark.
//!
//! Every sample has a core block drawn around its class mean and a spurious
//! block drawn around the mean of its latent attribute. Class `k` is paired
//! with attribute `k`: a fraction `majority_fraction` of each training and
//! validation class carries it, the rest is spread evenly over the other
//! attributes. The test split holds `test_per_group` samples of every
//! (class, attribute) pair. Captions name the class word, the attribute word
//! and a few distractors, so attributes can be recovered from text alone.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{CaptionRecord, CaptionSet, PosLexicon, PosTag};
use crate::data::FeatureStore;
use crate::error::{Error, Result};
use crate::train::config::{key_values, value};
use crate::train::derive_seed;

const CLASS_WORDS: [&str; 8] = ["bird", "dog", "cat", "fish", "horse", "frog", "bear", "deer"];
const ATTRIBUTE_WORDS: [&str; 8] = [
    "land", "water", "snow", "desert", "forest", "grass", "sand", "ice",
];
const DISTRACTORS: [&str; 10] = [
    "tree", "rock", "cloud", "fence", "small", "bright", "old", "green", "wooden", "dark",
];
const TEMPLATES: [&str; 3] = [
    "a {class} on the {attr}",
    "a photo of a {class} in the {attr}",
    "the {class} standing near some {attr}",
];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub n_classes: usize,
    pub core_dim: usize,
    pub spurious_dim: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_group: usize,
    pub majority_fraction: f64,
    pub noise_std: f64,
    /// Distance between any two class means of the core block.
    pub core_distance: f64,
    /// Distance between any two attribute means of the spurious block.
    pub spurious_distance: f64,
    pub class_words: Vec<String>,
    pub attribute_words: Vec<String>,
    pub distractors: Vec<String>,
    pub templates: Vec<String>,
    pub max_distractors: usize,
    pub seed: u64,
}

fn owned(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| w.to_string()).collect()
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            n_classes: 2,
            core_dim: 5,
            spurious_dim: 5,
            train_per_class: 1000,
            val_per_class: 200,
            test_per_group: 250,
            majority_fraction: 0.95,
            noise_std: 1.0,
            core_distance: 4.0,
            spurious_distance: 10.0,
            class_words: owned(&CLASS_WORDS[..2]),
            attribute_words: owned(&ATTRIBUTE_WORDS[..2]),
            distractors: owned(&DISTRACTORS),
            templates: owned(&TEMPLATES),
            max_distractors: 3,
            seed: 0,
        }
    }
}

fn words(key: &str, raw: &str) -> Result<Vec<String>> {
    let list: Vec<String> = raw
        .split(',')
        .map(|w| w.trim().to_lowercase())
        .filter(|w| !w.is_empty())
        .collect();
    if list.is_empty() {
        return Err(Error::Config(format!("`{key}` lists no words")));
    }
    Ok(list)
}

impl BenchSpec {
    /// Counts of each attribute within one class of a skewed split.
    pub fn skewed_counts(&self, class: usize, per_class: usize) -> Vec<usize> {
        let k = self.n_classes;
        let mut counts = vec![0; k];
        if k == 1 {
            counts[0] = per_class;
            return counts;
        }
        let majority = (self.majority_fraction * per_class as f64).round() as usize;
        let rest = per_class - majority;
        let others: Vec<usize> = (0..k).filter(|&a| a != class).collect();
        for (i, &a) in others.iter().enumerate() {
            counts[a] = rest / others.len() + usize::from(i < rest % others.len());
        }
        counts[class] = majority;
        counts
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_classes == 0 || self.core_dim == 0 || self.spurious_dim == 0 {
            return fail("classes and block dimensions must be at least 1".into());
        }
        if self.core_dim < self.n_classes || self.spurious_dim < self.n_classes {
            return fail(format!(
                "{} classes need block dimensions of at least {}",
                self.n_classes, self.n_classes
            ));
        }
        if !(0.5..1.0).contains(&self.majority_fraction) {
            return fail("majority_fraction must lie in [0.5, 1)".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return fail("noise_std must be non-negative".into());
        }
        if !(self.core_distance >= 4.0 * self.noise_std && self.core_distance.is_finite()) {
            return fail("core_distance must be at least 4 * noise_std".into());
        }
        if !(self.spurious_distance >= 0.0 && self.spurious_distance.is_finite()) {
            return fail("spurious_distance must be non-negative".into());
        }
        if self.train_per_class == 0 || self.val_per_class == 0 || self.test_per_group == 0 {
            return fail("every split must be nonempty".into());
        }
        for (split, per_class) in [("train", self.train_per_class), ("val", self.val_per_class)] {
            if self.n_classes > 1 && self.skewed_counts(0, per_class).contains(&0) {
                return fail(format!(
                    "{split} split: {per_class} samples per class at majority fraction {} \
                     leaves an empty group",
                    self.majority_fraction
                ));
            }
        }
        if self.class_words.len() < self.n_classes || self.attribute_words.len() < self.n_classes {
            return fail(format!("need {} class and attribute words", self.n_classes));
        }
        let mut seen = std::collections::BTreeSet::new();
        let named = self.class_words[..self.n_classes]
            .iter()
            .chain(&self.attribute_words[..self.n_classes])
            .chain(&self.distractors);
        for w in named {
            if w.is_empty() || !w.chars().all(|c| c.is_ascii_lowercase()) {
                return fail(format!("word `{w}` must be lowercase letters only"));
            }
            if !seen.insert(w.clone()) {
                return fail(format!("word `{w}` is used twice"));
            }
        }
        if let Some(w) = ["with", "and"].iter().find(|w| seen.contains(**w)) {
            return fail(format!("word `{w}` is reserved for caption filler"));
        }
        if self.templates.is_empty() {
            return fail("no caption templates".into());
        }
        for t in &self.templates {
            if !t.contains("{class}") || !t.contains("{attr}") {
                return fail(format!("template `{t}` lacks a {{class}} or {{attr}} placeholder"));
            }
            let filler = t.replace("{class}", " ").replace("{attr}", " ").to_lowercase();
            for w in filler.split(|c: char| !c.is_ascii_alphabetic()).filter(|w| !w.is_empty()) {
                if seen.contains(w) {
                    return fail(format!("template word `{w}` collides with a vocabulary word"));
                }
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = BenchSpec::default();
        let entries = key_values(text)?;
        if let Some(v) = entries.get("classes") {
            spec.n_classes = value("classes", v)?;
            let n = spec.n_classes.min(CLASS_WORDS.len());
            spec.class_words = owned(&CLASS_WORDS[..n]);
            spec.attribute_words = owned(&ATTRIBUTE_WORDS[..n]);
        }
        for (k, v) in entries {
            let k = k.as_str();
            match k {
                "classes" => {}
                "core_dim" => spec.core_dim = value(k, &v)?,
                "spurious_dim" => spec.spurious_dim = value(k, &v)?,
                "train_per_class" => spec.train_per_class = value(k, &v)?,
                "val_per_class" => spec.val_per_class = value(k, &v)?,
                "test_per_group" => spec.test_per_group = value(k, &v)?,
                "majority_fraction" => spec.majority_fraction = value(k, &v)?,
                "noise_std" => spec.noise_std = value(k, &v)?,
                "core_distance" => spec.core_distance = value(k, &v)?,
                "spurious_distance" => spec.spurious_distance = value(k, &v)?,
                "class_words" => spec.class_words = words(k, &v)?,
                "attribute_words" => spec.attribute_words = words(k, &v)?,
                "distractors" => {
                    spec.distractors = if v.is_empty() { Vec::new() } else { words(k, &v)? }
                }
                "templates" => {
                    spec.templates = v.split('|').map(|t| t.trim().to_string()).collect()
                }
                "max_distractors" => spec.max_distractors = value(k, &v)?,
                "seed" => spec.seed = value(k, &v)?,
                other => return Err(Error::Config(format!("unknown key `{other}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_spec_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "classes = {}", self.n_classes);
        let _ = writeln!(out, "core_dim = {}", self.core_dim);
        let _ = writeln!(out, "spurious_dim = {}", self.spurious_dim);
        let _ = writeln!(out, "train_per_class = {}", self.train_per_class);
        let _ = writeln!(out, "val_per_class = {}", self.val_per_class);
        let _ = writeln!(out, "test_per_group = {}", self.test_per_group);
        let _ = writeln!(out, "majority_fraction = {}", self.majority_fraction);
        let _ = writeln!(out, "noise_std = {}", self.noise_std);
        let _ = writeln!(out, "core_distance = {}", self.core_distance);
        let _ = writeln!(out, "spurious_distance = {}", self.spurious_distance);
        let _ = writeln!(out, "class_words = {}", self.class_words.join(","));
        let _ = writeln!(out, "attribute_words = {}", self.attribute_words.join(","));
        let _ = writeln!(out, "distractors = {}", self.distractors.join(","));
        let _ = writeln!(out, "templates = {}", self.templates.join(" | "));
        let _ = writeln!(out, "max_distractors = {}", self.max_distractors);
        let _ = writeln!(out, "seed = {}", self.seed);
        out
    }

    pub fn dim(&self) -> usize {
        self.core_dim + self.spurious_dim
    }

    /// Class `k` of the core block, or attribute `k` of the spurious block:
    /// vertices of a regular simplex with the requested edge length.
    pub fn block_mean(index: usize, n: usize, block_dim: usize, distance: f64) -> Vec<f64> {
        let scale = distance / std::f64::consts::SQRT_2;
        let mut mean = vec![0.0; block_dim];
        for (j, m) in mean.iter_mut().enumerate().take(n) {
            let e = if j == index { 1.0 } else { 0.0 };
            *m = scale * (e - 1.0 / n as f64);
        }
        mean
    }

    pub fn core_mean(&self, class: usize) -> Vec<f64> {
        Self::block_mean(class, self.n_classes, self.core_dim, self.core_distance)
    }

    pub fn spurious_mean(&self, attribute: usize) -> Vec<f64> {
        Self::block_mean(attribute, self.n_classes, self.spurious_dim, self.spurious_distance)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub train: FeatureStore,
    pub val: FeatureStore,
    pub test: FeatureStore,
}

impl SyntheticDataset {
    pub fn splits(&self) -> [(&'static str, &FeatureStore); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }
}

fn draw_split(
    spec: &BenchSpec,
    name: &str,
    counts: &[Vec<usize>],
    seed: u64,
) -> Result<FeatureStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut store = FeatureStore::new(spec.dim(), spec.n_classes);
    let mut i = 0;
    for (class, row) in counts.iter().enumerate() {
        let core = spec.core_mean(class);
        for (attribute, &n) in row.iter().enumerate() {
            let spurious = spec.spurious_mean(attribute);
            for _ in 0..n {
                let x: Vec<f64> = core
                    .iter()
                    .chain(&spurious)
                    .map(|&m| m + noise.sample(&mut rng))
                    .collect();
                store.push(format!("{name}-{i:06}"), class, Some(attribute), &x)?;
                i += 1;
            }
        }
    }
    Ok(store)
}

/// Draws all three splits; each split uses its own stream derived from the
/// spec seed.
pub fn generate_dataset(spec: &BenchSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let k = spec.n_classes;
    let skewed = |per_class| (0..k).map(|c| spec.skewed_counts(c, per_class)).collect::<Vec<_>>();
    let balanced = vec![vec![spec.test_per_group; k]; k];
    Ok(SyntheticDataset {
        train: draw_split(spec, "train", &skewed(spec.train_per_class), derive_seed(spec.seed, 1, 0))?,
        val: draw_split(spec, "val", &skewed(spec.val_per_class), derive_seed(spec.seed, 2, 0))?,
        test: draw_split(spec, "test", &balanced, derive_seed(spec.seed, 3, 0))?,
    })
}

/// The lexicon implied by a spec: class and attribute words are nouns,
/// distractors adjectives or nouns, template filler is tagged other.
pub fn bench_lexicon(spec: &BenchSpec) -> PosLexicon {
    let mut lexicon = PosLexicon::new();
    for t in &spec.templates {
        let filler = t.replace("{class}", " ").replace("{attr}", " ").to_lowercase();
        for w in filler.split(|c: char| !c.is_ascii_alphabetic()).filter(|w| !w.is_empty()) {
            lexicon.insert(w, PosTag::Other);
        }
    }
    for w in ["with", "and"] {
        lexicon.insert(w, PosTag::Other);
    }
    for w in spec.class_words.iter().chain(&spec.attribute_words) {
        lexicon.insert(w, PosTag::Noun);
    }
    for (i, w) in spec.distractors.iter().enumerate() {
        lexicon.insert(w, if i % 2 == 0 { PosTag::Noun } else { PosTag::Adj });
    }
    lexicon
}

/// One caption per sample of every split, plus the lexicon that recovers
/// class, attribute and distractor words from them.
pub fn synthesize_captions(
    dataset: &SyntheticDataset,
    spec: &BenchSpec,
) -> Result<(CaptionSet, PosLexicon)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 4, 0));
    let mut captions = CaptionSet::new();
    for (_, store) in dataset.splits() {
        for i in 0..store.len() {
            let attribute = store.groups()[i]
                .ok_or_else(|| Error::Data(format!("sample {} has no latent attribute", store.ids()[i])))?;
            let template = spec.templates.choose(&mut rng).expect("validated nonempty");
            let mut text = template
                .replace("{class}", &spec.class_words[store.labels()[i]])
                .replace("{attr}", &spec.attribute_words[attribute]);
            let n = rng.random_range(0..=spec.max_distractors.min(spec.distractors.len()));
            if n > 0 {
                let mut extra: Vec<&String> = spec.distractors.choose_multiple(&mut rng, n).collect();
                extra.shuffle(&mut rng);
                let joined: Vec<&str> = extra.iter().map(|s| s.as_str()).collect();
                text.push_str(" with ");
                text.push_str(&joined.join(" and "));
            }
            captions.push(CaptionRecord::text(store.ids()[i].clone(), &text))?;
        }
    }
    Ok((captions, bench_lexicon(spec)))
}

/// Group sizes `(class, attribute) -> count` of a split.
pub fn group_counts(store: &FeatureStore) -> std::collections::BTreeMap<(usize, usize), usize> {
    let mut counts = std::collections::BTreeMap::new();
    for (&y, g) in store.labels().iter().zip(store.groups()) {
        if let Some(a) = g {
            *counts.entry((y, *a)).or_insert(0) += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_incidence, build_vocabulary};

    fn small() -> BenchSpec {
        BenchSpec {
            train_per_class: 100,
            val_per_class: 40,
            test_per_group: 10,
            ..Default::default()
        }
    }

    #[test]
    fn skew_counts() {
        let spec = BenchSpec::default();
        assert_eq!(spec.skewed_counts(0, 1000), vec![950, 50]);
        assert_eq!(spec.skewed_counts(1, 1000), vec![50, 950]);
        let even = BenchSpec {
            majority_fraction: 0.5,
            ..Default::default()
        };
        assert_eq!(even.skewed_counts(0, 100), vec![50, 50]);
        let three = BenchSpec {
            n_classes: 3,
            class_words: owned(&CLASS_WORDS[..3]),
            attribute_words: owned(&ATTRIBUTE_WORDS[..3]),
            ..Default::default()
        };
        assert_eq!(three.skewed_counts(2, 101), vec![3, 2, 96]);
    }

    #[test]
    fn simplex_means_have_requested_distance() {
        for n in 1..5 {
            for i in 0..n {
                for j in 0..i {
                    let a = BenchSpec::block_mean(i, n, 6, 4.0);
                    let b = BenchSpec::block_mean(j, n, 6, 4.0);
                    let d: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                    assert!((d - 4.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_noise_sits_on_means() {
        let spec = BenchSpec {
            noise_std: 0.0,
            ..small()
        };
        let data = generate_dataset(&spec).unwrap();
        for i in 0..data.train.len() {
            let y = data.train.labels()[i];
            let a = data.train.groups()[i].unwrap();
            let want: Vec<f64> = spec.core_mean(y).into_iter().chain(spec.spurious_mean(a)).collect();
            assert_eq!(data.train.row(i), want.as_slice());
        }
    }

    #[test]
    fn splits_are_disjoint_and_test_balanced() {
        let data = generate_dataset(&small()).unwrap();
        let mut ids = std::collections::HashSet::new();
        for (_, s) in data.splits() {
            for id in s.ids() {
                assert!(ids.insert(id.clone()));
            }
        }
        assert!(group_counts(&data.test).values().all(|&c| c == 10));
        assert_eq!(group_counts(&data.train)[&(0, 1)], 5);
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        let tiny = BenchSpec {
            train_per_class: 10,
            ..Default::default()
        };
        assert!(generate_dataset(&tiny).is_err());
        let bad_template = BenchSpec {
            templates: vec!["a {class} alone".into()],
            ..Default::default()
        };
        assert!(bad_template.validate().is_err());
        let close = BenchSpec {
            core_distance: 3.0,
            ..Default::default()
        };
        assert!(close.validate().is_err());
    }

    #[test]
    fn substitution_without_distractors() {
        let spec = BenchSpec {
            templates: vec!["a {class} on a {attr}".into()],
            max_distractors: 0,
            ..small()
        };
        let data = generate_dataset(&spec).unwrap();
        let (captions, lexicon) = synthesize_captions(&data, &spec).unwrap();
        let first = &data.train.ids()[0];
        assert_eq!(captions.get(first).unwrap().attributes(&lexicon).len(), 2);
        let vocab = build_vocabulary(&captions, &lexicon, 1).unwrap();
        let want: Vec<String> = owned(&["bird", "dog", "land", "water"]);
        assert_eq!(vocab.attributes(), want.as_slice());
    }

    #[test]
    fn captions_recover_latent_attributes() {
        let spec = small();
        let data = generate_dataset(&spec).unwrap();
        let (captions, lexicon) = synthesize_captions(&data, &spec).unwrap();
        let vocab = build_vocabulary(&captions, &lexicon, 1).unwrap();
        for (_, store) in data.splits() {
            let inc = build_incidence(&captions, &vocab, &lexicon, store.ids()).unwrap();
            for i in 0..store.len() {
                let word = &spec.attribute_words[store.groups()[i].unwrap()];
                assert!(inc.contains(i, vocab.index_of(word).unwrap()));
            }
        }
    }

    #[test]
    fn spec_string_round_trips() {
        let spec = BenchSpec {
            seed: 9,
            majority_fraction: 0.9,
            ..Default::default()
        };
        assert_eq!(BenchSpec::parse(&spec.to_spec_string()).unwrap(), spec);
        assert!(BenchSpec::parse("bogus = 1").is_err());
    }
}
