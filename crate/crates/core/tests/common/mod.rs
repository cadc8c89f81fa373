#![allow(dead_code)]

use spume::corpus::{build_incidence, build_vocabulary, AttributeIncidence, AttributeVocabulary};
use spume::data::FeatureStore;
use spume::synthbench::{generate_dataset, synthesize_captions, BenchSpec, SyntheticDataset};
use spume::train::{Method, Selection, TrainConfig};

/// A generated benchmark with caption-derived attributes for every split.
pub struct Bench {
    pub spec: BenchSpec,
    pub data: SyntheticDataset,
    pub vocab: AttributeVocabulary,
    pub train_inc: AttributeIncidence,
    pub val_inc: AttributeIncidence,
    pub test_inc: AttributeIncidence,
}

impl Bench {
    pub fn new(spec: BenchSpec, min_frequency: usize) -> Self {
        let data = generate_dataset(&spec).unwrap();
        let (captions, lexicon) = synthesize_captions(&data, &spec).unwrap();
        let train_caps = captions.subset(data.train.ids()).unwrap();
        let vocab = build_vocabulary(&train_caps, &lexicon, min_frequency).unwrap();
        let inc = |s: &FeatureStore| build_incidence(&captions, &vocab, &lexicon, s.ids()).unwrap();
        Self {
            train_inc: inc(&data.train),
            val_inc: inc(&data.val),
            test_inc: inc(&data.test),
            spec,
            data,
            vocab,
        }
    }

    pub fn seeded(seed: u64) -> Self {
        Self::new(
            BenchSpec {
                seed,
                ..BenchSpec::default()
            },
            10,
        )
    }
}

/// Optimizer and episode settings shared by every method in comparisons.
pub fn base_config(method: Method, seed: u64) -> TrainConfig {
    TrainConfig {
        method,
        seed,
        selection: match method {
            Method::Spume | Method::SpumeRandom => Selection::PseudoUnbiased,
            Method::Erm | Method::ErmCosine => Selection::ValidationAccuracy,
        },
        ..TrainConfig::default()
    }
}

pub fn store(rows: &[(usize, &[f64])], n_classes: usize) -> FeatureStore {
    let dim = rows[0].1.len();
    let mut s = FeatureStore::new(dim, n_classes);
    for (i, (y, x)) in rows.iter().enumerate() {
        s.push(format!("s{i}"), *y, None, x).unwrap();
    }
    s
}
