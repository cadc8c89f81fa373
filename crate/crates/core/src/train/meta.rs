//! Episodic training: each epoch rescores every class-attribute pair with the
//! current extractor, then takes one optimizer step per task batch.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::AttributeIncidence;
use crate::data::FeatureStore;
use crate::episodes::build;
use crate::error::{Error, Result};
use crate::groups::{
    build_group_index, build_spuriousness_table, group_accuracy, GroupIndex, MetricKind,
    PredictionRecord, SpuriousnessTable,
};
use crate::model::{CentroidSet, Checkpoint, Classifier, ExtractorParams, GradientSet};
use crate::model::episode_gradient;
use crate::train::config::{Selection, TrainConfig};
use crate::train::history::{checkpoint_name, EpochRecord, TrainHistory};
use crate::train::optim::{cosine_lr, sgd_step, OptimizerState, SgdHyper};

/// Features of one split together with the detected attributes of its samples.
#[derive(Debug, Clone, Copy)]
pub struct Split<'a> {
    pub store: &'a FeatureStore,
    pub incidence: &'a AttributeIncidence,
}

impl<'a> Split<'a> {
    pub fn new(store: &'a FeatureStore, incidence: &'a AttributeIncidence) -> Result<Self> {
        if store.ids() != incidence.sample_ids() {
            return Err(Error::Data(
                "feature rows and attribute rows list different samples".into(),
            ));
        }
        Ok(Self { store, incidence })
    }

    pub fn group_index(&self) -> Result<GroupIndex> {
        build_group_index(self.store.labels(), self.store.n_classes(), self.incidence)
    }
}

/// Class-attribute groups of the validation split.
#[derive(Debug, Clone)]
pub struct ValidationGroups(pub GroupIndex);

impl ValidationGroups {
    pub fn build(val: Split<'_>) -> Result<Self> {
        val.group_index().map(Self)
    }
}

/// Mean accuracy over the nonempty validation groups, and how many there were.
pub fn pseudo_unbiased_from_predictions(
    groups: &ValidationGroups,
    predictions: &PredictionRecord,
) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut count = 0;
    for (_, _, members) in groups.0.nonempty_groups() {
        total += group_accuracy(members, predictions)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Data("every validation group is empty".into()));
    }
    Ok((total / count as f64, count))
}

/// Pseudo-unbiased accuracy of the centroid classifier built on `train`.
pub fn pseudo_unbiased_accuracy(
    params: &ExtractorParams,
    groups: &ValidationGroups,
    train: &FeatureStore,
    val: &FeatureStore,
    tau: f64,
) -> Result<(f64, usize)> {
    let classifier = Classifier::Centroid(CentroidSet::from_store(params, train, tau)?);
    let preds = classifier.predict_store(params, val)?;
    pseudo_unbiased_from_predictions(groups, &preds)
}

/// Spuriousness table of `classifier` on the samples indexed by `index`.
pub fn score_split(
    classifier: &Classifier,
    params: &ExtractorParams,
    store: &FeatureStore,
    index: &GroupIndex,
    metric: MetricKind,
    epoch_tag: usize,
) -> Result<SpuriousnessTable> {
    let preds = classifier.predict_store(params, store)?;
    build_spuriousness_table(index, &preds, metric, epoch_tag)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream seed for `(seed, a, b)`.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ a) ^ b.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub(crate) const INIT_STREAM: u64 = u64::MAX;

/// Extractor weights a run with `cfg` starts from.
pub fn initial_extractor(cfg: &TrainConfig, input_dim: usize) -> Result<ExtractorParams> {
    let mut dims = vec![input_dim];
    dims.extend_from_slice(&cfg.layers);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, INIT_STREAM, 0));
    ExtractorParams::init(&dims, cfg.activation, &mut rng)
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: TrainHistory,
    /// One checkpoint per completed epoch, in order.
    pub snapshots: Vec<Checkpoint>,
    pub best_epoch: usize,
    /// Table scored before the first update.
    pub initial_table: SpuriousnessTable,
    /// Table scored with the parameters left after the last epoch.
    pub final_table: SpuriousnessTable,
}

impl TrainOutcome {
    pub fn best(&self) -> &Checkpoint {
        &self.snapshots[self.best_epoch - 1]
    }

    pub fn last(&self) -> &Checkpoint {
        self.snapshots.last().expect("at least one epoch")
    }
}

fn selection_value(
    cfg: &TrainConfig,
    params: &ExtractorParams,
    train: &FeatureStore,
    val: &FeatureStore,
    groups: &ValidationGroups,
) -> Result<f64> {
    let classifier = Classifier::Centroid(CentroidSet::from_store(params, train, cfg.tau)?);
    let preds = classifier.predict_store(params, val)?;
    match cfg.selection {
        Selection::PseudoUnbiased => pseudo_unbiased_from_predictions(groups, &preds).map(|r| r.0),
        Selection::ValidationAccuracy => Ok(preds.accuracy()),
    }
}

/// Episodic training of the extractor. Returns every epoch's snapshot and the
/// one maximizing the selection metric (earliest on ties).
pub fn meta_train(cfg: &TrainConfig, train: Split<'_>, val: Split<'_>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let episode_cfg = cfg.episode_config();
    episode_cfg.validate()?;
    if train.store.n_classes() != val.store.n_classes() || train.store.dim() != val.store.dim() {
        return Err(Error::Shape("training and validation splits disagree in shape".into()));
    }
    if train.incidence.n_attributes() != val.incidence.n_attributes() {
        return Err(Error::Shape("splits use different attribute vocabularies".into()));
    }
    let index = train.group_index()?;
    let val_groups = ValidationGroups::build(val)?;
    let mut params = initial_extractor(cfg, train.store.dim())?;
    let mut state = OptimizerState::zeros_like(&params);

    let mut history = TrainHistory::default();
    let mut snapshots = Vec::with_capacity(cfg.epochs);
    let mut initial_table = None;
    let mut table: Option<SpuriousnessTable> = None;

    for epoch in 1..=cfg.epochs {
        if (epoch - 1) % cfg.recompute_interval == 0 {
            let classifier =
                Classifier::Centroid(CentroidSet::from_store(&params, train.store, cfg.tau)?);
            let fresh = score_split(&classifier, &params, train.store, &index, cfg.metric, epoch)?;
            if initial_table.is_none() {
                initial_table = Some(fresh.clone());
            }
            table = Some(fresh);
        }
        let current = table.as_ref().expect("scored on the first epoch");
        let lr = cosine_lr(epoch - 1, cfg.epochs, cfg.lr);
        let hyper = SgdHyper {
            lr,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
        };

        let mut loss_sum = 0.0;
        let tasks: Vec<usize> = (0..cfg.tasks_per_epoch).collect();
        for batch in tasks.chunks(cfg.task_batch) {
            let snapshot = &params;
            let results: Vec<Result<(f64, GradientSet)>> = batch
                .par_iter()
                .map(|&task| {
                    let seed = derive_seed(cfg.seed, epoch as u64, task as u64);
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let episode = build(&index, current, &episode_cfg, &mut rng)?;
                    episode_gradient(snapshot, &episode, train.store, cfg.tau)
                })
                .collect();
            let mut total = params.zero_gradient();
            for r in results {
                let (loss, grads) = r?;
                loss_sum += loss;
                total.add_assign(&grads);
            }
            total.scale(1.0 / batch.len() as f64);
            sgd_step(&mut params, &total, &mut state, hyper)?;
        }

        let metric = selection_value(cfg, &params, train.store, val.store, &val_groups)?;
        history.records.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / cfg.tasks_per_epoch as f64,
            selection_metric: metric,
            lr,
            table_epoch: Some(current.epoch_tag()),
            checkpoint: checkpoint_name(epoch),
        });
        snapshots.push(Checkpoint {
            params: params.clone(),
            tau: cfg.tau,
            epoch,
            head: None,
        });
    }

    let classifier = Classifier::Centroid(CentroidSet::from_store(&params, train.store, cfg.tau)?);
    let final_table = score_split(
        &classifier,
        &params,
        train.store,
        &index,
        cfg.metric,
        cfg.epochs + 1,
    )?;
    let best_epoch = history.best_epoch().expect("epochs >= 1");
    Ok(TrainOutcome {
        history,
        snapshots,
        best_epoch,
        initial_table: initial_table.expect("epochs >= 1"),
        final_table,
    })
}
