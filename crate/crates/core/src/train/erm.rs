//! Minibatch cross-entropy baselines with a linear or cosine head.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{erm_loss, Checkpoint, Classifier, HeadKind, HeadMode, LinearHead};
use crate::train::config::TrainConfig;
use crate::train::history::{checkpoint_name, EpochRecord, TrainHistory};
use crate::train::meta::{derive_seed, initial_extractor, score_split, Split, TrainOutcome, INIT_STREAM};
use crate::train::optim::{cosine_lr, sgd_step, OptimizerState, SgdHyper};

fn head_mode(kind: HeadKind, tau: f64) -> HeadMode {
    match kind {
        HeadKind::Linear => HeadMode::Linear,
        HeadKind::Cosine => HeadMode::Cosine { tau },
    }
}

/// Trains extractor and head jointly; the returned best checkpoint maximizes
/// average validation accuracy. With zero epochs the initialization is the
/// only snapshot.
pub fn erm_train(
    cfg: &TrainConfig,
    train: Split<'_>,
    val: Split<'_>,
    kind: HeadKind,
) -> Result<TrainOutcome> {
    let mut checked = cfg.clone();
    checked.epochs = checked.epochs.max(1);
    checked.validate()?;
    if train.store.n_classes() != val.store.n_classes() || train.store.dim() != val.store.dim() {
        return Err(Error::Shape("training and validation splits disagree in shape".into()));
    }
    let index = train.group_index()?;
    let mode = head_mode(kind, cfg.tau);
    let mut params = initial_extractor(cfg, train.store.dim())?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, INIT_STREAM, 1));
    let mut head = LinearHead::init(train.store.n_classes(), params.output_dim(), &mut init_rng);
    let mut p_state = OptimizerState::zeros_like(&params);
    let mut h_state = OptimizerState::zeros_like(&head);

    let classifier = Classifier::Head(head.clone(), mode);
    let initial_table = score_split(&classifier, &params, train.store, &index, cfg.metric, 1)?;

    let snapshot = |params: &crate::model::ExtractorParams, head: &LinearHead, epoch| Checkpoint {
        params: params.clone(),
        tau: cfg.tau,
        epoch,
        head: Some((kind, head.clone())),
    };

    let mut history = TrainHistory::default();
    let mut snapshots = Vec::new();
    let mut order: Vec<usize> = (0..train.store.len()).collect();
    for epoch in 1..=cfg.epochs {
        let lr = cosine_lr(epoch - 1, cfg.epochs, cfg.lr);
        let hyper = SgdHyper {
            lr,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64, 0));
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for batch in order.chunks(cfg.erm_batch_size) {
            let inputs = train.store.gather(batch);
            let labels: Vec<usize> = batch.iter().map(|&i| train.store.labels()[i]).collect();
            let step = erm_loss(&params, &head, &inputs, &labels, mode)?;
            loss_sum += step.loss;
            batches += 1;
            sgd_step(&mut params, &step.extractor, &mut p_state, hyper)?;
            sgd_step(&mut head, &step.head, &mut h_state, hyper)?;
        }
        let classifier = Classifier::Head(head.clone(), mode);
        let metric = classifier.predict_store(&params, val.store)?.accuracy();
        history.records.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / batches as f64,
            selection_metric: metric,
            lr,
            table_epoch: None,
            checkpoint: checkpoint_name(epoch),
        });
        snapshots.push(snapshot(&params, &head, epoch));
    }
    if snapshots.is_empty() {
        snapshots.push(snapshot(&params, &head, 0));
    }

    let classifier = Classifier::Head(head.clone(), mode);
    let final_table = score_split(
        &classifier,
        &params,
        train.store,
        &index,
        cfg.metric,
        cfg.epochs + 1,
    )?;
    let best_epoch = history.best_epoch().unwrap_or(1);
    Ok(TrainOutcome {
        history,
        snapshots,
        best_epoch,
        initial_table,
        final_table,
    })
}
