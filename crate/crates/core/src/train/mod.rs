//! Optimizer, schedules, episodic and ERM training loops.

pub mod config;
pub mod erm;
pub mod history;
pub mod meta;
pub mod optim;

pub use config::{Method, Selection, TrainConfig};
pub use erm::erm_train;
pub use history::{checkpoint_name, EpochRecord, TrainHistory};
pub use meta::{
    derive_seed, initial_extractor, meta_train, pseudo_unbiased_accuracy, pseudo_unbiased_from_predictions,
    score_split, Split, TrainOutcome, ValidationGroups,
};
pub use optim::{cosine_lr, sgd_step, OptimizerState, SgdHyper, Tensors};

use crate::error::Result;
use crate::model::HeadKind;

/// Runs the procedure named by `cfg.method`.
pub fn run(cfg: &TrainConfig, train: Split<'_>, val: Split<'_>) -> Result<TrainOutcome> {
    match cfg.method {
        Method::Spume | Method::SpumeRandom => meta_train(cfg, train, val),
        Method::Erm => erm_train(cfg, train, val, HeadKind::Linear),
        Method::ErmCosine => erm_train(cfg, train, val, HeadKind::Cosine),
    }
}
