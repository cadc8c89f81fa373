//! Feature extractor, centroid and ERM heads, checkpoints.

pub mod centroid;
pub mod checkpoint;
pub mod extractor;
pub mod head;

pub use centroid::{
    argmax, class_centroids, cosine, episode_gradient, episode_loss, infer, predict_proba,
    CentroidSet,
};
pub use checkpoint::Checkpoint;
pub use extractor::{backward, embed, forward, Activation, ExtractorParams, ForwardCache, GradientSet, Layer};
pub use head::{erm_loss, ErmStep, HeadKind, HeadMode, LinearHead};

use crate::data::FeatureStore;
use crate::error::Result;
use crate::groups::PredictionRecord;

/// Decision rule applied on top of extractor embeddings.
#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    /// Nearest class centroid by cosine, centroids over all training data.
    Centroid(CentroidSet),
    Head(LinearHead, HeadMode),
}

impl Classifier {
    /// The classifier a checkpoint describes: its head when it has one,
    /// otherwise centroids of `train` under the checkpoint's extractor.
    pub fn from_checkpoint(ckpt: &Checkpoint, train: &FeatureStore) -> Result<Self> {
        match &ckpt.head {
            Some((HeadKind::Linear, head)) => Ok(Classifier::Head(head.clone(), HeadMode::Linear)),
            Some((HeadKind::Cosine, head)) => {
                Ok(Classifier::Head(head.clone(), HeadMode::Cosine { tau: ckpt.tau }))
            }
            None => Ok(Classifier::Centroid(CentroidSet::from_store(
                &ckpt.params,
                train,
                ckpt.tau,
            )?)),
        }
    }

    pub fn predict_embedding(&self, embedding: &[f64]) -> usize {
        match self {
            Classifier::Centroid(c) => c.predict(embedding),
            Classifier::Head(head, mode) => head.predict(embedding, *mode),
        }
    }

    /// Predictions for every sample of `store`.
    pub fn predict_store(&self, params: &ExtractorParams, store: &FeatureStore) -> Result<PredictionRecord> {
        let dim = params.output_dim();
        let emb = embed(params, store.features(), store.len())?;
        let predicted = emb
            .chunks_exact(dim)
            .map(|e| self.predict_embedding(e))
            .collect();
        PredictionRecord::new(predicted, store.labels().to_vec())
    }
}
