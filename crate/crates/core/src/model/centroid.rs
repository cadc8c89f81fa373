//! Centroid-based classifier with a temperature-scaled cosine softmax, and
//! the episodic loss whose gradient flows through both the support branch
//! (via the centroids) and the query branch.

use crate::data::FeatureStore;
use crate::episodes::Episode;
use crate::error::{Error, Result};
use crate::model::extractor::{backward, embed, forward, ExtractorParams, GradientSet};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        0.0
    } else {
        dot(a, b) / denom
    }
}

/// Adds `scale * d cos(a, b) / d a` into `out`.
pub(crate) fn add_cosine_grad(a: &[f64], b: &[f64], scale: f64, out: &mut [f64]) {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 || scale == 0.0 {
        return;
    }
    let c = dot(a, b) / (na * nb);
    for i in 0..a.len() {
        out[i] += scale * (b[i] / (na * nb) - c * a[i] / (na * na));
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub(crate) fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidSet {
    centroids: Vec<Vec<f64>>,
    tau: f64,
}

impl CentroidSet {
    pub fn new(centroids: Vec<Vec<f64>>, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {tau}")));
        }
        if centroids.is_empty() {
            return Err(Error::Shape("no centroids".into()));
        }
        let dim = centroids[0].len();
        if centroids.iter().any(|c| c.len() != dim) {
            return Err(Error::Shape("centroids differ in dimension".into()));
        }
        if centroids.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Divergence("centroid".into()));
        }
        Ok(Self { centroids, tau })
    }

    /// Class means of every training sample's embedding.
    pub fn from_store(params: &ExtractorParams, store: &FeatureStore, tau: f64) -> Result<Self> {
        let emb = embed(params, store.features(), store.len())?;
        let means = class_centroids(&emb, params.output_dim(), store.labels(), store.n_classes())?;
        Self::new(means, tau)
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n_classes(&self) -> usize {
        self.centroids.len()
    }

    pub fn logits(&self, embedding: &[f64]) -> Vec<f64> {
        self.centroids
            .iter()
            .map(|w| self.tau * cosine(w, embedding))
            .collect()
    }

    pub fn predict(&self, embedding: &[f64]) -> usize {
        argmax(&self.logits(embedding))
    }
}

/// Mean embedding per class. `embeddings` is row-major `labels.len() x dim`.
pub fn class_centroids(
    embeddings: &[f64],
    dim: usize,
    labels: &[usize],
    n_classes: usize,
) -> Result<Vec<Vec<f64>>> {
    if embeddings.len() != labels.len() * dim {
        return Err(Error::Shape("embeddings do not match labels".into()));
    }
    let mut sums = vec![vec![0.0; dim]; n_classes];
    let mut counts = vec![0usize; n_classes];
    for (row, &label) in embeddings.chunks_exact(dim).zip(labels) {
        if label >= n_classes {
            return Err(Error::Data(format!("label {label} outside {n_classes} classes")));
        }
        counts[label] += 1;
        sums[label].iter_mut().zip(row).for_each(|(s, x)| *s += x);
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Data(format!("class {empty} has no samples")));
    }
    for (sum, &count) in sums.iter_mut().zip(&counts) {
        sum.iter_mut().for_each(|s| *s /= count as f64);
    }
    Ok(sums)
}

/// `softmax_k(tau * cos(w_k, embedding))`.
pub fn predict_proba(centroids: &CentroidSet, embedding: &[f64]) -> Vec<f64> {
    softmax(&centroids.logits(embedding))
}

struct EpisodeForward {
    loss: f64,
    cache: crate::model::extractor::ForwardCache,
    d_embeddings: Vec<f64>,
}

fn episode_pass(
    params: &ExtractorParams,
    episode: &Episode,
    data: &FeatureStore,
    tau: f64,
    want_grad: bool,
) -> Result<EpisodeForward> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let n_s = episode.support.len();
    let n_q = episode.query.len();
    if n_s == 0 || n_q == 0 {
        return Err(Error::Data("episode has an empty support or query set".into()));
    }
    let n_classes = episode.classes.len();
    let local = |class: usize| {
        episode
            .local_class(class)
            .ok_or_else(|| Error::Data(format!("class {class} is not part of the episode")))
    };
    let indices: Vec<usize> = episode
        .support
        .iter()
        .chain(&episode.query)
        .map(|&(s, _)| s)
        .collect();
    let inputs = data.gather(&indices);
    let (emb, cache) = forward(params, &inputs, n_s + n_q)?;
    let dim = params.output_dim();

    let support_labels = episode
        .support
        .iter()
        .map(|&(_, c)| local(c))
        .collect::<Result<Vec<_>>>()?;
    let query_labels = episode
        .query
        .iter()
        .map(|&(_, c)| local(c))
        .collect::<Result<Vec<_>>>()?;
    let centroids = class_centroids(&emb[..n_s * dim], dim, &support_labels, n_classes)?;
    let mut counts = vec![0usize; n_classes];
    for &l in &support_labels {
        counts[l] += 1;
    }

    let mut loss = 0.0;
    let mut d_emb = vec![0.0; (n_s + n_q) * dim];
    let mut d_centroids = vec![vec![0.0; dim]; n_classes];
    for (qi, &y) in query_labels.iter().enumerate() {
        let row = n_s + qi;
        let e = &emb[row * dim..(row + 1) * dim];
        let logits: Vec<f64> = centroids.iter().map(|w| tau * cosine(w, e)).collect();
        loss += log_sum_exp(&logits) - logits[y];
        if want_grad {
            let p = softmax(&logits);
            let d_e = &mut d_emb[row * dim..(row + 1) * dim];
            for k in 0..n_classes {
                let d_logit = (p[k] - if k == y { 1.0 } else { 0.0 }) / n_q as f64;
                add_cosine_grad(e, &centroids[k], tau * d_logit, d_e);
                add_cosine_grad(&centroids[k], e, tau * d_logit, &mut d_centroids[k]);
            }
        }
    }
    if want_grad {
        for (si, &k) in support_labels.iter().enumerate() {
            let d_e = &mut d_emb[si * dim..(si + 1) * dim];
            for (d, g) in d_e.iter_mut().zip(&d_centroids[k]) {
                *d += g / counts[k] as f64;
            }
        }
    }
    let loss = loss / n_q as f64;
    if !loss.is_finite() {
        return Err(Error::Divergence("episode loss".into()));
    }
    Ok(EpisodeForward {
        loss,
        cache,
        d_embeddings: d_emb,
    })
}

/// Mean negative log-probability of the true class over the query set, with
/// centroids built from the support set.
pub fn episode_loss(
    params: &ExtractorParams,
    episode: &Episode,
    data: &FeatureStore,
    tau: f64,
) -> Result<f64> {
    episode_pass(params, episode, data, tau, false).map(|f| f.loss)
}

/// Loss and its exact gradient with respect to every extractor parameter.
pub fn episode_gradient(
    params: &ExtractorParams,
    episode: &Episode,
    data: &FeatureStore,
    tau: f64,
) -> Result<(f64, GradientSet)> {
    let pass = episode_pass(params, episode, data, tau, true)?;
    let mut grads = params.zero_gradient();
    backward(params, &pass.cache, &pass.d_embeddings, &mut grads)?;
    if !grads.is_finite() {
        return Err(Error::Divergence("episode gradient".into()));
    }
    Ok((pass.loss, grads))
}

/// Predicts the class of `x` against centroids of all training samples.
pub fn infer(params: &ExtractorParams, train: &FeatureStore, x: &[f64], tau: f64) -> Result<usize> {
    let centroids = CentroidSet::from_store(params, train, tau)?;
    let e = embed(params, x, 1)?;
    Ok(centroids.predict(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_of_zero_vector_is_zero() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
        assert!((cosine(&[1.0, 0.0], &[2.0, 0.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn centroid_means() {
        let c = class_centroids(&[1.0, 0.0, 0.0, 1.0], 2, &[0, 0], 1).unwrap();
        assert_eq!(c, vec![vec![0.5, 0.5]]);
        let c = class_centroids(&[3.0, 4.0], 2, &[0], 1).unwrap();
        assert_eq!(c, vec![vec![3.0, 4.0]]);
        assert!(class_centroids(&[3.0, 4.0], 2, &[0], 2).is_err());
    }

    #[test]
    fn proba_examples() {
        let set = CentroidSet::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 5.0).unwrap();
        let p = predict_proba(&set, &[1.0, 1.0]);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        let p = predict_proba(&set, &[2.0, 0.0]);
        let want0 = 1.0 / (1.0 + (-5f64).exp());
        assert!((p[0] - want0).abs() < 1e-15);
        assert!((p[0] - 0.99331).abs() < 1e-5 && (p[1] - 0.00669).abs() < 1e-5);
        let single = CentroidSet::new(vec![vec![1.0, 2.0]], 5.0).unwrap();
        assert_eq!(predict_proba(&single, &[-3.0, 0.1]), vec![1.0]);
    }

    #[test]
    fn temperature_must_be_positive() {
        assert!(CentroidSet::new(vec![vec![1.0]], 0.0).is_err());
        assert!(CentroidSet::new(vec![vec![1.0]], f64::NAN).is_err());
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }
}
