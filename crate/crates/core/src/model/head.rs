//! Classification heads for the ERM baselines.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::model::centroid::{add_cosine_grad, argmax, cosine, log_sum_exp, softmax};
use crate::model::extractor::{backward, forward, ExtractorParams, GradientSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeadMode {
    /// `W e + b`
    Linear,
    /// `tau * cos(W_k, e)`; the bias is unused.
    Cosine { tau: f64 },
}

impl HeadMode {
    pub fn name(&self) -> &'static str {
        match self {
            HeadMode::Linear => "linear",
            HeadMode::Cosine { .. } => "cosine",
        }
    }
}

impl fmt::Display for HeadMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Linear,
    Cosine,
}

impl FromStr for HeadKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "linear" => Ok(HeadKind::Linear),
            "cosine" => Ok(HeadKind::Cosine),
            other => Err(format!("unknown head `{other}`")),
        }
    }
}

/// `n_classes x dim` weight (row-major) and `n_classes` bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub n_classes: usize,
    pub dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearHead {
    pub fn zeros(n_classes: usize, dim: usize) -> Self {
        Self {
            n_classes,
            dim,
            weight: vec![0.0; n_classes * dim],
            bias: vec![0.0; n_classes],
        }
    }

    pub fn new(n_classes: usize, dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weight.len() != n_classes * dim || bias.len() != n_classes {
            return Err(Error::Shape(format!(
                "head {n_classes}x{dim} given {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self {
            n_classes,
            dim,
            weight,
            bias,
        })
    }

    pub fn init<R: Rng + ?Sized>(n_classes: usize, dim: usize, rng: &mut R) -> Self {
        let bound = (1.0 / dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Self {
            n_classes,
            dim,
            weight: (0..n_classes * dim).map(|_| dist.sample(rng)).collect(),
            bias: vec![0.0; n_classes],
        }
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.weight[class * self.dim..(class + 1) * self.dim]
    }

    pub fn logits(&self, embedding: &[f64], mode: HeadMode) -> Vec<f64> {
        (0..self.n_classes)
            .map(|k| match mode {
                HeadMode::Linear => {
                    self.bias[k]
                        + self.row(k).iter().zip(embedding).map(|(w, x)| w * x).sum::<f64>()
                }
                HeadMode::Cosine { tau } => tau * cosine(self.row(k), embedding),
            })
            .collect()
    }

    pub fn predict(&self, embedding: &[f64], mode: HeadMode) -> usize {
        argmax(&self.logits(embedding, mode))
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct ErmStep {
    pub loss: f64,
    pub extractor: GradientSet,
    pub head: LinearHead,
}

/// Mean softmax cross-entropy of the head over the embedded batch, with
/// gradients for the extractor and the head.
pub fn erm_loss(
    params: &ExtractorParams,
    head: &LinearHead,
    inputs: &[f64],
    labels: &[usize],
    mode: HeadMode,
) -> Result<ErmStep> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::Data("empty batch".into()));
    }
    if head.dim != params.output_dim() {
        return Err(Error::Shape(format!(
            "head expects dimension {} but extractor emits {}",
            head.dim,
            params.output_dim()
        )));
    }
    let (emb, cache) = forward(params, inputs, n)?;
    let dim = head.dim;
    let mut head_grad = LinearHead::zeros(head.n_classes, dim);
    let mut d_emb = vec![0.0; n * dim];
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= head.n_classes {
            return Err(Error::Data(format!("label {y} outside {} classes", head.n_classes)));
        }
        let e = &emb[i * dim..(i + 1) * dim];
        let logits = head.logits(e, mode);
        loss += log_sum_exp(&logits) - logits[y];
        let p = softmax(&logits);
        let d_e = &mut d_emb[i * dim..(i + 1) * dim];
        for (k, &pk) in p.iter().enumerate() {
            let g = (pk - if k == y { 1.0 } else { 0.0 }) / n as f64;
            let w = head.row(k);
            let gw = &mut head_grad.weight[k * dim..(k + 1) * dim];
            match mode {
                HeadMode::Linear => {
                    head_grad.bias[k] += g;
                    for j in 0..dim {
                        gw[j] += g * e[j];
                        d_e[j] += g * w[j];
                    }
                }
                HeadMode::Cosine { tau } => {
                    add_cosine_grad(w, e, tau * g, gw);
                    add_cosine_grad(e, w, tau * g, d_e);
                }
            }
        }
    }
    let loss = loss / n as f64;
    if !loss.is_finite() {
        return Err(Error::Divergence("ERM loss".into()));
    }
    let mut grads = params.zero_gradient();
    backward(params, &cache, &d_emb, &mut grads)?;
    if !grads.is_finite() || !head_grad.is_finite() {
        return Err(Error::Divergence("ERM gradient".into()));
    }
    Ok(ErmStep {
        loss,
        extractor: grads,
        head: head_grad,
    })
}
