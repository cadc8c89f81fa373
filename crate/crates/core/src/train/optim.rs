use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{ExtractorParams, GradientSet, LinearHead};

/// `0.5 * lr0 * (1 + cos(pi * t / total))`, annealing to zero at `t == total`.
pub fn cosine_lr(epoch: usize, total: usize, lr0: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let t = epoch.min(total) as f64 / total as f64;
    0.5 * lr0 * (1.0 + (PI * t).cos())
}

/// Anything exposing its parameters as a fixed sequence of flat tensors.
pub trait Tensors {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
}

impl Tensors for ExtractorParams {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers()
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers_mut()
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

impl Tensors for GradientSet {
    fn tensors(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
            .collect()
    }
}

impl Tensors for LinearHead {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.weight, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdHyper {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Momentum buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    velocity: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn zeros_like<P: Tensors>(params: &P) -> Self {
        Self {
            velocity: params.tensors().iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }
}

/// `g' = g + wd * p; v' = m * v + g'; p' = p - lr * v'`.
pub fn sgd_step<P: Tensors, G: Tensors>(
    params: &mut P,
    grads: &G,
    state: &mut OptimizerState,
    hyper: SgdHyper,
) -> Result<()> {
    let grads = grads.tensors();
    let mut tensors = params.tensors_mut();
    if tensors.len() != grads.len() || tensors.len() != state.velocity.len() {
        return Err(Error::Shape("optimizer tensors are not congruent".into()));
    }
    for ((p, g), v) in tensors.iter_mut().zip(&grads).zip(&mut state.velocity) {
        if p.len() != g.len() || p.len() != v.len() {
            return Err(Error::Shape("optimizer tensor lengths differ".into()));
        }
    }
    for ((p, g), v) in tensors.iter_mut().zip(&grads).zip(&mut state.velocity) {
        for i in 0..p.len() {
            let g_eff = g[i] + hyper.weight_decay * p[i];
            v[i] = hyper.momentum * v[i] + g_eff;
            p[i] -= hyper.lr * v[i];
        }
    }
    if tensors.iter().any(|t| t.iter().any(|x| !x.is_finite())) {
        return Err(Error::Divergence("parameters after SGD step".into()));
    }
    Ok(())
}
