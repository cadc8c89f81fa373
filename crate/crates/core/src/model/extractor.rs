use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

/// Elementwise nonlinearity applied between layers (never after the last).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative given the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        })
    }
}

/// Dense layer, `weight` is `out_dim x in_dim` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn new(in_dim: usize, out_dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Shape("layer dimensions must be positive".into()));
        }
        if weight.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::Shape(format!(
                "layer {in_dim}->{out_dim} given {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Self {
            in_dim,
            out_dim,
            weight,
            bias,
        })
    }
}

/// Parameters of the feature extractor: a multilayer perceptron.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorParams {
    layers: Vec<Layer>,
    activation: Activation,
}

impl ExtractorParams {
    pub fn new(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("extractor needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Shape(format!(
                    "layer output {} does not feed layer input {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        let params = Self { layers, activation };
        if !params.is_finite() {
            return Err(Error::Divergence("extractor parameters".into()));
        }
        Ok(params)
    }

    /// Random initialization for `dims = [input, hidden..., output]`: uniform
    /// in `±sqrt(6 / fan_in)` for ReLU, `±sqrt(6 / (fan_in + fan_out))`
    /// otherwise. Biases start at zero.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Shape("need input and output dimensions".into()));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            if fan_in == 0 || fan_out == 0 {
                return Err(Error::Shape("layer dimensions must be positive".into()));
            }
            let bound = match activation {
                Activation::Relu => (6.0 / fan_in as f64).sqrt(),
                _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let weight = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
            layers.push(Layer::new(fan_in, fan_out, weight, vec![0.0; fan_out])?);
        }
        Self::new(layers, activation)
    }

    /// Single square layer with identity weights and zero bias.
    pub fn identity(dim: usize) -> Self {
        let mut weight = vec![0.0; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        Self {
            layers: vec![Layer {
                in_dim: dim,
                out_dim: dim,
                weight,
                bias: vec![0.0; dim],
            }],
            activation: Activation::Identity,
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|x| x.is_finite()))
    }

    pub fn zero_gradient(&self) -> GradientSet {
        GradientSet {
            weights: self.layers.iter().map(|l| vec![0.0; l.weight.len()]).collect(),
            biases: self.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }
}

/// Accumulated loss gradient, shaped like [`ExtractorParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self
            .weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .zip(other.weights.iter().chain(&other.biases))
        {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    /// Flat view in parameter order: per layer, weights then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Embeds a row-major `batch x input_dim` block.
pub fn forward(
    params: &ExtractorParams,
    inputs: &[f64],
    batch: usize,
) -> Result<(Vec<f64>, ForwardCache)> {
    let in_dim = params.input_dim();
    if inputs.len() != batch * in_dim {
        return Err(Error::Shape(format!(
            "input of length {} is not {batch} rows of dimension {in_dim}",
            inputs.len()
        )));
    }
    let n_layers = params.layers.len();
    let mut pre = Vec::with_capacity(n_layers);
    let mut post: Vec<Vec<f64>> = Vec::with_capacity(n_layers);
    for (li, layer) in params.layers.iter().enumerate() {
        let x: &[f64] = if li == 0 { inputs } else { &post[li - 1] };
        let mut z = vec![0.0; batch * layer.out_dim];
        for b in 0..batch {
            let xb = &x[b * layer.in_dim..(b + 1) * layer.in_dim];
            let zb = &mut z[b * layer.out_dim..(b + 1) * layer.out_dim];
            for (o, zo) in zb.iter_mut().enumerate() {
                let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                *zo = layer.bias[o] + row.iter().zip(xb).map(|(w, v)| w * v).sum::<f64>();
            }
        }
        let y = if li + 1 < n_layers {
            z.iter().map(|&v| params.activation.apply(v)).collect()
        } else {
            z.clone()
        };
        pre.push(z);
        post.push(y);
    }
    let out = post[n_layers - 1].clone();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::Divergence("extractor output".into()));
    }
    Ok((
        out,
        ForwardCache {
            batch,
            input: inputs.to_vec(),
            pre,
            post,
        },
    ))
}

/// Forward pass without keeping the cache.
pub fn embed(params: &ExtractorParams, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
    forward(params, inputs, batch).map(|(out, _)| out)
}

/// Backpropagates `d_output` (`batch x output_dim`) and adds parameter
/// gradients into `grads`.
pub fn backward(
    params: &ExtractorParams,
    cache: &ForwardCache,
    d_output: &[f64],
    grads: &mut GradientSet,
) -> Result<()> {
    let batch = cache.batch;
    if d_output.len() != batch * params.output_dim() {
        return Err(Error::Shape("output gradient does not match the cached batch".into()));
    }
    let n_layers = params.layers.len();
    let mut delta = d_output.to_vec();
    for li in (0..n_layers).rev() {
        let layer = &params.layers[li];
        if li + 1 < n_layers {
            for (d, (&z, &y)) in delta.iter_mut().zip(cache.pre[li].iter().zip(&cache.post[li])) {
                *d *= params.activation.derivative(z, y);
            }
        }
        let x: &[f64] = if li == 0 {
            &cache.input
        } else {
            &cache.post[li - 1]
        };
        let gw = &mut grads.weights[li];
        let gb = &mut grads.biases[li];
        let mut d_input = vec![0.0; batch * layer.in_dim];
        for b in 0..batch {
            let xb = &x[b * layer.in_dim..(b + 1) * layer.in_dim];
            let db = &delta[b * layer.out_dim..(b + 1) * layer.out_dim];
            let dib = &mut d_input[b * layer.in_dim..(b + 1) * layer.in_dim];
            for (o, &d) in db.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                let grow = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for i in 0..layer.in_dim {
                    grow[i] += d * xb[i];
                    dib[i] += d * row[i];
                }
            }
        }
        delta = d_input;
    }
    Ok(())
}
