//! Minimal dense layers with hand-written backward passes.
//!
//! Everything is `f64` and batched row-major: a batch is an `(n, features)`
//! matrix. Layers cache nothing internally; `forward_cached` returns the
//! activations that `backward` needs, so a layer can be shared by several
//! forward passes within one step (the shared decoder runs on three latents).

mod optim;

pub use optim::AdamW;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A trainable tensor with its gradient accumulator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Param {
    pub value: Array2<f64>,
    #[serde(skip, default = "empty")]
    pub grad: Array2<f64>,
}

fn empty() -> Array2<f64> {
    Array2::zeros((0, 0))
}

impl Param {
    pub fn new(value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        if self.grad.raw_dim() != self.value.raw_dim() {
            self.grad = Array2::zeros(self.value.raw_dim());
        } else {
            self.grad.fill(0.0);
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Anything that owns parameters. Names are stable and used by checkpoints.
pub trait Module {
    fn params(&self) -> Vec<(String, &Param)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Param)>;

    fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }
}

/// SHA-256 over parameter names and the raw bits of every value.
pub fn checksum<M: Module + ?Sized>(module: &M) -> String {
    let mut h = Sha256::new();
    for (name, p) in module.params() {
        h.update(name.as_bytes());
        h.update((p.value.nrows() as u64).to_le_bytes());
        h.update((p.value.ncols() as u64).to_le_bytes());
        for v in p.value.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn prefixed<'a>(prefix: &str, v: Vec<(String, &'a Param)>) -> Vec<(String, &'a Param)> {
    v.into_iter().map(|(n, p)| (format!("{prefix}.{n}"), p)).collect()
}

pub(crate) fn prefixed_mut<'a>(
    prefix: &str,
    v: Vec<(String, &'a mut Param)>,
) -> Vec<(String, &'a mut Param)> {
    v.into_iter().map(|(n, p)| (format!("{prefix}.{n}"), p)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Linear {
    /// `(in, out)`
    pub weight: Param,
    /// `(1, out)`
    pub bias: Param,
}

impl Linear {
    /// Xavier-normal weights, small normal biases.
    pub fn new<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let std = (2.0 / (input + output) as f64).sqrt();
        let w = Normal::new(0.0, std).expect("valid std");
        let b = Normal::new(0.0, 1e-3).expect("valid std");
        Linear {
            weight: Param::new(Array2::from_shape_fn((input, output), |_| w.sample(rng))),
            bias: Param::new(Array2::from_shape_fn((1, output), |_| b.sample(rng))),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Param::new(Array2::zeros((input, output))),
            bias: Param::new(Array2::zeros((1, output))),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight.value) + &self.bias.value
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: ArrayView2<f64>, dy: ArrayView2<f64>) -> Array2<f64> {
        self.weight.grad += &x.t().dot(&dy);
        self.bias.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.weight.value.t())
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<(String, &Param)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        vec![
            ("weight".into(), &mut self.weight),
            ("bias".into(), &mut self.bias),
        ]
    }
}

/// Linear layers with `tanh` between them and no activation on the output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Inputs to every layer of an [`Mlp`] forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn new<R: Rng>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        let layers = dims.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> (Array2<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let out = layer.forward(h.view());
            inputs.push(h);
            h = if i < last { out.mapv(f64::tanh) } else { out };
        }
        (h, MlpCache { inputs })
    }

    pub fn backward(&mut self, cache: &MlpCache, dy: ArrayView2<f64>) -> Array2<f64> {
        let mut grad = dy.to_owned();
        for i in (0..self.layers.len()).rev() {
            grad = self.layers[i].backward(cache.inputs[i].view(), grad.view());
            if i > 0 {
                // input of layer i is tanh(pre-activation); d tanh = 1 - tanh^2
                let act = &cache.inputs[i];
                grad.zip_mut_with(act, |g, &a| *g *= 1.0 - a * a);
            }
        }
        grad
    }
}

impl Module for Mlp {
    fn params(&self) -> Vec<(String, &Param)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| prefixed(&format!("layer{i}"), l.params()))
            .collect()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| prefixed_mut(&format!("layer{i}"), l.params_mut()))
            .collect()
    }
}

/// Row-wise L2 normalization; zero rows stay zero.
pub fn l2_normalize_rows(x: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
    let norms = x.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    let mut y = x.to_owned();
    for (mut row, &n) in y.rows_mut().into_iter().zip(norms.iter()) {
        if n > 0.0 {
            row /= n;
        }
    }
    (y, norms)
}

/// Backward of [`l2_normalize_rows`] given its outputs and norms.
pub fn l2_normalize_rows_backward(
    y: ArrayView2<f64>,
    norms: &Array1<f64>,
    dy: ArrayView2<f64>,
) -> Array2<f64> {
    let mut dx = Array2::zeros(dy.raw_dim());
    for (i, (&n, mut out)) in norms.iter().zip(dx.rows_mut()).enumerate() {
        if n > 0.0 {
            let yr = y.row(i);
            let dr = dy.row(i);
            let proj = yr.dot(&dr);
            for j in 0..out.len() {
                out[j] = (dr[j] - yr[j] * proj) / n;
            }
        }
    }
    dx
}

/// Row-wise log-softmax.
pub fn log_softmax_rows(x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub fn softmax_rows(x: ArrayView2<f64>) -> Array2<f64> {
    log_softmax_rows(x).mapv(f64::exp)
}

/// Inverted dropout mask: kept entries are scaled by `1/(1-p)`.
pub fn dropout_mask<R: Rng>(shape: (usize, usize), p: f64, rng: &mut R) -> Array2<f64> {
    if p <= 0.0 {
        return Array2::ones(shape);
    }
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_fn(shape, |_| if rng.random::<f64>() < p { 0.0 } else { keep })
}
