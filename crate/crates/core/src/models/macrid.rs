//! Disentangled concept machinery: items and `K` prototypes share a
//! `d/K`-dimensional space; each item is softly assigned to concepts, and a
//! user latent holds one `d/K` slice per concept.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::nn::{l2_normalize_rows, l2_normalize_rows_backward, softmax_rows, Module, Param};

/// Item and prototype embeddings with temperature `tau`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MacridConcepts {
    pub items: Param,
    pub protos: Param,
    pub tau: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct AssignCache {
    pub e_hat: Array2<f64>,
    e_norms: Array1<f64>,
    p_hat: Array2<f64>,
    p_norms: Array1<f64>,
    /// `(items, K)` soft assignment; rows sum to one.
    pub c: Array2<f64>,
}

impl MacridConcepts {
    pub fn new<R: Rng>(n_items: usize, n_concepts: usize, concept_dim: usize, tau: f64, rng: &mut R) -> Self {
        let std = (2.0 / (n_items + concept_dim) as f64).sqrt();
        let n = Normal::new(0.0, std).expect("valid std");
        MacridConcepts {
            items: Param::new(Array2::from_shape_fn((n_items, concept_dim), |_| n.sample(rng))),
            protos: Param::new(Array2::from_shape_fn((n_concepts, concept_dim), |_| n.sample(rng))),
            tau,
        }
    }

    pub fn n_items(&self) -> usize {
        self.items.value.nrows()
    }

    pub fn n_concepts(&self) -> usize {
        self.protos.value.nrows()
    }

    pub fn concept_dim(&self) -> usize {
        self.items.value.ncols()
    }

    /// `c[i, k] = softmax_k(cos(item_i, proto_k) / tau)`.
    pub(crate) fn assign(&self) -> AssignCache {
        let (e_hat, e_norms) = l2_normalize_rows(self.items.value.view());
        let (p_hat, p_norms) = l2_normalize_rows(self.protos.value.view());
        let a = e_hat.dot(&p_hat.t()) / self.tau;
        let c = softmax_rows(a.view());
        AssignCache { e_hat, e_norms, p_hat, p_norms, c }
    }

    /// Accumulates gradients from `dL/dc` and any direct `dL/de_hat`.
    pub(crate) fn backward_assign(&mut self, cache: &AssignCache, dc: ArrayView2<f64>, mut de_hat: Array2<f64>) {
        let c = &cache.c;
        let inner = (&dc * c).sum_axis(Axis(1)).insert_axis(Axis(1));
        let da = c * &(&dc - &inner);
        de_hat += &(da.dot(&cache.p_hat) / self.tau);
        let dp_hat = da.t().dot(&cache.e_hat) / self.tau;
        self.items.grad += &l2_normalize_rows_backward(cache.e_hat.view(), &cache.e_norms, de_hat.view());
        self.protos.grad += &l2_normalize_rows_backward(cache.p_hat.view(), &cache.p_norms, dp_hat.view());
    }
}

impl Module for MacridConcepts {
    fn params(&self) -> Vec<(String, &Param)> {
        vec![("items".into(), &self.items), ("protos".into(), &self.protos)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        vec![("items".into(), &mut self.items), ("protos".into(), &mut self.protos)]
    }
}

/// Decoder `D(z)_i = log sum_k c_ik softmax_i(cos(z_k, item_i) / tau)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MacridDecoder {
    pub concepts: MacridConcepts,
}

pub struct MacridCache {
    assign: AssignCache,
    z_hat: Vec<Array2<f64>>,
    z_norms: Vec<Array1<f64>>,
    probs: Vec<Array2<f64>>,
    q: Array2<f64>,
}

impl MacridDecoder {
    pub fn latent_dim(&self) -> usize {
        self.concepts.n_concepts() * self.concepts.concept_dim()
    }

    pub fn forward(&self, z: ArrayView2<f64>) -> Array2<f64> {
        self.forward_cached(z).0
    }

    pub fn forward_cached(&self, z: ArrayView2<f64>) -> (Array2<f64>, MacridCache) {
        let assign = self.concepts.assign();
        let dk = self.concepts.concept_dim();
        let mut q = Array2::zeros((z.nrows(), self.concepts.n_items()));
        let mut z_hat = Vec::new();
        let mut z_norms = Vec::new();
        let mut probs = Vec::new();
        for k in 0..self.concepts.n_concepts() {
            let (zh, zn) = l2_normalize_rows(z.slice(s![.., k * dk..(k + 1) * dk]));
            let logits = zh.dot(&assign.e_hat.t()) / self.concepts.tau;
            let p = softmax_rows(logits.view());
            q += &(&p * &assign.c.column(k).insert_axis(Axis(0)));
            z_hat.push(zh);
            z_norms.push(zn);
            probs.push(p);
        }
        let out = q.mapv(f64::ln);
        (out, MacridCache { assign, z_hat, z_norms, probs, q })
    }

    /// Accumulates gradients into the concept embeddings; returns `dL/dz`.
    pub fn backward(&mut self, cache: &MacridCache, dout: ArrayView2<f64>) -> Array2<f64> {
        let tau = self.concepts.tau;
        let dk = self.concepts.concept_dim();
        let kk = self.concepts.n_concepts();
        let dq = &dout / &cache.q;
        let mut dc = Array2::zeros(cache.assign.c.raw_dim());
        let mut de_hat = Array2::zeros(cache.assign.e_hat.raw_dim());
        let mut dz = Array2::zeros((dout.nrows(), kk * dk));
        for k in 0..kk {
            let p = &cache.probs[k];
            dc.column_mut(k).assign(&(&dq * p).sum_axis(Axis(0)));
            let dp = &dq * &cache.assign.c.column(k).insert_axis(Axis(0));
            let inner = (&dp * p).sum_axis(Axis(1)).insert_axis(Axis(1));
            let dlogits = p * &(&dp - &inner);
            let dzh = dlogits.dot(&cache.assign.e_hat) / tau;
            de_hat += &(dlogits.t().dot(&cache.z_hat[k]) / tau);
            let dzk = l2_normalize_rows_backward(cache.z_hat[k].view(), &cache.z_norms[k], dzh.view());
            dz.slice_mut(s![.., k * dk..(k + 1) * dk]).assign(&dzk);
        }
        self.concepts.backward_assign(&cache.assign, dc.view(), de_hat);
        dz
    }
}

impl Module for MacridDecoder {
    fn params(&self) -> Vec<(String, &Param)> {
        self.concepts.params()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        self.concepts.params_mut()
    }
}

/// Encoder input for concept `k`: the rating rows masked by the concept
/// assignment and L2-normalized. Returns the masked rows too for backward.
pub(crate) fn concept_inputs(x: ArrayView2<f64>, c: &Array2<f64>, k: usize) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let masked = &x * &c.column(k).insert_axis(Axis(0));
    let (normed, norms) = l2_normalize_rows(masked.view());
    (masked, normed, norms)
}

/// `dL/dc[:, k]` from the gradient with respect to the normalized concept
/// input.
pub(crate) fn concept_inputs_backward(
    x: ArrayView2<f64>,
    normed: &Array2<f64>,
    norms: &Array1<f64>,
    dnormed: ArrayView2<f64>,
) -> Array1<f64> {
    let dmasked = l2_normalize_rows_backward(normed.view(), norms, dnormed);
    (&dmasked * &x).sum_axis(Axis(0))
}
