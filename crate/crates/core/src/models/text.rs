//! Text encoder: token embeddings, mean pooling, MLP, Gaussian head.
//!
//! Two embedders ship: a hashed uni+bigram table (vocabulary-free and
//! trainable) and a precomputed-embedding adapter for vectors produced by an
//! external pretrained encoder (frozen; only the MLP head trains on top).
//! Bigrams matter: an edit that swaps the genres of "loves drama" and
//! "dislikes horror" leaves the bag of words unchanged but not the bag of
//! bigrams.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{GaussianHead, HeadCache, LatentBatch};
use crate::nn::{dropout_mask, prefixed, prefixed_mut, Mlp, MlpCache, Module, Param};
use crate::util::{fnv1a, sha256_hex};
use crate::{Result, TearsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextEncoderSpec {
    /// Hash buckets shared by unigrams and bigrams.
    pub buckets: usize,
    pub embed_dim: usize,
    pub hidden_dims: Vec<usize>,
    /// Standard deviation of the initial embedding table. Small values keep
    /// tokens never seen in training from perturbing the pooled embedding.
    pub init_std: f64,
}

impl Default for TextEncoderSpec {
    fn default() -> Self {
        TextEncoderSpec { buckets: 8192, embed_dim: 64, hidden_dims: vec![256], init_std: 0.01 }
    }
}

/// Lowercased alphanumeric words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Hash bucket ids of every unigram and adjacent-word bigram.
pub(crate) fn token_ids(text: &str, buckets: usize) -> Vec<usize> {
    let words = tokenize(text);
    let b = buckets as u64;
    let mut ids: Vec<usize> = words.iter().map(|w| (fnv1a(format!("u\u{0}{w}").as_bytes()) % b) as usize).collect();
    ids.extend(
        words
            .windows(2)
            .map(|p| (fnv1a(format!("b\u{0}{} {}", p[0], p[1]).as_bytes()) % b) as usize),
    );
    ids
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TokenEmbedder {
    Hashed { table: Param },
    /// Pooled vectors from an external encoder, keyed by the SHA-256 of the
    /// exact text.
    Precomputed { dim: usize, vectors: BTreeMap<String, Vec<f64>> },
}

#[derive(Deserialize)]
struct PrecomputedRecord {
    text: String,
    embedding: Vec<f64>,
}

impl TokenEmbedder {
    pub fn hashed<R: Rng>(spec: &TextEncoderSpec, rng: &mut R) -> Self {
        let n = Normal::new(0.0, spec.init_std).expect("valid std");
        TokenEmbedder::Hashed { table: Param::new(Array2::from_shape_fn((spec.buckets, spec.embed_dim), |_| n.sample(rng))) }
    }

    /// Loads `{"text": ..., "embedding": [...]}` lines.
    pub fn load_precomputed(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| TearsError::io(path, e))?;
        let mut vectors = BTreeMap::new();
        let mut dim = None;
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| TearsError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let r: PrecomputedRecord =
                serde_json::from_str(&line).map_err(|e| TearsError::Parse { line: n + 1, message: e.to_string() })?;
            let d = *dim.get_or_insert(r.embedding.len());
            if r.embedding.len() != d || d == 0 {
                return Err(TearsError::DimensionMismatch { expected: d, got: r.embedding.len() });
            }
            vectors.insert(sha256_hex(r.text.as_bytes()), r.embedding);
        }
        let dim = dim.ok_or_else(|| TearsError::invalid("precomputed embedding file is empty"))?;
        Ok(TokenEmbedder::Precomputed { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        match self {
            TokenEmbedder::Hashed { table } => table.value.ncols(),
            TokenEmbedder::Precomputed { dim, .. } => *dim,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextEncoder {
    pub embedder: TokenEmbedder,
    pub mlp: Mlp,
    pub head: GaussianHead,
}

pub struct TextCache {
    tokens: Vec<Vec<usize>>,
    mask: Option<Array2<f64>>,
    mlp: MlpCache,
    head: HeadCache,
}

impl TextEncoder {
    pub fn new<R: Rng>(spec: &TextEncoderSpec, head: GaussianHead, rng: &mut R) -> Self {
        let embedder = TokenEmbedder::hashed(spec, rng);
        Self::with_embedder(embedder, &spec.hidden_dims, head, rng)
    }

    pub fn with_embedder<R: Rng>(embedder: TokenEmbedder, hidden: &[usize], head: GaussianHead, rng: &mut R) -> Self {
        let mut dims = vec![embedder.dim()];
        dims.extend_from_slice(hidden);
        dims.push(head.output_dim());
        TextEncoder { embedder, mlp: Mlp::new(&dims, rng), head }
    }

    fn pool(&self, texts: &[&str]) -> Result<(Array2<f64>, Vec<Vec<usize>>)> {
        let d = self.embedder.dim();
        let mut pooled = Array2::zeros((texts.len(), d));
        let mut tokens = Vec::with_capacity(texts.len());
        for (b, text) in texts.iter().enumerate() {
            if text.trim().is_empty() {
                return Err(TearsError::invalid("cannot encode empty text"));
            }
            match &self.embedder {
                TokenEmbedder::Hashed { table } => {
                    let ids = token_ids(text, table.value.nrows());
                    if ids.is_empty() {
                        return Err(TearsError::invalid(format!("text {text:?} has no tokens")));
                    }
                    let mut row = pooled.row_mut(b);
                    for &t in &ids {
                        row += &table.value.row(t);
                    }
                    row /= ids.len() as f64;
                    tokens.push(ids);
                }
                TokenEmbedder::Precomputed { vectors, .. } => {
                    let v = vectors
                        .get(&sha256_hex(text.as_bytes()))
                        .ok_or_else(|| TearsError::invalid("no precomputed embedding for this text"))?;
                    pooled.row_mut(b).assign(&ndarray::ArrayView1::from(v.as_slice()));
                    tokens.push(Vec::new());
                }
            }
        }
        Ok((pooled, tokens))
    }

    pub fn encode(&self, texts: &[&str]) -> Result<LatentBatch> {
        Ok(self.forward_cached(texts)?.0)
    }

    pub fn forward_cached(&self, texts: &[&str]) -> Result<(LatentBatch, TextCache)> {
        self.forward_train::<rand_chacha::ChaCha8Rng>(texts, None)
    }

    /// Forward pass with optional inverted dropout on the pooled embedding.
    pub(crate) fn forward_train<R: Rng>(
        &self,
        texts: &[&str],
        dropout: Option<(f64, &mut R)>,
    ) -> Result<(LatentBatch, TextCache)> {
        let (mut pooled, tokens) = self.pool(texts)?;
        let mask = dropout.filter(|(p, _)| *p > 0.0).map(|(p, r)| dropout_mask(pooled.dim(), p, r));
        if let Some(m) = &mask {
            pooled *= m;
        }
        let (out, mlp) = self.mlp.forward_cached(pooled.view());
        let (lat, head) = self.head.forward(out.view());
        Ok((lat, TextCache { tokens, mask, mlp, head }))
    }

    /// Accumulates parameter gradients from `dL/dmu` and `dL/dsigma`.
    pub fn backward(&mut self, cache: &TextCache, dmu: ArrayView2<f64>, dsigma: ArrayView2<f64>) {
        let dout = self.head.backward(&cache.head, dmu, dsigma);
        let mut dpooled = self.mlp.backward(&cache.mlp, dout.view());
        if let Some(m) = &cache.mask {
            dpooled *= m;
        }
        if let TokenEmbedder::Hashed { table } = &mut self.embedder {
            for (b, ids) in cache.tokens.iter().enumerate() {
                let g = &dpooled.row(b) / ids.len() as f64;
                for &t in ids {
                    let mut row = table.grad.row_mut(t);
                    row += &g;
                }
            }
        }
    }
}

impl Module for TextEncoder {
    fn params(&self) -> Vec<(String, &Param)> {
        let mut v = Vec::new();
        if let TokenEmbedder::Hashed { table } = &self.embedder {
            v.push(("embedding".to_string(), table));
        }
        v.extend(prefixed("mlp", self.mlp.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut v = Vec::new();
        if let TokenEmbedder::Hashed { table } = &mut self.embedder {
            v.push(("embedding".to_string(), table));
        }
        v.extend(prefixed_mut("mlp", self.mlp.params_mut()));
        v
    }
}
