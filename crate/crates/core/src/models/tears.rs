//! The editable recommender: a frozen backbone encoder, a trainable side
//! encoder (text or genre profile), a shared decoder, and the fusion that
//! mixes the two latents.

use std::fs;
use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::macrid::{MacridCache, MacridDecoder};
use super::{Backbone, GaussianHead, GenreProfile, HeadCache, LatentBatch, LatentGaussian, TextEncoder};
use crate::nn::{checksum, dropout_mask, prefixed, prefixed_mut, softmax_rows, Mlp, MlpCache, Module, Param};
use crate::{Result, TearsError};

/// Bumped whenever the checkpoint layout changes.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Maps a latent to per-item logits.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decoder {
    Mlp(Mlp),
    Macrid(MacridDecoder),
}

pub enum DecoderCache {
    Mlp(MlpCache),
    Macrid(MacridCache),
}

impl Decoder {
    pub fn latent_dim(&self) -> usize {
        match self {
            Decoder::Mlp(m) => m.input_dim(),
            Decoder::Macrid(m) => m.latent_dim(),
        }
    }

    pub fn n_items(&self) -> usize {
        match self {
            Decoder::Mlp(m) => m.output_dim(),
            Decoder::Macrid(m) => m.concepts.n_items(),
        }
    }

    /// Unnormalized log-scores, `(batch, n_items)`.
    pub fn forward(&self, z: ArrayView2<f64>) -> Array2<f64> {
        match self {
            Decoder::Mlp(m) => m.forward(z),
            Decoder::Macrid(m) => m.forward(z),
        }
    }

    pub fn forward_cached(&self, z: ArrayView2<f64>) -> (Array2<f64>, DecoderCache) {
        match self {
            Decoder::Mlp(m) => {
                let (y, c) = m.forward_cached(z);
                (y, DecoderCache::Mlp(c))
            }
            Decoder::Macrid(m) => {
                let (y, c) = m.forward_cached(z);
                (y, DecoderCache::Macrid(c))
            }
        }
    }

    /// Accumulates parameter gradients and returns `dL/dz`.
    pub fn backward(&mut self, cache: &DecoderCache, dlogits: ArrayView2<f64>) -> Array2<f64> {
        match (self, cache) {
            (Decoder::Mlp(m), DecoderCache::Mlp(c)) => m.backward(c, dlogits),
            (Decoder::Macrid(m), DecoderCache::Macrid(c)) => m.backward(c, dlogits),
            _ => panic!("decoder cache does not match decoder kind"),
        }
    }

    /// Item distribution `softmax(D(z))` for one latent.
    pub fn decode(&self, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        if z.len() != self.latent_dim() {
            return Err(TearsError::DimensionMismatch { expected: self.latent_dim(), got: z.len() });
        }
        let logits = self.forward(z.insert_axis(Axis(0)));
        let p = softmax_rows(logits.view()).row(0).to_owned();
        if p.iter().any(|v| !v.is_finite()) {
            return Err(TearsError::Numeric("decoder produced non-finite scores".into()));
        }
        Ok(p)
    }
}

impl Module for Decoder {
    fn params(&self) -> Vec<(String, &Param)> {
        match self {
            Decoder::Mlp(m) => m.params(),
            Decoder::Macrid(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        match self {
            Decoder::Mlp(m) => m.params_mut(),
            Decoder::Macrid(m) => m.params_mut(),
        }
    }
}

/// How the side and backbone latents are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    /// `alpha * z_s + (1 - alpha) * z_r`.
    #[default]
    Mean,
    /// A learned MLP over `[z_s; z_r]`; the endpoints `alpha = 0` and
    /// `alpha = 1` return `z_r` and `z_s` unchanged.
    Concat,
}

/// MLP encoder over a genre-preference profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenreEncoder {
    pub mlp: Mlp,
    pub head: GaussianHead,
}

pub struct GenreCache {
    mlp: MlpCache,
    head: HeadCache,
}

impl GenreEncoder {
    pub fn new<R: Rng>(n_genres: usize, hidden: &[usize], head: GaussianHead, rng: &mut R) -> Self {
        let mut dims = vec![n_genres];
        dims.extend_from_slice(hidden);
        dims.push(head.output_dim());
        GenreEncoder { mlp: Mlp::new(&dims, rng), head }
    }

    pub fn n_genres(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn forward_cached(&self, profiles: ArrayView2<f64>) -> (LatentBatch, GenreCache) {
        self.forward_train::<rand_chacha::ChaCha8Rng>(profiles, None)
    }

    pub(crate) fn forward_train<R: Rng>(
        &self,
        profiles: ArrayView2<f64>,
        dropout: Option<(f64, &mut R)>,
    ) -> (LatentBatch, GenreCache) {
        let mask = dropout.filter(|(p, _)| *p > 0.0).map(|(p, r)| dropout_mask(profiles.dim(), p, r));
        let x = match &mask {
            Some(m) => &profiles * m,
            None => profiles.to_owned(),
        };
        let (out, mlp) = self.mlp.forward_cached(x.view());
        let (lat, head) = self.head.forward(out.view());
        (lat, GenreCache { mlp, head })
    }

    pub fn backward(&mut self, cache: &GenreCache, dmu: ArrayView2<f64>, dsigma: ArrayView2<f64>) {
        let dout = self.head.backward(&cache.head, dmu, dsigma);
        self.mlp.backward(&cache.mlp, dout.view());
    }
}

/// The trainable encoder aligned with the backbone latent space.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SideEncoder {
    Text(TextEncoder),
    Genre(GenreEncoder),
}

/// One user's side information.
#[derive(Debug, Clone, Copy)]
pub enum SideInput<'a> {
    Text(&'a str),
    Genre(&'a GenreProfile),
}

pub enum SideCache {
    Text(super::text::TextCache),
    Genre(GenreCache),
}

impl SideEncoder {
    pub fn head(&self) -> &GaussianHead {
        match self {
            SideEncoder::Text(t) => &t.head,
            SideEncoder::Genre(g) => &g.head,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SideEncoder::Text(_) => "text",
            SideEncoder::Genre(_) => "genre",
        }
    }

    pub fn forward_cached(&self, inputs: &[SideInput]) -> Result<(LatentBatch, SideCache)> {
        self.forward_train::<rand_chacha::ChaCha8Rng>(inputs, None)
    }

    /// Forward pass with optional inverted dropout on the encoder input.
    pub(crate) fn forward_train<R: Rng>(
        &self,
        inputs: &[SideInput],
        dropout: Option<(f64, &mut R)>,
    ) -> Result<(LatentBatch, SideCache)> {
        match self {
            SideEncoder::Text(enc) => {
                let texts = inputs
                    .iter()
                    .map(|i| match i {
                        SideInput::Text(t) => Ok(*t),
                        SideInput::Genre(_) => Err(TearsError::invalid("text encoder needs text input")),
                    })
                    .collect::<Result<Vec<&str>>>()?;
                let (lat, c) = enc.forward_train(&texts, dropout)?;
                Ok((lat, SideCache::Text(c)))
            }
            SideEncoder::Genre(enc) => {
                let mut x = Array2::zeros((inputs.len(), enc.n_genres()));
                for (b, i) in inputs.iter().enumerate() {
                    let SideInput::Genre(p) = i else {
                        return Err(TearsError::invalid("genre encoder needs a genre profile"));
                    };
                    if p.len() != enc.n_genres() {
                        return Err(TearsError::DimensionMismatch { expected: enc.n_genres(), got: p.len() });
                    }
                    x.row_mut(b).assign(&p.to_array());
                }
                let (lat, c) = enc.forward_train(x.view(), dropout);
                Ok((lat, SideCache::Genre(c)))
            }
        }
    }

    pub fn encode(&self, inputs: &[SideInput]) -> Result<LatentBatch> {
        Ok(self.forward_cached(inputs)?.0)
    }

    pub fn backward(&mut self, cache: &SideCache, dmu: ArrayView2<f64>, dsigma: ArrayView2<f64>) {
        match (self, cache) {
            (SideEncoder::Text(e), SideCache::Text(c)) => e.backward(c, dmu, dsigma),
            (SideEncoder::Genre(e), SideCache::Genre(c)) => e.backward(c, dmu, dsigma),
            _ => panic!("side cache does not match encoder kind"),
        }
    }
}

impl Module for SideEncoder {
    fn params(&self) -> Vec<(String, &Param)> {
        match self {
            SideEncoder::Text(e) => e.params(),
            SideEncoder::Genre(e) => prefixed("mlp", e.mlp.params()),
        }
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        match self {
            SideEncoder::Text(e) => e.params_mut(),
            SideEncoder::Genre(e) => prefixed_mut("mlp", e.mlp.params_mut()),
        }
    }
}

/// Frozen backbone plus trainable side encoder, decoder and fusion.
///
/// Without a backbone the model is the text-only variant: its decoder is
/// fresh and every latent is the side latent, whatever `alpha` says.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TearsModel {
    pub backbone: Option<Backbone>,
    pub side: SideEncoder,
    pub decoder: Decoder,
    pub fusion: Fusion,
    pub fuse_mlp: Option<Mlp>,
    pub n_items: usize,
    pub latent_dim: usize,
    /// Content hash of the item catalog the model was trained on.
    pub catalog_hash: String,
    /// Genre vocabulary in catalog order.
    pub genres: Vec<String>,
}

pub struct FuseCache {
    input: Option<MlpCache>,
}

impl TearsModel {
    /// A model aligned with `backbone`; the decoder starts as a copy of the
    /// backbone's decoder.
    pub fn with_backbone<R: Rng>(
        backbone: Backbone,
        side: SideEncoder,
        fusion: Fusion,
        catalog_hash: impl Into<String>,
        genres: Vec<String>,
        rng: &mut R,
    ) -> Result<Self> {
        if !backbone.spec.is_variational() {
            return Err(TearsError::invalid("the backbone must have a stochastic latent"));
        }
        let d = backbone.latent_dim();
        if side.head().latent_dim != d {
            return Err(TearsError::DimensionMismatch { expected: d, got: side.head().latent_dim });
        }
        let fuse_mlp = match fusion {
            Fusion::Mean => None,
            Fusion::Concat => Some(Mlp::new(&[2 * d, 2 * d, d], rng)),
        };
        Ok(TearsModel {
            decoder: backbone.decoder.clone(),
            n_items: backbone.n_items,
            latent_dim: d,
            backbone: Some(backbone),
            side,
            fusion,
            fuse_mlp,
            catalog_hash: catalog_hash.into(),
            genres,
        })
    }

    /// The text-only variant with a freshly initialized MLP decoder.
    pub fn without_backbone<R: Rng>(
        side: SideEncoder,
        n_items: usize,
        decoder_hidden: &[usize],
        catalog_hash: impl Into<String>,
        genres: Vec<String>,
        rng: &mut R,
    ) -> Result<Self> {
        let d = side.head().latent_dim;
        let mut dims = vec![d];
        dims.extend_from_slice(decoder_hidden);
        dims.push(n_items);
        Ok(TearsModel {
            backbone: None,
            side,
            decoder: Decoder::Mlp(Mlp::new(&dims, rng)),
            fusion: Fusion::Mean,
            fuse_mlp: None,
            n_items,
            latent_dim: d,
            catalog_hash: catalog_hash.into(),
            genres,
        })
    }

    pub fn has_backbone(&self) -> bool {
        self.backbone.is_some()
    }

    /// Backbone latents for dense rating rows.
    pub fn encode_ratings(&self, x: ArrayView2<f64>) -> Result<LatentBatch> {
        self.backbone
            .as_ref()
            .ok_or_else(|| TearsError::invalid("this model has no backbone encoder"))?
            .encode(x)
    }

    pub fn encode_rating_row(&self, row: ArrayView1<f64>) -> Result<LatentGaussian> {
        Ok(self.encode_ratings(row.insert_axis(Axis(0)))?.row(0))
    }

    pub fn encode_side(&self, inputs: &[SideInput]) -> Result<LatentBatch> {
        self.side.encode(inputs)
    }

    /// Combined latents for a batch. `z_r` may be `None` only for the
    /// text-only variant or when `alpha == 1`.
    pub fn fuse(&self, z_s: ArrayView2<f64>, z_r: Option<ArrayView2<f64>>, alpha: f64) -> Result<Array2<f64>> {
        Ok(self.fuse_cached(z_s, z_r, alpha)?.0)
    }

    pub(crate) fn fuse_cached(
        &self,
        z_s: ArrayView2<f64>,
        z_r: Option<ArrayView2<f64>>,
        alpha: f64,
    ) -> Result<(Array2<f64>, FuseCache)> {
        if !(0.0..=1.0).contains(&alpha) || alpha.is_nan() {
            return Err(TearsError::invalid(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        let none = FuseCache { input: None };
        if self.backbone.is_none() || alpha == 1.0 {
            return Ok((z_s.to_owned(), none));
        }
        let z_r = z_r.ok_or_else(|| TearsError::invalid("a backbone latent is required for alpha < 1"))?;
        if z_r.dim() != z_s.dim() {
            return Err(TearsError::DimensionMismatch { expected: z_s.ncols(), got: z_r.ncols() });
        }
        if alpha == 0.0 {
            return Ok((z_r.to_owned(), none));
        }
        match (&self.fusion, &self.fuse_mlp) {
            (Fusion::Concat, Some(mlp)) => {
                let x = concatenate![Axis(1), z_s, z_r];
                let (y, c) = mlp.forward_cached(x.view());
                Ok((y, FuseCache { input: Some(c) }))
            }
            _ => Ok((&z_s * alpha + &z_r * (1.0 - alpha), none)),
        }
    }

    /// Gradient of the fused latent with respect to `z_s` (the backbone
    /// latent is frozen, so its gradient is dropped).
    pub(crate) fn fuse_backward(&mut self, cache: &FuseCache, dz: ArrayView2<f64>, alpha: f64) -> Array2<f64> {
        if self.backbone.is_none() || alpha == 1.0 {
            return dz.to_owned();
        }
        if alpha == 0.0 {
            return Array2::zeros(dz.raw_dim());
        }
        match (&cache.input, &mut self.fuse_mlp) {
            (Some(c), Some(mlp)) => {
                let dx = mlp.backward(c, dz);
                dx.slice(s![.., ..self.latent_dim]).to_owned()
            }
            _ => &dz * alpha,
        }
    }

    /// Item distribution for one combined latent.
    pub fn decode(&self, z: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.decoder.decode(z)
    }

    /// Checksum of the frozen backbone, or empty without one.
    pub fn backbone_checksum(&self) -> String {
        self.backbone.as_ref().map(checksum).unwrap_or_default()
    }
}

/// Only the trainable parts: side encoder, decoder, fusion MLP.
impl Module for TearsModel {
    fn params(&self) -> Vec<(String, &Param)> {
        let mut v = prefixed("side", self.side.params());
        v.extend(prefixed("decoder", self.decoder.params()));
        if let Some(m) = &self.fuse_mlp {
            v.extend(prefixed("fuse", m.params()));
        }
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut v = prefixed_mut("side", self.side.params_mut());
        v.extend(prefixed_mut("decoder", self.decoder.params_mut()));
        if let Some(m) = &mut self.fuse_mlp {
            v.extend(prefixed_mut("fuse", m.params_mut()));
        }
        v
    }
}

/// Versioned on-disk model with integrity checksums.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TearsCheckpoint {
    pub version: u32,
    pub model: TearsModel,
    pub trainable_checksum: String,
    pub backbone_checksum: String,
    /// Free-form training metadata (config, epoch, validation score).
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl TearsCheckpoint {
    pub fn new(model: TearsModel, meta: serde_json::Value) -> Self {
        TearsCheckpoint {
            version: CHECKPOINT_VERSION,
            trainable_checksum: checksum(&model),
            backbone_checksum: model.backbone_checksum(),
            model,
            meta,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| TearsError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| TearsError::io(path, e))?;
        let mut ck: TearsCheckpoint = serde_json::from_str(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(TearsError::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        restore_grads(&mut ck.model);
        if checksum(&ck.model) != ck.trainable_checksum {
            return Err(TearsError::Checkpoint("trainable parameter checksum mismatch".into()));
        }
        if ck.model.backbone_checksum() != ck.backbone_checksum {
            return Err(TearsError::Checkpoint("backbone checksum mismatch".into()));
        }
        Ok(ck)
    }
}

/// Gradients are not serialized; reallocate them after loading.
pub(crate) fn restore_grads(model: &mut TearsModel) {
    for (_, p) in model.params_mut() {
        p.grad = Array2::zeros(p.value.raw_dim());
    }
    if let Some(bb) = &mut model.backbone {
        for (_, p) in bb.params_mut() {
            p.grad = Array2::zeros(p.value.raw_dim());
        }
    }
}
