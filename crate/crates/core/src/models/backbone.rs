//! Black-box autoencoder backbones: Multi-DAE (baseline only), Multi-VAE and
//! MacridVAE, with their own pretraining loop.

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::macrid::{concept_inputs, concept_inputs_backward, MacridConcepts, MacridDecoder};
use super::{Decoder, GaussianHead, HeadCache, LatentBatch, LatentGaussian, SIGMA_MIN};
use crate::dataio::{dense_inputs, dense_targets, UserExample};
use crate::nn::{dropout_mask, l2_normalize_rows, prefixed, prefixed_mut, AdamW, Mlp, MlpCache, Module, Param};
use crate::training::losses::{kl_with_grad, nll_with_grad};
use crate::util::rng;
use crate::{metrics, par, ranking, Result, TearsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    MultiDae,
    MultiVae,
    MacridVae,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacridSpec {
    pub n_concepts: usize,
    pub tau: f64,
    /// Multiplier on the encoder's standard deviations.
    pub sigma_scale: f64,
}

impl Default for MacridSpec {
    fn default() -> Self {
        MacridSpec { n_concepts: 4, tau: 0.1, sigma_scale: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    pub latent_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub dropout: f64,
    #[serde(default)]
    pub macrid: Option<MacridSpec>,
}

impl BackboneSpec {
    pub fn multi_vae(latent_dim: usize, hidden_dims: Vec<usize>) -> Self {
        BackboneSpec { kind: BackboneKind::MultiVae, latent_dim, hidden_dims, dropout: 0.5, macrid: None }
    }

    pub fn multi_dae(latent_dim: usize, hidden_dims: Vec<usize>) -> Self {
        BackboneSpec { kind: BackboneKind::MultiDae, latent_dim, hidden_dims, dropout: 0.5, macrid: None }
    }

    pub fn macrid_vae(latent_dim: usize, hidden_dims: Vec<usize>, macrid: MacridSpec) -> Self {
        BackboneSpec { kind: BackboneKind::MacridVae, latent_dim, hidden_dims, dropout: 0.5, macrid: Some(macrid) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(TearsError::invalid("latent_dim must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TearsError::invalid("dropout must lie in [0, 1)"));
        }
        match (self.kind, &self.macrid) {
            (BackboneKind::MacridVae, None) => Err(TearsError::invalid("macrid-vae needs concept settings")),
            (BackboneKind::MacridVae, Some(m)) if m.n_concepts < 2 => {
                Err(TearsError::invalid("macrid-vae needs at least 2 concepts"))
            }
            (BackboneKind::MacridVae, Some(m)) if self.latent_dim % m.n_concepts != 0 => Err(TearsError::invalid(
                "macrid-vae latent_dim must be divisible by the number of concepts",
            )),
            (BackboneKind::MacridVae, Some(m)) if m.tau <= 0.0 || m.sigma_scale <= 0.0 => {
                Err(TearsError::invalid("macrid-vae tau and sigma_scale must be positive"))
            }
            _ => Ok(()),
        }
    }

    /// Whether the backbone has a stochastic latent and can back TEARS.
    pub fn is_variational(&self) -> bool {
        self.kind != BackboneKind::MultiDae
    }

    /// The Gaussian head every encoder aligned with this backbone should use.
    pub fn latent_head(&self) -> GaussianHead {
        match &self.macrid {
            Some(m) if self.kind == BackboneKind::MacridVae => GaussianHead {
                latent_dim: self.latent_dim,
                sigma_scale: m.sigma_scale,
                concepts: Some(m.n_concepts),
            },
            _ => GaussianHead::plain(self.latent_dim),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Backbone {
    pub spec: BackboneSpec,
    pub n_items: usize,
    pub encoder: Mlp,
    pub decoder: Decoder,
}

pub(crate) struct EncoderCache {
    x: Array2<f64>,
    mlp: MlpCache,
    head: Option<HeadCache>,
    masks: Array2<f64>,
    concept: Option<ConceptCache>,
}

struct ConceptCache {
    assign: super::macrid::AssignCache,
    normed: Vec<Array2<f64>>,
    norms: Vec<ndarray::Array1<f64>>,
}

impl Backbone {
    pub fn new<R: Rng>(spec: BackboneSpec, n_items: usize, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let d = spec.latent_dim;
        let (encoder, decoder) = match spec.kind {
            BackboneKind::MultiVae | BackboneKind::MultiDae => {
                let out = if spec.kind == BackboneKind::MultiVae { 2 * d } else { d };
                let mut enc = vec![n_items];
                enc.extend(&spec.hidden_dims);
                enc.push(out);
                let mut dec = vec![d];
                dec.extend(spec.hidden_dims.iter().rev());
                dec.push(n_items);
                (Mlp::new(&enc, rng), Decoder::Mlp(Mlp::new(&dec, rng)))
            }
            BackboneKind::MacridVae => {
                let m = spec.macrid.as_ref().expect("validated");
                let dk = d / m.n_concepts;
                let mut enc = vec![n_items];
                enc.extend(&spec.hidden_dims);
                enc.push(2 * dk);
                let concepts = MacridConcepts::new(n_items, m.n_concepts, dk, m.tau, rng);
                (Mlp::new(&enc, rng), Decoder::Macrid(MacridDecoder { concepts }))
            }
        };
        Ok(Backbone { spec, n_items, encoder, decoder })
    }

    pub fn latent_dim(&self) -> usize {
        self.spec.latent_dim
    }

    fn concept_head(&self) -> GaussianHead {
        let m = self.spec.macrid.as_ref().expect("macrid spec");
        GaussianHead { latent_dim: self.spec.latent_dim / m.n_concepts, sigma_scale: m.sigma_scale, concepts: Some(1) }
    }

    /// Inference-mode encoding (no dropout) of raw rating rows.
    pub fn encode(&self, x: ArrayView2<f64>) -> Result<LatentBatch> {
        if x.ncols() != self.n_items {
            return Err(TearsError::DimensionMismatch { expected: self.n_items, got: x.ncols() });
        }
        Ok(self.forward::<rand_chacha::ChaCha8Rng>(x, None).0)
    }

    pub fn encode_row(&self, row: ArrayView1<f64>) -> Result<LatentGaussian> {
        Ok(self.encode(row.insert_axis(Axis(0)))?.row(0))
    }

    /// Encoder forward; `dropout` carries the rate and generator when training.
    pub(crate) fn forward<R: Rng>(&self, x: ArrayView2<f64>, dropout: Option<(f64, &mut R)>) -> (LatentBatch, EncoderCache) {
        let n = x.nrows();
        let d = self.spec.latent_dim;
        match &self.decoder {
            Decoder::Macrid(dec) => {
                let kk = dec.concepts.n_concepts();
                let dk = d / kk;
                let assign = dec.concepts.assign();
                let mut stacked = Array2::zeros((n * kk, self.n_items));
                let mut normed_all = Vec::with_capacity(kk);
                let mut norms_all = Vec::with_capacity(kk);
                for k in 0..kk {
                    let (_, normed, norms) = concept_inputs(x, &assign.c, k);
                    stacked.slice_mut(s![k * n..(k + 1) * n, ..]).assign(&normed);
                    normed_all.push(normed);
                    norms_all.push(norms);
                }
                let masks = match dropout {
                    Some((p, r)) => dropout_mask(stacked.dim(), p, r),
                    None => Array2::ones((0, 0)),
                };
                if !masks.is_empty() {
                    stacked *= &masks;
                }
                let (out, mlp) = self.encoder.forward_cached(stacked.view());
                let (lat, head) = self.concept_head().forward(out.view());
                let mut mu = Array2::zeros((n, d));
                let mut sigma = Array2::zeros((n, d));
                for k in 0..kk {
                    mu.slice_mut(s![.., k * dk..(k + 1) * dk]).assign(&lat.mu.slice(s![k * n..(k + 1) * n, ..]));
                    sigma.slice_mut(s![.., k * dk..(k + 1) * dk]).assign(&lat.sigma.slice(s![k * n..(k + 1) * n, ..]));
                }
                let cache = EncoderCache {
                    x: x.to_owned(),
                    mlp,
                    head: Some(head),
                    masks,
                    concept: Some(ConceptCache { assign, normed: normed_all, norms: norms_all }),
                };
                (LatentBatch { mu, sigma }, cache)
            }
            Decoder::Mlp(_) => {
                let (mut h, _) = l2_normalize_rows(x);
                let masks = match dropout {
                    Some((p, r)) => dropout_mask(h.dim(), p, r),
                    None => Array2::ones((0, 0)),
                };
                if !masks.is_empty() {
                    h *= &masks;
                }
                let (out, mlp) = self.encoder.forward_cached(h.view());
                if self.spec.kind == BackboneKind::MultiDae {
                    let sigma = Array2::from_elem(out.raw_dim(), SIGMA_MIN);
                    let cache = EncoderCache { x: x.to_owned(), mlp, head: None, masks, concept: None };
                    (LatentBatch { mu: out, sigma }, cache)
                } else {
                    let (lat, head) = GaussianHead::plain(d).forward(out.view());
                    (lat, EncoderCache { x: x.to_owned(), mlp, head: Some(head), masks, concept: None })
                }
            }
        }
    }

    /// Accumulates encoder gradients (and, for MacridVAE, concept-embedding
    /// gradients through the input masking).
    pub(crate) fn backward_encoder(&mut self, cache: &EncoderCache, dmu: ArrayView2<f64>, dsigma: ArrayView2<f64>) {
        let n = dmu.nrows();
        let d = self.spec.latent_dim;
        match &cache.concept {
            Some(cc) => {
                let head = self.concept_head();
                let Decoder::Macrid(dec) = &mut self.decoder else { unreachable!("macrid cache") };
                let kk = dec.concepts.n_concepts();
                let dk = d / kk;
                let mut dmu_s = Array2::zeros((n * kk, dk));
                let mut dsig_s = Array2::zeros((n * kk, dk));
                for k in 0..kk {
                    dmu_s.slice_mut(s![k * n..(k + 1) * n, ..]).assign(&dmu.slice(s![.., k * dk..(k + 1) * dk]));
                    dsig_s.slice_mut(s![k * n..(k + 1) * n, ..]).assign(&dsigma.slice(s![.., k * dk..(k + 1) * dk]));
                }
                let dout = head.backward(cache.head.as_ref().expect("head cache"), dmu_s.view(), dsig_s.view());
                let mut dstacked = self.encoder.backward(&cache.mlp, dout.view());
                if !cache.masks.is_empty() {
                    dstacked *= &cache.masks;
                }
                let mut dc = Array2::zeros(cc.assign.c.raw_dim());
                for k in 0..kk {
                    let g = concept_inputs_backward(
                        cache.x.view(),
                        &cc.normed[k],
                        &cc.norms[k],
                        dstacked.slice(s![k * n..(k + 1) * n, ..]),
                    );
                    dc.column_mut(k).assign(&g);
                }
                let zeros = Array2::zeros(cc.assign.e_hat.raw_dim());
                dec.concepts.backward_assign(&cc.assign, dc.view(), zeros);
            }
            None => {
                let dout = match &cache.head {
                    Some(h) => GaussianHead::plain(d).backward(h, dmu, dsigma),
                    None => dmu.to_owned(),
                };
                self.encoder.backward(&cache.mlp, dout.view());
            }
        }
    }
}

impl Module for Backbone {
    fn params(&self) -> Vec<(String, &Param)> {
        let mut v = prefixed("encoder", self.encoder.params());
        v.extend(prefixed("decoder", self.decoder.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut v = prefixed_mut("encoder", self.encoder.params_mut());
        v.extend(prefixed_mut("decoder", self.decoder.params_mut()));
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// KL weight reached at the end of annealing.
    pub beta_max: f64,
    /// Fraction of total steps over which the KL weight ramps up linearly.
    pub anneal_fraction: f64,
    pub seed: u64,
    /// Validation cutoff used to pick the best epoch.
    pub k: usize,
}

impl Default for BackboneTrainConfig {
    fn default() -> Self {
        BackboneTrainConfig {
            epochs: 50,
            batch: 32,
            lr: 1e-3,
            weight_decay: 0.0,
            beta_max: 0.2,
            anneal_fraction: 0.5,
            seed: 0,
            k: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneTrainReport {
    pub epoch_losses: Vec<f64>,
    pub val_ndcg: Vec<f64>,
    pub best_epoch: usize,
}

/// Mean validation NDCG@k of a backbone's own ranking (input items masked).
pub(crate) fn backbone_ndcg(bb: &Backbone, val: &[UserExample], k: usize) -> Result<f64> {
    let users: Vec<&UserExample> = val.iter().filter(|e| !e.relevant.is_empty()).collect();
    if users.is_empty() {
        return Ok(0.0);
    }
    let x = dense_inputs(&users, bb.n_items);
    let lat = bb.encode(x.view())?;
    let logits = bb.decoder.forward(lat.mu.view());
    let scores = par::map_range(par::Parallelism::default(), users.len(), |b| {
        let top = ranking::top_k_indices(logits.row(b), &users[b].seen, k);
        metrics::ndcg_indices(&top, &users[b].relevant, k)
    });
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Trains a backbone with multinomial likelihood plus an annealed KL term
/// (variational kinds) and keeps the epoch with the best validation NDCG@k.
pub fn train_backbone(
    spec: BackboneSpec,
    n_items: usize,
    train: &[UserExample],
    val: &[UserExample],
    cfg: &BackboneTrainConfig,
) -> Result<(Backbone, BackboneTrainReport)> {
    if train.is_empty() {
        return Err(TearsError::EmptyDataset);
    }
    if cfg.batch == 0 || cfg.epochs == 0 {
        return Err(TearsError::invalid("batch and epochs must be positive"));
    }
    let mut r = rng(cfg.seed);
    let mut bb = Backbone::new(spec, n_items, &mut r)?;
    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let steps_per_epoch = train.len().div_ceil(cfg.batch);
    let total = (steps_per_epoch * cfg.epochs) as f64;
    let mut best = (backbone_ndcg(&bb, val, cfg.k)?, bb.clone(), 0);
    let mut report = BackboneTrainReport { epoch_losses: Vec::new(), val_ndcg: vec![best.0], best_epoch: 0 };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut r);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&UserExample> = chunk.iter().map(|&i| &train[i]).collect();
            let x = dense_inputs(&batch, n_items);
            let y = dense_targets(&batch, n_items);
            let beta = cfg.beta_max * (step as f64 / (cfg.anneal_fraction * total).max(1.0)).min(1.0);
            bb.zero_grad();
            let p = bb.spec.dropout;
            let (lat, cache) = bb.forward(x.view(), Some((p, &mut r)));
            let variational = bb.spec.is_variational();
            let eps: Array2<f64> = if variational {
                Array2::from_shape_fn(lat.mu.raw_dim(), |_| StandardNormal.sample(&mut r))
            } else {
                Array2::zeros(lat.mu.raw_dim())
            };
            let z = &lat.mu + &(&lat.sigma * &eps);
            let (logits, dcache) = bb.decoder.forward_cached(z.view());
            let (nll, dlogits) = nll_with_grad(logits.view(), y.view());
            let dz = bb.decoder.backward(&dcache, dlogits.view());
            let mut dmu = dz.clone();
            let mut dsigma = &dz * &eps;
            let mut loss = nll;
            if variational {
                let (kl, kmu, ksig) = kl_with_grad(&lat);
                loss += beta * kl;
                dmu.scaled_add(beta, &kmu);
                dsigma.scaled_add(beta, &ksig);
            }
            if !loss.is_finite() {
                return Err(TearsError::Numeric(format!("backbone loss became non-finite at step {step}")));
            }
            bb.backward_encoder(&cache, dmu.view(), dsigma.view());
            opt.step(&mut bb);
            epoch_loss += loss * batch.len() as f64;
            step += 1;
        }
        report.epoch_losses.push(epoch_loss / train.len() as f64);
        let v = backbone_ndcg(&bb, val, cfg.k)?;
        report.val_ndcg.push(v);
        log::debug!("backbone epoch {epoch}: loss {:.4} val ndcg@{} {v:.4}", epoch_loss / train.len() as f64, cfg.k);
        if v > best.0 {
            best = (v, bb.clone(), epoch);
        }
    }
    report.best_epoch = best.2;
    Ok((best.1, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn spec(kind: BackboneKind) -> BackboneSpec {
        match kind {
            BackboneKind::MultiVae => BackboneSpec::multi_vae(4, vec![6]),
            BackboneKind::MultiDae => BackboneSpec::multi_dae(4, vec![6]),
            BackboneKind::MacridVae => {
                BackboneSpec::macrid_vae(4, vec![6], MacridSpec { n_concepts: 2, tau: 0.5, sigma_scale: 0.1 })
            }
        }
    }

    /// Random rating rows; every user rates at least one item.
    fn rows(n: usize, items: usize, seed: u64) -> Array2<f64> {
        let mut r = rng(seed);
        let mut x =
            Array2::from_shape_fn((n, items), |_| if r.random::<f64>() < 0.4 { r.random_range(1..=5) as f64 } else { 0.0 });
        for b in 0..n {
            x[[b, b % items]] = 4.0;
        }
        x
    }

    #[test]
    fn spec_validation() {
        assert!(BackboneSpec { macrid: None, ..spec(BackboneKind::MacridVae) }.validate().is_err());
        let mut one = spec(BackboneKind::MacridVae);
        one.macrid.as_mut().unwrap().n_concepts = 1;
        assert!(one.validate().is_err());
        assert!(!spec(BackboneKind::MultiDae).is_variational());
    }

    #[test]
    fn inference_encoding_is_deterministic() {
        for kind in [BackboneKind::MultiVae, BackboneKind::MultiDae, BackboneKind::MacridVae] {
            let bb = Backbone::new(spec(kind), 9, &mut rng(1)).unwrap();
            let x = rows(3, 9, 2);
            assert_eq!(bb.encode(x.view()).unwrap(), bb.encode(x.view()).unwrap());
        }
    }

    #[test]
    fn macrid_concept_slices_are_unit_norm() {
        let spec = BackboneSpec::macrid_vae(64, vec![16], MacridSpec { n_concepts: 4, tau: 0.1, sigma_scale: 0.1 });
        let bb = Backbone::new(spec, 20, &mut rng(3)).unwrap();
        let lat = bb.encode(rows(5, 20, 4).view()).unwrap();
        for row in lat.mu.rows() {
            for k in 0..4 {
                let sl = row.slice(s![k * 16..(k + 1) * 16]);
                assert!((sl.dot(&sl).sqrt() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_row_through_zero_head_gives_standard_latent() {
        let mut bb = Backbone::new(spec(BackboneKind::MultiVae), 9, &mut rng(1)).unwrap();
        for (_, p) in bb.encoder.params_mut() {
            p.value.fill(0.0);
        }
        let g = bb.encode_row(Array2::<f64>::zeros((1, 9)).row(0)).unwrap();
        assert!(g.mu.iter().all(|&m| m == 0.0));
        assert!(g.sigma.iter().all(|&s| s == 1.0));
    }

    fn encoder_loss(bb: &Backbone, x: &Array2<f64>, wm: &Array2<f64>, ws: &Array2<f64>) -> f64 {
        let (lat, _) = bb.forward::<rand_chacha::ChaCha8Rng>(x.view(), None);
        (&lat.mu * wm).sum() + (&lat.sigma * ws).sum()
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        for kind in [BackboneKind::MultiVae, BackboneKind::MultiDae, BackboneKind::MacridVae] {
            let mut bb = Backbone::new(spec(kind), 7, &mut rng(8)).unwrap();
            let x = rows(3, 7, 9);
            let mut r = rng(10);
            let wm = Array2::from_shape_fn((3, 4), |_| r.random_range(-1.0..1.0));
            let ws = Array2::from_shape_fn((3, 4), |_| r.random_range(-1.0..1.0));
            bb.zero_grad();
            let (_, cache) = bb.forward::<rand_chacha::ChaCha8Rng>(x.view(), None);
            bb.backward_encoder(&cache, wm.view(), ws.view());
            let names: Vec<String> = bb.params().iter().map(|(n, _)| n.clone()).collect();
            for (pi, name) in names.iter().enumerate() {
                let g = bb.params()[pi].1.grad.clone();
                for idx in (0..g.len()).step_by(3) {
                    let (r0, c0) = (idx / g.ncols(), idx % g.ncols());
                    let at = |delta: f64| {
                        let mut b = bb.clone();
                        b.params_mut()[pi].1.value[[r0, c0]] += delta;
                        encoder_loss(&b, &x, &wm, &ws)
                    };
                    let h = 1e-4;
                    let num = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
                    let a = g[[r0, c0]];
                    assert!((num - a).abs() < 1e-6 * (1.0 + num.abs()), "{kind:?} {name} ({r0},{c0}): {num} vs {a}");
                }
            }
        }
    }
}
