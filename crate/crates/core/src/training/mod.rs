//! The three-term alignment objective and the training loop.
//!
//! `L = L_R + lambda1 * L_OT + lambda2(t) * L_KL`, where `L_R` sums the
//! multinomial likelihood of the decoder on the combined, side and backbone
//! latents. The backbone encoder is frozen; only the side encoder, the
//! decoder and (with concat fusion) the fusion MLP are updated.

pub mod losses;

pub use losses::{kl_loss, multinomial_nll, ot_loss, NLL_EPS};

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::{dense_inputs, dense_targets, UserExample};
use crate::models::{GenreProfile, LatentBatch, SideInput, TearsModel};
use crate::nn::{checksum, AdamW, Module};
use crate::par::{self, Parallelism};
use crate::summaries::SummaryCorpus;
use crate::util::{derive_seed, rng};
use crate::{metrics, ranking, Result, TearsError};
use losses::{kl_with_grad, nll_with_grad, ot_with_grad};

/// Which reconstruction heads contribute to `L_R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossHeads {
    /// Decoder on the combined latent.
    pub combined: bool,
    /// Decoder on the side latent alone.
    pub side: bool,
    /// Decoder on the frozen backbone latent.
    pub backbone: bool,
}

impl Default for LossHeads {
    fn default() -> Self {
        LossHeads { combined: true, side: true, backbone: true }
    }
}

/// Checkpoint selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// Mean validation NDCG@k over `val_alphas`.
    #[default]
    AlphaAverage,
    /// Validation NDCG@k of the side latent alone (`alpha = 1`).
    SideOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda1: f64,
    pub lambda2_max: f64,
    /// Fraction of all steps over which `lambda2` ramps linearly to its max.
    pub anneal_fraction: f64,
    pub alpha_train: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Inverted dropout on the side encoder's input features.
    pub dropout: f64,
    pub seed: u64,
    pub heads: LossHeads,
    pub selection: Selection,
    pub val_alphas: Vec<f64>,
    /// Validation cutoff.
    pub k: usize,
    pub parallelism: Parallelism,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda1: 0.1,
            lambda2_max: 0.5,
            anneal_fraction: 0.25,
            alpha_train: 0.5,
            lr: 1e-3,
            weight_decay: 0.0,
            batch: 32,
            epochs: 200,
            dropout: 0.0,
            seed: 0,
            heads: LossHeads::default(),
            selection: Selection::AlphaAverage,
            val_alphas: vec![0.0, 0.5, 1.0],
            k: 50,
            parallelism: Parallelism::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TearsError::invalid(m.to_string()));
        if !(self.lambda1 >= 0.0) || !(self.lambda2_max >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.alpha_train) {
            return bad("alpha_train must lie in [0, 1]");
        }
        if self.batch == 0 || self.epochs == 0 || self.k == 0 {
            return bad("batch, epochs and k must be positive");
        }
        if !(self.anneal_fraction > 0.0) {
            return bad("anneal_fraction must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return bad("lr must be positive and weight_decay non-negative");
        }
        if self.val_alphas.is_empty() || self.val_alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return bad("val_alphas must be a non-empty subset of [0, 1]");
        }
        Ok(())
    }

    /// KL weight at `step` of `total_steps`.
    pub fn lambda2_at(&self, step: usize, total_steps: usize) -> f64 {
        let ramp = self.anneal_fraction * total_steps as f64;
        if ramp <= 0.0 {
            return self.lambda2_max;
        }
        self.lambda2_max * (step as f64 / ramp).min(1.0)
    }

    /// Alphas used for checkpoint selection.
    pub fn selection_alphas(&self) -> Vec<f64> {
        match self.selection {
            Selection::AlphaAverage => self.val_alphas.clone(),
            Selection::SideOnly => vec![1.0],
        }
    }
}

/// Per-batch loss breakdown.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub l_r_total: f64,
    pub l_r_c: f64,
    pub l_r_s: f64,
    pub l_r_r: f64,
    pub l_ot: f64,
    pub l_kl: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub total: f64,
}

impl LossReport {
    fn check_finite(&self) -> Result<()> {
        let terms = [
            ("reconstruction (combined)", self.l_r_c),
            ("reconstruction (side)", self.l_r_s),
            ("reconstruction (backbone)", self.l_r_r),
            ("transport", self.l_ot),
            ("KL", self.l_kl),
        ];
        for (name, v) in terms {
            if !v.is_finite() {
                return Err(TearsError::Numeric(format!("{name} loss is {v}")));
            }
        }
        Ok(())
    }

    fn add_scaled(&mut self, other: &LossReport, w: f64) {
        self.l_r_total += w * other.l_r_total;
        self.l_r_c += w * other.l_r_c;
        self.l_r_s += w * other.l_r_s;
        self.l_r_r += w * other.l_r_r;
        self.l_ot += w * other.l_ot;
        self.l_kl += w * other.l_kl;
        self.total += w * other.total;
        self.lambda1 = other.lambda1;
        self.lambda2 = other.lambda2;
    }
}

/// Owned side information for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SideData {
    Text(String),
    Genre(GenreProfile),
}

impl SideData {
    pub fn as_input(&self) -> SideInput<'_> {
        match self {
            SideData::Text(t) => SideInput::Text(t),
            SideData::Genre(g) => SideInput::Genre(g),
        }
    }
}

/// Where the training loop finds each user's side information.
pub trait SideLookup: Sync {
    fn side(&self, user: &str) -> Option<SideInput<'_>>;
}

impl SideLookup for SummaryCorpus {
    fn side(&self, user: &str) -> Option<SideInput<'_>> {
        self.get(user).map(|s| SideInput::Text(&s.text))
    }
}

impl SideLookup for BTreeMap<String, GenreProfile> {
    fn side(&self, user: &str) -> Option<SideInput<'_>> {
        self.get(user).map(SideInput::Genre)
    }
}

impl SideLookup for BTreeMap<String, SideData> {
    fn side(&self, user: &str) -> Option<SideInput<'_>> {
        self.get(user).map(SideData::as_input)
    }
}

/// Looks up side inputs for a batch, naming the first user without one.
pub fn side_inputs<'a, S: SideLookup + ?Sized>(side: &'a S, examples: &[&UserExample]) -> Result<Vec<SideInput<'a>>> {
    examples
        .iter()
        .map(|e| side.side(&e.user).ok_or_else(|| TearsError::MissingSummary(e.user.clone())))
        .collect()
}

/// Everything the backward pass needs from one forward evaluation.
struct Pass {
    report: LossReport,
    side_cache: crate::models::SideCache,
    eps: Array2<f64>,
    fuse_cache: crate::models::FuseCache,
    heads: Vec<(Head, crate::models::DecoderCache, Array2<f64>)>,
    dmu_reg: Array2<f64>,
    dsigma_reg: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Head {
    Combined,
    Side,
    Backbone,
}

/// One evaluation of the objective. `z_r` is the frozen backbone latent
/// (means and standard deviations), absent for the text-only variant.
fn forward_pass<R: Rng>(
    model: &TearsModel,
    y: ArrayView2<f64>,
    z_r: Option<&LatentBatch>,
    side: &[SideInput],
    cfg: &TrainConfig,
    lambda2: f64,
    rng: &mut R,
) -> Result<Pass> {
    let dropout = (cfg.dropout > 0.0).then_some((cfg.dropout, &mut *rng));
    let (lat_s, side_cache) = model.side.forward_train(side, dropout)?;
    let eps: Array2<f64> = Array2::from_shape_fn(lat_s.mu.raw_dim(), |_| StandardNormal.sample(rng));
    let z_s = &lat_s.mu + &(&lat_s.sigma * &eps);
    let has_backbone = model.has_backbone() && z_r.is_some();
    let (z_c, fuse_cache) = model.fuse_cached(z_s.view(), z_r.map(|g| g.mu.view()), cfg.alpha_train)?;

    let mut report = LossReport { lambda1: cfg.lambda1, lambda2, ..LossReport::default() };
    let mut heads = Vec::new();
    let mut run = |head: Head, z: ArrayView2<f64>| {
        let (logits, cache) = model.decoder.forward_cached(z);
        let (l, dlogits) = nll_with_grad(logits.view(), y);
        heads.push((head, cache, dlogits));
        l
    };
    if has_backbone {
        if cfg.heads.combined {
            report.l_r_c = run(Head::Combined, z_c.view());
        }
        if cfg.heads.backbone {
            report.l_r_r = run(Head::Backbone, z_r.expect("checked").mu.view());
        }
    }
    // Without a backbone the combined latent is the side latent, so only
    // the side head is evaluated.
    if cfg.heads.side || !has_backbone {
        report.l_r_s = run(Head::Side, z_s.view());
    }
    report.l_r_total = report.l_r_c + report.l_r_s + report.l_r_r;

    let mut dmu_reg = Array2::zeros(lat_s.mu.raw_dim());
    let mut dsigma_reg = Array2::zeros(lat_s.mu.raw_dim());
    if let (true, Some(zr)) = (has_backbone, z_r) {
        let (l, dmu, dsig) = ot_with_grad(&lat_s, zr);
        report.l_ot = l;
        dmu_reg.scaled_add(cfg.lambda1, &dmu);
        dsigma_reg.scaled_add(cfg.lambda1, &dsig);
    }
    let (kl, kmu, ksig) = kl_with_grad(&lat_s);
    report.l_kl = kl;
    dmu_reg.scaled_add(lambda2, &kmu);
    dsigma_reg.scaled_add(lambda2, &ksig);
    report.total = report.l_r_total + cfg.lambda1 * report.l_ot + lambda2 * report.l_kl;
    report.check_finite()?;
    Ok(Pass { report, side_cache, eps, fuse_cache, heads, dmu_reg, dsigma_reg })
}

fn backward_pass(model: &mut TearsModel, pass: &Pass, alpha: f64) {
    let mut dz_s = pass.dmu_reg.clone();
    let mut dsigma = pass.dsigma_reg.clone();
    let mut dz_sample = Array2::zeros(pass.eps.raw_dim());
    for (head, cache, dlogits) in &pass.heads {
        let dz = model.decoder.backward(cache, dlogits.view());
        match head {
            Head::Combined => dz_sample += &model.fuse_backward(&pass.fuse_cache, dz.view(), alpha),
            Head::Side => dz_sample += &dz,
            Head::Backbone => {}
        }
    }
    dz_s += &dz_sample;
    dsigma += &(&dz_sample * &pass.eps);
    model.side.backward(&pass.side_cache, dz_s.view(), dsigma.view());
}

fn backbone_latents(model: &TearsModel, examples: &[&UserExample]) -> Result<Option<LatentBatch>> {
    if !model.has_backbone() {
        return Ok(None);
    }
    let x = dense_inputs(examples, model.n_items);
    Ok(Some(model.encode_ratings(x.view())?))
}

/// Evaluates the objective on one batch without touching gradients.
pub fn total_loss(
    model: &TearsModel,
    examples: &[&UserExample],
    side: &[SideInput],
    cfg: &TrainConfig,
    step: usize,
    total_steps: usize,
    seed: u64,
) -> Result<LossReport> {
    if examples.len() != side.len() {
        return Err(TearsError::DimensionMismatch { expected: examples.len(), got: side.len() });
    }
    let y = dense_targets(examples, model.n_items);
    let z_r = backbone_latents(model, examples)?;
    let lambda2 = cfg.lambda2_at(step, total_steps);
    Ok(forward_pass(model, y.view(), z_r.as_ref(), side, cfg, lambda2, &mut rng(seed))?.report)
}

/// Evaluates the objective and accumulates its gradients into `model`.
pub fn loss_and_grad(
    model: &mut TearsModel,
    examples: &[&UserExample],
    side: &[SideInput],
    cfg: &TrainConfig,
    lambda2: f64,
    seed: u64,
) -> Result<LossReport> {
    let y = dense_targets(examples, model.n_items);
    let z_r = backbone_latents(model, examples)?;
    let pass = forward_pass(model, y.view(), z_r.as_ref(), side, cfg, lambda2, &mut rng(seed))?;
    backward_pass(model, &pass, cfg.alpha_train);
    Ok(pass.report)
}

/// Result of comparing analytic and finite-difference gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`; the floor keeps
/// entries whose true gradient is zero from dividing rounding noise by zero.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks every trainable parameter of `model` against a fourth-order
/// central difference of `cfg`'s objective (same seed, so the same noise).
pub fn gradient_check(
    model: &TearsModel,
    examples: &[&UserExample],
    side: &[SideInput],
    cfg: &TrainConfig,
    lambda2: f64,
    seed: u64,
) -> Result<GradCheck> {
    let mut m = model.clone();
    m.zero_grad();
    loss_and_grad(&mut m, examples, side, cfg, lambda2, seed)?;
    let analytic: Vec<(String, Array2<f64>)> = m.params().into_iter().map(|(n, p)| (n, p.grad.clone())).collect();
    let y = dense_targets(examples, model.n_items);
    let z_r = backbone_latents(model, examples)?;
    let eval = |probe: &TearsModel| -> Result<f64> {
        Ok(forward_pass(probe, y.view(), z_r.as_ref(), side, cfg, lambda2, &mut rng(seed))?.report.total)
    };
    let h = 1e-4;
    let mut out = GradCheck { checked: 0, max_rel_error: 0.0, worst: String::new() };
    let mut probe = model.clone();
    for (pi, (name, grad)) in analytic.iter().enumerate() {
        for ((r, c), &a) in grad.indexed_iter() {
            let base = probe.params()[pi].1.value[[r, c]];
            let mut at = |delta: f64| -> Result<f64> {
                probe.params_mut()[pi].1.value[[r, c]] = base + delta;
                eval(&probe)
            };
            let (p1, m1, p2, m2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
            probe.params_mut()[pi].1.value[[r, c]] = base;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
            let e = relative_error(a, numeric, 1e-5);
            out.checked += 1;
            if e > out.max_rel_error {
                out.max_rel_error = e;
                out.worst = format!("{name}[{r},{c}]: analytic {a:e}, numeric {numeric:e}");
            }
        }
    }
    Ok(out)
}

/// Mean validation NDCG@k at each alpha, using mean latents and masking
/// every user's input items. Users without held-out positives are skipped.
pub fn validation_ndcg<S: SideLookup + ?Sized>(
    model: &TearsModel,
    val: &[UserExample],
    side: &S,
    alphas: &[f64],
    k: usize,
    mode: Parallelism,
) -> Result<Vec<f64>> {
    let users: Vec<&UserExample> = val.iter().filter(|e| !e.relevant.is_empty()).collect();
    if users.is_empty() {
        return Ok(vec![0.0; alphas.len()]);
    }
    let inputs = side_inputs(side, &users)?;
    let z_s = model.encode_side(&inputs)?.mu;
    let z_r = backbone_latents(model, &users)?.map(|g| g.mu);
    let mut out = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let z = if model.has_backbone() {
            model.fuse(z_s.view(), z_r.as_ref().map(|z| z.view()), alpha)?
        } else {
            z_s.clone()
        };
        let logits = model.decoder.forward(z.view());
        let scores = par::map_range(mode, users.len(), |b| {
            let top = ranking::top_k_indices(logits.row(b), &users[b].seen, k);
            metrics::ndcg_indices(&top, &users[b].relevant, k)
        });
        out.push(scores.iter().sum::<f64>() / scores.len() as f64);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Batch-size-weighted mean of the epoch's loss reports (zero at epoch 0).
    pub loss: LossReport,
    /// `(alpha, NDCG@k)` on validation.
    pub val_by_alpha: Vec<(f64, f64)>,
    /// The selection score.
    pub val_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub crate_version: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub catalog_hash: String,
    pub backbone_checksum: String,
    pub model_checksum: String,
    pub train_users: usize,
    pub val_users: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_score: f64,
    pub manifest: RunManifest,
}

impl TrainReport {
    pub fn initial_score(&self) -> f64 {
        self.history.first().map(|r| r.val_score).unwrap_or(0.0)
    }

    /// One JSON object per epoch.
    pub fn save_history(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| TearsError::io(path, e))?;
        for rec in &self.history {
            writeln!(f, "{}", serde_json::to_string(rec)?).map_err(|e| TearsError::io(path, e))?;
        }
        Ok(())
    }

    pub fn save_manifest(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(&self.manifest)?).map_err(|e| TearsError::io(path, e))
    }
}

/// Trains the side encoder, decoder and fusion of `model`, keeping the
/// backbone frozen, and returns the best checkpoint by validation score.
pub fn train<S: SideLookup + ?Sized>(
    mut model: TearsModel,
    train: &[UserExample],
    val: &[UserExample],
    side: &S,
    cfg: &TrainConfig,
) -> Result<(TearsModel, TrainReport)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TearsError::EmptyDataset);
    }
    let all: Vec<&UserExample> = train.iter().chain(val).collect();
    side_inputs(side, &all)?;
    let frozen = model.backbone_checksum();
    let alphas = cfg.selection_alphas();

    // The backbone is frozen and runs in inference mode, so its latents are
    // computed once.
    let train_refs: Vec<&UserExample> = train.iter().collect();
    let z_r_all = backbone_latents(&model, &train_refs)?;
    let y_all = dense_targets(&train_refs, model.n_items);

    let score = |m: &TearsModel| -> Result<(Vec<(f64, f64)>, f64)> {
        let v = validation_ndcg(m, val, side, &alphas, cfg.k, cfg.parallelism)?;
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        Ok((alphas.iter().copied().zip(v).collect(), mean))
    };
    let (by_alpha, s0) = score(&model)?;
    let mut history =
        vec![EpochRecord { epoch: 0, loss: LossReport::default(), val_by_alpha: by_alpha, val_score: s0 }];
    let mut best = (s0, model.clone(), 0usize);

    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut shuffle_rng = rng(derive_seed(cfg.seed, "shuffle"));
    let steps_per_epoch = train.len().div_ceil(cfg.batch);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut acc = LossReport::default();
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&UserExample> = chunk.iter().map(|&i| &train[i]).collect();
            let inputs = side_inputs(side, &batch)?;
            let y = y_all.select(ndarray::Axis(0), chunk);
            let z_r = z_r_all.as_ref().map(|g| LatentBatch {
                mu: g.mu.select(ndarray::Axis(0), chunk),
                sigma: g.sigma.select(ndarray::Axis(0), chunk),
            });
            let lambda2 = cfg.lambda2_at(step, total_steps);
            let mut step_rng = rng(derive_seed(cfg.seed, &format!("step-{step}")));
            model.zero_grad();
            let pass = forward_pass(&model, y.view(), z_r.as_ref(), &inputs, cfg, lambda2, &mut step_rng)
                .map_err(|e| TearsError::Numeric(format!("epoch {epoch}, step {step}: {e}")))?;
            backward_pass(&mut model, &pass, cfg.alpha_train);
            opt.step(&mut model);
            acc.add_scaled(&pass.report, chunk.len() as f64 / train.len() as f64);
            step += 1;
        }
        let (by_alpha, s) = score(&model)?;
        log::debug!("epoch {epoch}: loss {:.4}, validation {s:.4}", acc.total);
        history.push(EpochRecord { epoch, loss: acc, val_by_alpha: by_alpha, val_score: s });
        if s > best.0 {
            best = (s, model.clone(), epoch);
        }
    }
    debug_assert_eq!(model.backbone_checksum(), frozen);
    let (best_score, best_model, best_epoch) = best;
    let manifest = RunManifest {
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: cfg.clone(),
        catalog_hash: best_model.catalog_hash.clone(),
        backbone_checksum: frozen,
        model_checksum: checksum(&best_model),
        train_users: train.len(),
        val_users: val.len(),
    };
    Ok((best_model, TrainReport { history, best_epoch, best_score, manifest }))
}
