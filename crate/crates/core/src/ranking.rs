//! Inference: alpha-mixed latents, guidance arithmetic, seen-item masking and
//! top-k lists. Every latent here is a Gaussian mean, so rankings are
//! deterministic.

use std::collections::HashSet;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataio::{ItemCatalog, ItemId, UserExample};
use crate::models::{SideInput, TearsModel};
use crate::nn::log_softmax_rows;
use crate::{Result, TearsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceMode {
    Positive,
    Negative,
}

/// A short steering phrase such as "More comedy movies".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Guidance {
    pub text: String,
    pub mode: GuidanceMode,
}

impl Guidance {
    pub fn new(text: impl Into<String>, mode: GuidanceMode) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(TearsError::invalid("guidance text must not be empty"));
        }
        Ok(Guidance { text, mode })
    }

    /// Routes by keyword: a leading "less" or "fewer" means negative.
    pub fn parse(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        let first = text.split_whitespace().next().unwrap_or("").to_lowercase();
        let mode = if first == "less" || first == "fewer" { GuidanceMode::Negative } else { GuidanceMode::Positive };
        Guidance::new(text, mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub alpha: f64,
    #[serde(default)]
    pub guidance: Option<Guidance>,
}

impl MixSpec {
    pub fn alpha(alpha: f64) -> Result<Self> {
        let spec = MixSpec { alpha, guidance: None };
        spec.validate()?;
        Ok(spec)
    }

    pub fn guided(guidance: Guidance) -> Self {
        MixSpec { alpha: 0.5, guidance: Some(guidance) }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if let Some(g) = &self.guidance {
            if g.text.trim().is_empty() {
                return Err(TearsError::invalid("guidance text must not be empty"));
            }
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(TearsError::invalid(format!("alpha must lie in [0, 1], got {alpha}")))
    }
}

fn check_dims(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(TearsError::DimensionMismatch { expected: a.len(), got: b.len() })
    }
}

/// `alpha * z_s + (1 - alpha) * z_r`.
pub fn mix_latents(z_s: ArrayView1<f64>, z_r: ArrayView1<f64>, alpha: f64) -> Result<Array1<f64>> {
    check_alpha(alpha)?;
    check_dims(z_s, z_r)?;
    Ok(&z_s * alpha + &z_r * (1.0 - alpha))
}

/// Positive: `(z_r + z_g) / 2`; negative: `(z_r - z_g) / 2`.
pub fn guided_latent(z_r: ArrayView1<f64>, z_g: ArrayView1<f64>, mode: GuidanceMode) -> Result<Array1<f64>> {
    check_dims(z_r, z_g)?;
    Ok(match mode {
        GuidanceMode::Positive => &z_g * 0.5 + &z_r * 0.5,
        GuidanceMode::Negative => (&z_r - &z_g) * 0.5,
    })
}

/// Positions of the `k` highest scores among unseen items: descending
/// score, ties by ascending index.
pub fn top_k_indices(scores: ArrayView1<f64>, seen: &[usize], k: usize) -> Vec<usize> {
    let mut order = full_ranking(scores, seen);
    order.truncate(k);
    order
}

/// Every unseen item, best first.
pub fn full_ranking(scores: ArrayView1<f64>, seen: &[usize]) -> Vec<usize> {
    let seen: HashSet<usize> = seen.iter().copied().collect();
    let mut order: Vec<usize> = (0..scores.len()).filter(|i| !seen.contains(i)).collect();
    order.sort_unstable_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// One user's inputs at inference time.
#[derive(Debug, Clone, Copy)]
pub struct UserInput<'a> {
    /// Dense rating row over the catalog (zeros for unrated items).
    pub ratings: ArrayView1<'a, f64>,
    /// Items excluded from recommendation.
    pub seen: &'a [usize],
    pub side: Option<SideInput<'a>>,
}

/// The latent decoded for `input` under `spec`.
pub fn user_latent(model: &TearsModel, input: &UserInput, spec: &MixSpec) -> Result<Array1<f64>> {
    spec.validate()?;
    let side_mean = |s: SideInput| -> Result<Array1<f64>> { Ok(model.encode_side(&[s])?.mu.row(0).to_owned()) };
    if let Some(g) = &spec.guidance {
        let z_r = model.encode_rating_row(input.ratings)?.mu;
        let z_g = side_mean(SideInput::Text(&g.text))?;
        return guided_latent(z_r.view(), z_g.view(), g.mode);
    }
    if !model.has_backbone() || spec.alpha == 1.0 {
        let s = input.side.ok_or_else(|| TearsError::invalid("a summary is required when alpha > 0"))?;
        return side_mean(s);
    }
    let z_r = model.encode_rating_row(input.ratings)?.mu;
    if spec.alpha == 0.0 {
        return Ok(z_r);
    }
    let s = input.side.ok_or_else(|| TearsError::invalid("a summary is required when alpha > 0"))?;
    let z_s = side_mean(s)?;
    let z = model.fuse(z_s.view().insert_axis(Axis(0)), Some(z_r.view().insert_axis(Axis(0))), spec.alpha)?;
    Ok(z.row(0).to_owned())
}

/// Log-probabilities over all items (seen items included).
pub fn score_items(model: &TearsModel, input: &UserInput, spec: &MixSpec) -> Result<Array1<f64>> {
    let z = user_latent(model, input, spec)?;
    crate::models::check_latent(z.view(), model.latent_dim)?;
    let logits = model.decoder.forward(z.view().insert_axis(Axis(0)));
    let scores = log_softmax_rows(logits.view()).row(0).to_owned();
    if scores.iter().any(|v| v.is_nan()) {
        return Err(TearsError::Numeric("decoder produced NaN scores".into()));
    }
    Ok(scores)
}

/// Batched log-probabilities: `x` holds dense rating rows, `side` one input
/// per row (may be empty when `alpha == 0`).
pub fn score_batch(model: &TearsModel, x: ArrayView2<f64>, side: &[SideInput], alpha: f64) -> Result<Array2<f64>> {
    check_alpha(alpha)?;
    let need_side = alpha > 0.0 || !model.has_backbone();
    let need_backbone = model.has_backbone() && alpha < 1.0;
    let z_s = if need_side {
        if side.len() != x.nrows() {
            return Err(TearsError::DimensionMismatch { expected: x.nrows(), got: side.len() });
        }
        Some(model.encode_side(side)?.mu)
    } else {
        None
    };
    let z_r = if need_backbone { Some(model.encode_ratings(x)?.mu) } else { None };
    let z = match (z_s, z_r) {
        (Some(s), Some(r)) => model.fuse(s.view(), Some(r.view()), alpha)?,
        (Some(s), None) => s,
        (None, Some(r)) => r,
        (None, None) => unreachable!("alpha selects at least one latent"),
    };
    Ok(log_softmax_rows(model.decoder.forward(z.view()).view()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    /// `(catalog index, score)`, best first.
    pub items: Vec<(usize, f64)>,
    pub masked_seen: Vec<usize>,
    pub k: usize,
    /// Set when fewer than `k` unseen items exist.
    pub truncated: bool,
}

/// A ranked item as served to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRecord {
    pub rank: usize,
    pub item: ItemId,
    pub title: String,
    pub score: f64,
    pub genres: Vec<String>,
}

impl RankedList {
    pub fn from_scores(scores: ArrayView1<f64>, seen: &[usize], k: usize) -> Result<Self> {
        if k == 0 {
            return Err(TearsError::invalid("k must be at least 1"));
        }
        let order = full_ranking(scores, seen);
        let truncated = order.len() < k;
        let items = order.into_iter().take(k).map(|i| (i, scores[i])).collect();
        let mut masked_seen = seen.to_vec();
        masked_seen.sort_unstable();
        masked_seen.dedup();
        Ok(RankedList { items, masked_seen, k, truncated })
    }

    pub fn indices(&self) -> Vec<usize> {
        self.items.iter().map(|&(i, _)| i).collect()
    }

    pub fn records(&self, catalog: &ItemCatalog) -> Vec<RankRecord> {
        self.items
            .iter()
            .enumerate()
            .map(|(r, &(i, score))| {
                let it = catalog.item(i);
                RankRecord {
                    rank: r + 1,
                    item: it.id.clone(),
                    title: it.title.clone(),
                    score,
                    genres: it.genres.iter().map(|&g| catalog.genre_name(g).to_string()).collect(),
                }
            })
            .collect()
    }
}

/// Top-`k` unseen items for `input` under `spec`.
pub fn recommend(model: &TearsModel, input: &UserInput, spec: &MixSpec, k: usize) -> Result<RankedList> {
    let scores = score_items(model, input, spec)?;
    RankedList::from_scores(scores.view(), input.seen, k)
}

/// 1-based position of an unseen `item` in the full masked ranking.
pub fn rank_of(model: &TearsModel, input: &UserInput, spec: &MixSpec, item: usize) -> Result<usize> {
    let scores = score_items(model, input, spec)?;
    rank_in(scores.view(), input.seen, item)
}

/// 1-based position of `item` among unseen items by `scores`.
pub fn rank_in(scores: ArrayView1<f64>, seen: &[usize], item: usize) -> Result<usize> {
    if item >= scores.len() {
        return Err(TearsError::invalid(format!("item index {item} out of range")));
    }
    if seen.contains(&item) {
        return Err(TearsError::invalid("cannot rank an item the user has already seen"));
    }
    let s = scores[item];
    let seen: HashSet<usize> = seen.iter().copied().collect();
    let ahead = (0..scores.len())
        .filter(|&j| j != item && !seen.contains(&j))
        .filter(|&j| scores[j] > s || (scores[j] == s && j < item))
        .count();
    Ok(ahead + 1)
}

/// Item popularity (number of positives among training users' targets),
/// the non-personalized baseline.
pub fn popularity_scores(train: &[UserExample], n_items: usize) -> Array1<f64> {
    let mut counts = Array1::zeros(n_items);
    for e in train {
        for &i in &e.targets {
            counts[i] += 1.0;
        }
    }
    counts
}
