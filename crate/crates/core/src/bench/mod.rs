//! Controllability task runners: large-scope genre flips, fine-grained
//! theme edits, guided recommendation, genre-profile flips and the alpha
//! sweep.
//!
//! Every runner evaluates test users with mean latents and seen-item
//! masking, and returns per-user values plus a manifest that pins the
//! model, corpora, grid and seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataio::{dense_inputs, Dataset, GenreId, ItemId, UserExample, UserId};
use crate::metrics::{self, MetricReport};
use crate::models::{GenreProfile, SideInput, TearsModel};
use crate::nn::{checksum, log_softmax_rows};
use crate::par::{self, Parallelism};
use crate::ranking::{self, guided_latent, Guidance, GuidanceMode};
use crate::summaries::llm::{finegrained_edit, CompletionProvider, FlipEdit, LlmConfig};
use crate::summaries::{guidance_phrase, ItemType, SummaryCorpus};
use crate::util::derive_seed;
use crate::{Result, TearsError};

/// What every task evaluates: a model, its dataset and the users to test.
#[derive(Clone, Copy)]
pub struct Workload<'a> {
    pub model: &'a TearsModel,
    pub dataset: &'a Dataset,
    pub users: &'a [UserExample],
    pub k: usize,
    pub parallelism: Parallelism,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    LargeScope,
    FineGrained,
    Guided,
    GersFlip,
    AlphaSweep,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::LargeScope => "large-scope",
            TaskKind::FineGrained => "fine-grained",
            TaskKind::Guided => "guided",
            TaskKind::GersFlip => "gers-flip",
            TaskKind::AlphaSweep => "alpha-sweep",
        }
    }
}

/// Everything needed to reproduce a task run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskManifest {
    pub task: TaskKind,
    pub model_checksum: String,
    pub backbone_checksum: String,
    pub catalog_hash: String,
    pub corpus_hash: Option<String>,
    pub edited_hash: Option<String>,
    pub alphas: Vec<f64>,
    pub k: usize,
    pub seed: u64,
    pub users: usize,
}

impl TaskManifest {
    fn new(task: TaskKind, w: &Workload, alphas: &[f64], seed: u64) -> Self {
        TaskManifest {
            task,
            model_checksum: checksum(w.model),
            backbone_checksum: w.model.backbone_checksum(),
            catalog_hash: w.dataset.catalog.content_hash(),
            corpus_hash: None,
            edited_hash: None,
            alphas: alphas.to_vec(),
            k: w.k,
            seed,
            users: w.users.len(),
        }
    }
}

/// `0, 0.01, ..., 1`.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

fn check_alphas(alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() || alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(TearsError::invalid("alpha grid must be a non-empty subset of [0, 1]"));
    }
    Ok(())
}

/// Per-alpha genre deltas. `delta_up` targets the genre the edit should
/// promote (correct sign: negative); `delta_down` the genre it should demote
/// (correct sign: positive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub alpha: f64,
    pub delta_up: MetricReport,
    pub delta_down: MetricReport,
    /// Fraction of users with `delta_up < 0`.
    pub up_correct: f64,
    /// Fraction of users with `delta_down > 0`.
    pub down_correct: f64,
}

impl DeltaRow {
    pub fn abs_up(&self) -> f64 {
        self.delta_up.mean_abs()
    }

    pub fn abs_down(&self) -> f64 {
        self.delta_down.mean_abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRun {
    pub users: Vec<UserId>,
    /// Users left out, with the reason.
    pub skipped: Vec<(UserId, String)>,
    pub rows: Vec<DeltaRow>,
    pub manifest: TaskManifest,
}

impl DeltaRun {
    pub fn row(&self, alpha: f64) -> Option<&DeltaRow> {
        self.rows.iter().find(|r| r.alpha == alpha)
    }
}

/// Genre-wise NDCG@k of every user for `genres[b]` under the given scores.
fn genre_ndcg(w: &Workload, users: &[&UserExample], scores: &Array2<f64>, genres: &[GenreId]) -> Vec<f64> {
    let catalog = &w.dataset.catalog;
    par::map_range(w.parallelism, users.len(), |b| {
        let top = ranking::top_k_indices(scores.row(b), &users[b].seen, w.k);
        metrics::ndcg_genre_at_k(&top, genres[b], catalog, &users[b].seen, w.k).expect("genre in vocabulary")
    })
}

fn delta_rows(
    w: &Workload,
    users: &[&UserExample],
    original: &[SideInput],
    augmented: &[SideInput],
    targets: &[(GenreId, GenreId)],
    alphas: &[f64],
) -> Result<Vec<DeltaRow>> {
    let x = dense_inputs(users, w.model.n_items);
    let up: Vec<GenreId> = targets.iter().map(|t| t.0).collect();
    let down: Vec<GenreId> = targets.iter().map(|t| t.1).collect();
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let so = ranking::score_batch(w.model, x.view(), original, alpha)?;
        let sa = ranking::score_batch(w.model, x.view(), augmented, alpha)?;
        let (ou, au) = (genre_ndcg(w, users, &so, &up), genre_ndcg(w, users, &sa, &up));
        let (od, ad) = (genre_ndcg(w, users, &so, &down), genre_ndcg(w, users, &sa, &down));
        let du: Vec<f64> = ou.iter().zip(&au).map(|(o, a)| metrics::delta_at_k(*o, *a)).collect();
        let dd: Vec<f64> = od.iter().zip(&ad).map(|(o, a)| metrics::delta_at_k(*o, *a)).collect();
        let frac = |v: &[f64], pred: fn(f64) -> bool| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().filter(|&&d| pred(d)).count() as f64 / v.len() as f64
            }
        };
        rows.push(DeltaRow {
            alpha,
            up_correct: frac(&du, |d| d < 0.0),
            down_correct: frac(&dd, |d| d > 0.0),
            delta_up: MetricReport::new("delta_up", w.k, du),
            delta_down: MetricReport::new("delta_down", w.k, dd),
        });
    }
    Ok(rows)
}

fn corpus_hash_of(edits: &BTreeMap<UserId, FlipEdit>) -> String {
    crate::util::sha256_hex(&serde_json::to_vec(edits).expect("edits serialize"))
}

/// Large-scope flips: each user's summary against the version with the
/// favorite and least favorite genres exchanged.
pub fn run_large_scope(
    w: &Workload,
    summaries: &SummaryCorpus,
    edits: &BTreeMap<UserId, FlipEdit>,
    alphas: &[f64],
) -> Result<DeltaRun> {
    check_alphas(alphas)?;
    let catalog = &w.dataset.catalog;
    let mut kept = Vec::new();
    let mut original = Vec::new();
    let mut augmented = Vec::new();
    let mut targets = Vec::new();
    let mut skipped = Vec::new();
    for e in w.users {
        let (Some(s), Some(edit)) = (summaries.get(&e.user), edits.get(&e.user)) else {
            skipped.push((e.user.clone(), "missing original or flipped summary".to_string()));
            continue;
        };
        let (Some(fav), Some(least)) = (catalog.genre_index(&edit.favorite), catalog.genre_index(&edit.least_favorite))
        else {
            skipped.push((e.user.clone(), "flip names a genre outside the vocabulary".to_string()));
            continue;
        };
        if fav == least {
            skipped.push((e.user.clone(), "favorite equals least favorite".to_string()));
            continue;
        }
        kept.push(e);
        original.push(SideInput::Text(&s.text));
        augmented.push(SideInput::Text(&edit.summary.text));
        targets.push((least, fav));
    }
    let rows = delta_rows(w, &kept, &original, &augmented, &targets, alphas)?;
    let mut manifest = TaskManifest::new(TaskKind::LargeScope, w, alphas, 0);
    manifest.corpus_hash = Some(summaries.content_hash());
    manifest.edited_hash = Some(corpus_hash_of(edits));
    manifest.users = kept.len();
    Ok(DeltaRun { users: kept.iter().map(|e| e.user.clone()).collect(), skipped, rows, manifest })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GersFlipMode {
    /// Exchange the favorite and least favorite genre weights.
    Swap,
    /// All weight on the least favorite genre: the upper bound.
    OneHotUpperBound,
}

/// Genre-profile flips on a model whose side encoder reads genre profiles.
pub fn run_gers_flip(
    w: &Workload,
    profiles: &BTreeMap<UserId, GenreProfile>,
    mode: GersFlipMode,
    alphas: &[f64],
) -> Result<DeltaRun> {
    check_alphas(alphas)?;
    let mut kept = Vec::new();
    let mut flipped = Vec::new();
    let mut targets = Vec::new();
    let mut skipped = Vec::new();
    for e in w.users {
        let Some(p) = profiles.get(&e.user) else {
            skipped.push((e.user.clone(), "missing genre profile".to_string()));
            continue;
        };
        let (fav, least) = (p.argmax(), p.argmin());
        if fav == least || p.weights()[fav] == p.weights()[least] {
            skipped.push((e.user.clone(), "favorite equals least favorite".to_string()));
            continue;
        }
        let aug = match mode {
            GersFlipMode::Swap => p.swapped(fav, least)?,
            GersFlipMode::OneHotUpperBound => GenreProfile::one_hot(p.len(), least)?,
        };
        kept.push(e);
        flipped.push(aug);
        targets.push((least, fav));
    }
    let original: Vec<SideInput> = kept.iter().map(|e| SideInput::Genre(&profiles[&e.user])).collect();
    let augmented: Vec<SideInput> = flipped.iter().map(SideInput::Genre).collect();
    let rows = delta_rows(w, &kept, &original, &augmented, &targets, alphas)?;
    let mut manifest = TaskManifest::new(TaskKind::GersFlip, w, alphas, 0);
    manifest.corpus_hash = Some(crate::util::sha256_hex(&serde_json::to_vec(profiles)?));
    manifest.users = kept.len();
    Ok(DeltaRun { users: kept.iter().map(|e| e.user.clone()).collect(), skipped, rows, manifest })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FineGrainedConfig {
    /// Inclusive 1-based rank window an eligible item must lie in at every alpha.
    pub window: (usize, usize),
    pub reruns: usize,
    pub alphas: Vec<f64>,
    pub item_type: ItemType,
    pub seed: u64,
}

impl Default for FineGrainedConfig {
    fn default() -> Self {
        FineGrainedConfig { window: (100, 500), reruns: 3, alphas: vec![0.0, 0.5, 1.0], item_type: ItemType::Movie, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineGrainedUser {
    pub user: UserId,
    pub item: ItemId,
    /// Rank before the edit, per alpha.
    pub original_rank: Vec<usize>,
    /// Rank after each rerun's edit, `[rerun][alpha]`.
    pub after_rank: Vec<Vec<usize>>,
    /// Median over reruns of `original - after`, per alpha.
    pub delta_rank: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub alpha: f64,
    /// Per-user median delta rank.
    pub delta_rank: MetricReport,
    /// Fraction of users whose median delta rank is positive.
    pub improved: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineGrainedRun {
    pub users: Vec<FineGrainedUser>,
    pub filtered: Vec<(UserId, String)>,
    pub rows: Vec<RankRow>,
    pub manifest: TaskManifest,
}

impl FineGrainedRun {
    pub fn row(&self, alpha: f64) -> Option<&RankRow> {
        self.rows.iter().find(|r| r.alpha == alpha)
    }
}

/// Items in `candidates` whose rank lies inside `window` under every score row.
pub fn eligible_items(ranks: &[Vec<usize>], candidates: &[usize], window: (usize, usize)) -> Vec<usize> {
    candidates
        .iter()
        .enumerate()
        .filter(|(c, _)| ranks.iter().all(|r| (window.0..=window.1).contains(&r[*c])))
        .map(|(_, &i)| i)
        .collect()
}

/// Fine-grained edits toward one held-out item per user: sample an eval
/// item ranked inside the window at every alpha, rewrite one summary
/// sentence around the item's themes, and record the median rank change.
pub fn run_fine_grained(
    w: &Workload,
    summaries: &SummaryCorpus,
    provider: &dyn CompletionProvider,
    llm: &LlmConfig,
    cfg: &FineGrainedConfig,
) -> Result<FineGrainedRun> {
    use rand::seq::IndexedRandom;
    check_alphas(&cfg.alphas)?;
    if cfg.reruns == 0 || cfg.window.0 == 0 || cfg.window.0 > cfg.window.1 {
        return Err(TearsError::invalid("need reruns >= 1 and a window 1 <= lo <= hi"));
    }
    let mut filtered = Vec::new();
    let with_summary: Vec<&UserExample> = w
        .users
        .iter()
        .filter(|e| {
            let ok = summaries.get(&e.user).is_some();
            if !ok {
                filtered.push((e.user.clone(), "missing summary".to_string()));
            }
            ok
        })
        .collect();
    let x = dense_inputs(&with_summary, w.model.n_items);
    let original: Vec<SideInput> = with_summary.iter().map(|e| SideInput::Text(&summaries.get(&e.user).unwrap().text)).collect();
    let before: Vec<Array2<f64>> =
        cfg.alphas.iter().map(|&a| ranking::score_batch(w.model, x.view(), &original, a)).collect::<Result<_>>()?;

    // Pick one eligible item per user.
    let mut picks: Vec<(usize, usize, Vec<usize>)> = Vec::new();
    for (b, e) in with_summary.iter().enumerate() {
        let ranks: Vec<Vec<usize>> = before
            .iter()
            .map(|s| e.eval.iter().map(|&i| ranking::rank_in(s.row(b), &e.seen, i)).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        let eligible = eligible_items(&ranks, &e.eval, cfg.window);
        let mut r = crate::util::rng(derive_seed(cfg.seed, &format!("pick-{}", e.user)));
        match eligible.choose(&mut r) {
            Some(&item) => {
                let c = e.eval.iter().position(|&i| i == item).expect("eligible item is an eval item");
                picks.push((b, item, ranks.iter().map(|r| r[c]).collect()));
            }
            None => filtered.push((e.user.clone(), "no eval item inside the rank window".to_string())),
        }
    }
    if picks.is_empty() {
        return Err(TearsError::invalid("no user has an eligible item for the fine-grained task"));
    }

    let users: Vec<&UserExample> = picks.iter().map(|p| with_summary[p.0]).collect();
    let xs = x.select(Axis(0), &picks.iter().map(|p| p.0).collect::<Vec<_>>());
    let mut after = vec![vec![vec![0usize; cfg.alphas.len()]; cfg.reruns]; users.len()];
    for rerun in 0..cfg.reruns {
        let edited: Vec<String> = par::try_map(w.parallelism, &picks, |p| {
            let e = with_summary[p.0];
            let s = summaries.get(&e.user).expect("filtered above");
            let title = &w.dataset.catalog.item(p.1).title;
            let seed = derive_seed(cfg.seed, &format!("edit-{}-{rerun}", e.user));
            finegrained_edit(provider, s, title, cfg.item_type, llm, seed).map(|s| s.text)
        })?;
        let inputs: Vec<SideInput> = edited.iter().map(|t| SideInput::Text(t)).collect();
        for (ai, &alpha) in cfg.alphas.iter().enumerate() {
            let s = ranking::score_batch(w.model, xs.view(), &inputs, alpha)?;
            for (u, p) in picks.iter().enumerate() {
                after[u][rerun][ai] = ranking::rank_in(s.row(u), &users[u].seen, p.1)?;
            }
        }
    }

    let mut out_users = Vec::with_capacity(users.len());
    for (u, p) in picks.iter().enumerate() {
        let delta: Vec<f64> = (0..cfg.alphas.len())
            .map(|ai| {
                let d: Vec<f64> =
                    (0..cfg.reruns).map(|r| metrics::delta_rank(p.2[ai], after[u][r][ai]) as f64).collect();
                metrics::median(&d).expect("at least one rerun")
            })
            .collect();
        out_users.push(FineGrainedUser {
            user: users[u].user.clone(),
            item: w.dataset.catalog.item(p.1).id.clone(),
            original_rank: p.2.clone(),
            after_rank: after[u].clone(),
            delta_rank: delta,
        });
    }
    let rows = cfg
        .alphas
        .iter()
        .enumerate()
        .map(|(ai, &alpha)| {
            let v: Vec<f64> = out_users.iter().map(|u| u.delta_rank[ai]).collect();
            let improved = v.iter().filter(|&&d| d > 0.0).count() as f64 / v.len() as f64;
            RankRow { alpha, delta_rank: MetricReport::new("delta_rank", w.k, v), improved }
        })
        .collect();
    let mut manifest = TaskManifest::new(TaskKind::FineGrained, w, &cfg.alphas, cfg.seed);
    manifest.corpus_hash = Some(summaries.content_hash());
    manifest.users = out_users.len();
    Ok(FineGrainedRun { users: out_users, filtered, rows, manifest })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidedRow {
    pub genre: String,
    pub mode: GuidanceMode,
    pub phrase: String,
    /// Genre-wise NDCG@k from the backbone latent alone.
    pub original: MetricReport,
    /// Genre-wise NDCG@k from the guided latent.
    pub guided: MetricReport,
    /// `original - guided` per user.
    pub delta: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidedRun {
    pub rows: Vec<GuidedRow>,
    pub excluded: Vec<String>,
    pub manifest: TaskManifest,
}

impl GuidedRun {
    pub fn row(&self, genre: &str, mode: GuidanceMode) -> Option<&GuidedRow> {
        self.rows.iter().find(|r| r.genre == genre && r.mode == mode)
    }
}

/// The `n` genres carrying the most catalog items.
pub fn top_genres(dataset: &Dataset, n: usize) -> Vec<GenreId> {
    dataset.catalog.genres_by_item_count().into_iter().filter(|(_, c)| *c > 0).take(n).map(|(g, _)| g).collect()
}

/// Guided recommendation: "More {genre} {items}" mixed with the backbone
/// latent at one half, or "Less ..." subtracted from it, against the
/// backbone latent alone.
pub fn run_guided(w: &Workload, genres: &[GenreId], modes: &[GuidanceMode], item_type: ItemType) -> Result<GuidedRun> {
    let model = w.model;
    if !model.has_backbone() {
        return Err(TearsError::invalid("guided recommendation needs a backbone latent"));
    }
    let users: Vec<&UserExample> = w.users.iter().collect();
    let x = dense_inputs(&users, model.n_items);
    let z_r = model.encode_ratings(x.view())?.mu;
    let base = log_softmax_rows(model.decoder.forward(z_r.view()).view());
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for &g in genres {
        if g >= w.dataset.catalog.num_genres() {
            excluded.push(format!("genre index {g}"));
            continue;
        }
        let name = w.dataset.catalog.genre_name(g).to_string();
        if !w.dataset.catalog.items().iter().any(|it| it.genres.contains(&g)) {
            log::warn!("genre {name} has no items; excluded from guidance");
            excluded.push(name);
            continue;
        }
        let target = vec![g; users.len()];
        let original = genre_ndcg(w, &users, &base, &target);
        for &mode in modes {
            let phrase = guidance_phrase(&name, item_type, mode == GuidanceMode::Positive);
            let guidance = Guidance::new(phrase.clone(), mode)?;
            let z_g = model.encode_side(&[SideInput::Text(&guidance.text)])?.mu;
            let mut z = Array2::zeros(z_r.raw_dim());
            for (b, mut row) in z.rows_mut().into_iter().enumerate() {
                row.assign(&guided_latent(z_r.row(b), z_g.row(0), mode)?);
            }
            let scores = log_softmax_rows(model.decoder.forward(z.view()).view());
            let guided = genre_ndcg(w, &users, &scores, &target);
            let delta: Vec<f64> = original.iter().zip(&guided).map(|(o, a)| metrics::delta_at_k(*o, *a)).collect();
            rows.push(GuidedRow {
                genre: name.clone(),
                mode,
                phrase,
                original: MetricReport::new("ndcg_genre", w.k, original.clone()),
                guided: MetricReport::new("ndcg_genre", w.k, guided),
                delta: MetricReport::new("delta", w.k, delta),
            });
        }
    }
    let manifest = TaskManifest::new(TaskKind::Guided, w, &[0.0, 0.5], 0);
    Ok(GuidedRun { rows, excluded, manifest })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    /// NDCG@k with the original summaries.
    pub ndcg: f64,
    pub recall: f64,
    pub abs_delta_up: f64,
    pub abs_delta_down: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Alpha with the highest NDCG@k (first on ties).
    pub best_alpha: f64,
    pub manifest: TaskManifest,
}

/// Recommendation quality and controllability along an alpha grid.
pub fn alpha_sweep(
    w: &Workload,
    summaries: &SummaryCorpus,
    edits: &BTreeMap<UserId, FlipEdit>,
    grid: &[f64],
) -> Result<SweepTable> {
    check_alphas(grid)?;
    let flips = run_large_scope(w, summaries, edits, grid)?;
    let users: Vec<&UserExample> =
        w.users.iter().filter(|e| !e.relevant.is_empty() && summaries.get(&e.user).is_some()).collect();
    let x = dense_inputs(&users, w.model.n_items);
    let side: Vec<SideInput> = users.iter().map(|e| SideInput::Text(&summaries.get(&e.user).unwrap().text)).collect();
    let mut rows = Vec::with_capacity(grid.len());
    for (row, &alpha) in flips.rows.iter().zip(grid) {
        let scores = ranking::score_batch(w.model, x.view(), &side, alpha)?;
        let per_user: Vec<(f64, f64)> = par::map_range(w.parallelism, users.len(), |b| {
            let top = ranking::top_k_indices(scores.row(b), &users[b].seen, w.k);
            (
                metrics::ndcg_indices(&top, &users[b].relevant, w.k),
                metrics::recall_at_k(&top, &users[b].relevant, w.k).expect("non-empty relevant"),
            )
        });
        let n = per_user.len().max(1) as f64;
        rows.push(SweepRow {
            alpha,
            ndcg: per_user.iter().map(|p| p.0).sum::<f64>() / n,
            recall: per_user.iter().map(|p| p.1).sum::<f64>() / n,
            abs_delta_up: row.abs_up(),
            abs_delta_down: row.abs_down(),
        });
    }
    let best_alpha = rows.iter().fold((f64::NEG_INFINITY, 0.0), |acc, r| if r.ndcg > acc.0 { (r.ndcg, r.alpha) } else { acc }).1;
    let mut manifest = TaskManifest::new(TaskKind::AlphaSweep, w, grid, 0);
    manifest.corpus_hash = flips.manifest.corpus_hash;
    manifest.edited_hash = flips.manifest.edited_hash;
    Ok(SweepTable { rows, best_alpha, manifest })
}

/// One line of a tabular metric file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub dataset: String,
    pub task: String,
    pub alpha: f64,
    pub seed: u64,
    pub metric: String,
    pub k: usize,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MetricRow {
    fn from_report(m: &TaskManifest, alpha: f64, r: &MetricReport) -> Self {
        MetricRow {
            model: m.model_checksum.chars().take(12).collect(),
            dataset: m.catalog_hash.chars().take(12).collect(),
            task: m.task.name().to_string(),
            alpha,
            seed: m.seed,
            metric: r.metric.clone(),
            k: r.k,
            mean: r.mean,
            std: r.std,
            n: r.values.len(),
        }
    }
}

impl DeltaRun {
    pub fn metric_rows(&self) -> Vec<MetricRow> {
        let mut out = Vec::new();
        for r in &self.rows {
            out.push(MetricRow::from_report(&self.manifest, r.alpha, &r.delta_up));
            out.push(MetricRow::from_report(&self.manifest, r.alpha, &r.delta_down));
        }
        out
    }
}

impl FineGrainedRun {
    pub fn metric_rows(&self) -> Vec<MetricRow> {
        self.rows.iter().map(|r| MetricRow::from_report(&self.manifest, r.alpha, &r.delta_rank)).collect()
    }
}

impl GuidedRun {
    pub fn metric_rows(&self) -> Vec<MetricRow> {
        let mut out = Vec::new();
        for r in &self.rows {
            let mut row = MetricRow::from_report(&self.manifest, 0.5, &r.delta);
            row.metric = format!("delta_{}_{}", r.genre, if r.mode == GuidanceMode::Positive { "more" } else { "less" });
            out.push(row);
        }
        out
    }
}

/// Writes rows as CSV with a header.
pub fn write_metric_csv(rows: &[MetricRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| TearsError::invalid(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| TearsError::invalid(e.to_string()))?;
    }
    w.flush().map_err(|e| TearsError::io(path, e))
}

/// Writes the sweep as plot-ready CSV (NDCG@k against |Δ@k| per alpha).
pub fn write_sweep_csv(table: &SweepTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| TearsError::invalid(format!("{}: {e}", path.display())))?;
    for r in &table.rows {
        w.serialize(r).map_err(|e| TearsError::invalid(e.to_string()))?;
    }
    w.flush().map_err(|e| TearsError::io(path, e))
}

/// A plain-text rendering of a sweep table.
pub fn render_sweep(table: &SweepTable) -> String {
    let k = table.manifest.k;
    let mut s = format!("{:>6}  {:>10}  {:>10}  {:>12}  {:>12}\n", "alpha", format!("NDCG@{k}"), format!("Recall@{k}"), format!("|dUp@{k}|"), format!("|dDown@{k}|"));
    for r in &table.rows {
        s.push_str(&format!(
            "{:>6.2}  {:>10.4}  {:>10.4}  {:>12.4}  {:>12.4}\n",
            r.alpha, r.ndcg, r.recall, r.abs_delta_up, r.abs_delta_down
        ));
    }
    s.push_str(&format!("best alpha: {:.2}\n", table.best_alpha));
    s
}

/// Writes any serializable run as pretty JSON.
pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| TearsError::io(path, e))
}
