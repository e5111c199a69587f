//! Acceptance suite: one PASS/FAIL line per criterion. Each check compares
//! library output with an independent reference written here, or runs the
//! synthetic experiment end to end and checks the controllability claims.
//!
//! Run with `cargo test -p tears --test acceptance`.

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde_json::json;

use tears::bench::{self, FineGrainedConfig, GersFlipMode, Workload};
use tears::dataio::synthetic::SyntheticConfig;
use tears::dataio::{dense_inputs, ItemCatalog, UserExample};
use tears::metrics::{ndcg_at_k, ndcg_genre_at_k, ndcg_indices, recall_at_k, spearman};
use tears::models::{
    Backbone, BackboneSpec, Fusion, GaussianHead, LatentBatch, SideEncoder, SideInput, TearsModel, TextEncoder,
    TextEncoderSpec,
};
use tears::par::Parallelism;
use tears::pipeline::{self, ExperimentConfig, Prepared};
use tears::ranking::{self, GuidanceMode, MixSpec, UserInput};
use tears::summaries::{bleu4, corpus_stats, word_edit_distance, SummaryCorpus, SummarySource, UserSummary};
use tears::training::{gradient_check, LossHeads, TrainConfig};

type Verdict = Result<String, String>;

/// Collects named sub-checks; the criterion passes when all of them do.
#[derive(Default)]
struct Checks {
    lines: Vec<String>,
    failed: bool,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if !ok {
            self.failed = true;
            self.lines.push(format!("FAILED {what}"));
        } else {
            self.lines.push(what);
        }
    }

    fn finish(self) -> Verdict {
        let text = self.lines.join("; ");
        if self.failed {
            Err(text)
        } else {
            Ok(text)
        }
    }
}

fn timed(limit: Duration, start: Instant, c: &mut Checks) {
    let t = start.elapsed();
    c.check(t <= limit, format!("{:.1}s (limit {}s)", t.as_secs_f64(), limit.as_secs()));
}

// ---------------------------------------------------------------------------
// Criterion 1: metrics against brute-force references.

fn log2_discount(position: usize) -> f64 {
    1.0 / ((position + 2) as f64).log2()
}

/// Recall by scanning positions and the relevant list linearly.
fn recall_reference(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    let mut hits = 0usize;
    for pos in 0..k.min(ranked.len()) {
        if relevant.iter().any(|&r| r == ranked[pos]) {
            hits += 1;
        }
    }
    hits as f64 / k.min(relevant.len()) as f64
}

/// NDCG from a full relevance vector: the ideal list is the catalog sorted
/// by relevance, truncated at `k`.
fn ndcg_reference(ranked: &[usize], relevant: &[usize], n_items: usize, k: usize) -> f64 {
    let mut gain = vec![0.0; n_items];
    for &r in relevant {
        gain[r] = 1.0;
    }
    let dcg: f64 = (0..k.min(ranked.len())).map(|p| gain[ranked[p]] * log2_discount(p)).sum();
    let mut ideal = gain.clone();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg: f64 = (0..k.min(ideal.len())).map(|p| ideal[p] * log2_discount(p)).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Genre NDCG: the ideal ranks every unseen item carrying the genre first.
fn ndcg_genre_reference(ranked: &[usize], has: &[bool], seen: &[usize], k: usize) -> f64 {
    let dcg: f64 = (0..k.min(ranked.len())).map(|p| if has[ranked[p]] { log2_discount(p) } else { 0.0 }).sum();
    let mut ideal: Vec<f64> =
        (0..has.len()).filter(|i| !seen.contains(i)).map(|i| if has[i] { 1.0 } else { 0.0 }).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg: f64 = (0..k.min(ideal.len())).map(|p| ideal[p] * log2_discount(p)).sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(11);
    let (mut worst_r, mut worst_n, mut worst_g) = (0.0f64, 0.0f64, 0.0f64);
    let genres = ["a", "b", "c", "d", "e"];
    for _ in 0..200 {
        let n = rng.random_range(2..=50);
        let k = rng.random_range(1..=20);
        let mut ranked: Vec<usize> = (0..n).collect();
        ranked.shuffle(&mut rng);
        let n_rel = rng.random_range(1..=n);
        let mut relevant: Vec<usize> = (0..n).collect();
        relevant.shuffle(&mut rng);
        relevant.truncate(n_rel);
        let r = recall_at_k(&ranked, &relevant, k).map_err(|e| e.to_string())?;
        worst_r = worst_r.max((r - recall_reference(&ranked, &relevant, k)).abs());
        let v = ndcg_at_k(&ranked, &relevant, k).map_err(|e| e.to_string())?;
        worst_n = worst_n.max((v - ndcg_reference(&ranked, &relevant, n, k)).abs());

        // Genre NDCG over an unseen-only ranking.
        let rows: Vec<(String, String, Vec<String>)> = (0..n)
            .map(|i| {
                let first = rng.random_range(0..genres.len());
                let g: Vec<String> = genres
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j == first || rng.random_bool(0.3))
                    .map(|(_, s)| s.to_string())
                    .collect();
                (format!("i{i}"), format!("item {i}"), g)
            })
            .collect();
        let catalog = ItemCatalog::from_rows(rows.clone()).map_err(|e| e.to_string())?;
        let n_seen = rng.random_range(0..n);
        let seen: Vec<usize> = ranked[..n_seen].to_vec();
        let unseen: Vec<usize> = ranked[n_seen..].to_vec();
        let name = catalog.genre_name(rng.random_range(0..catalog.num_genres())).to_string();
        let g = catalog.genre_index(&name).expect("genre exists");
        let has: Vec<bool> = rows.iter().map(|r| r.2.contains(&name)).collect();
        let v = ndcg_genre_at_k(&unseen, g, &catalog, &seen, k).map_err(|e| e.to_string())?;
        worst_g = worst_g.max((v - ndcg_genre_reference(&unseen, &has, &seen, k)).abs());
    }
    let mut c = Checks::default();
    c.check(worst_r <= 1e-12, format!("recall max err {worst_r:.1e}"));
    c.check(worst_n <= 1e-12, format!("ndcg max err {worst_n:.1e}"));
    c.check(worst_g <= 1e-12, format!("genre ndcg max err {worst_g:.1e}"));
    timed(Duration::from_secs(10), start, &mut c);
    c.finish()
}

// ---------------------------------------------------------------------------
// Criterion 2: closed-form OT against the matrix form.

fn sqrtm(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// `||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sb^1/2 Sa Sb^1/2)^1/2)`.
fn w2_matrix(mu_a: &[f64], s_a: &[f64], mu_b: &[f64], s_b: &[f64]) -> f64 {
    let d = mu_a.len();
    let cov = |s: &[f64]| DMatrix::from_fn(d, d, |i, j| if i == j { s[i] * s[i] } else { 0.0 });
    let (ca, cb) = (cov(s_a), cov(s_b));
    let rb = sqrtm(&cb);
    let cross = sqrtm(&(&rb * &ca * &rb));
    let mean: f64 = mu_a.iter().zip(mu_b).map(|(a, b)| (a - b).powi(2)).sum();
    mean + (ca + cb - cross * 2.0).trace()
}

fn one(mu: &[f64], sigma: &[f64]) -> LatentBatch {
    LatentBatch {
        mu: Array2::from_shape_vec((1, mu.len()), mu.to_vec()).unwrap(),
        sigma: Array2::from_shape_vec((1, sigma.len()), sigma.to_vec()).unwrap(),
    }
}

fn criterion_2() -> Verdict {
    let mut rng = StdRng::seed_from_u64(22);
    let (mut worst, mut self_max) = (0.0f64, 0.0f64);
    let mut symmetric = true;
    for _ in 0..100 {
        let d = rng.random_range(1..=16);
        let draw = |rng: &mut StdRng, lo: f64, hi: f64| (0..d).map(|_| rng.random_range(lo..hi)).collect::<Vec<f64>>();
        let (ma, sa, mb, sb) = (draw(&mut rng, -3.0, 3.0), draw(&mut rng, 0.05, 3.0), draw(&mut rng, -3.0, 3.0), draw(&mut rng, 0.05, 3.0));
        let (a, b) = (one(&ma, &sa), one(&mb, &sb));
        let ab = tears::training::losses::ot_loss(&a, &b).map_err(|e| e.to_string())?;
        let ba = tears::training::losses::ot_loss(&b, &a).map_err(|e| e.to_string())?;
        let aa = tears::training::losses::ot_loss(&a, &a).map_err(|e| e.to_string())?;
        worst = worst.max((ab - w2_matrix(&ma, &sa, &mb, &sb)).abs());
        symmetric &= ab.to_bits() == ba.to_bits();
        self_max = self_max.max(aa.abs());
    }
    let mut c = Checks::default();
    c.check(worst <= 1e-6, format!("max |closed - matrix| {worst:.1e} over 100 pairs"));
    c.check(self_max == 0.0, format!("max |ot(a,a)| {self_max:e}"));
    c.check(symmetric, "ot(a,b) == ot(b,a) bitwise");
    c.finish()
}

// ---------------------------------------------------------------------------
// Criterion 3: analytic gradients against finite differences.

fn tiny_model(fusion: Fusion, seed: u64) -> TearsModel {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let backbone = Backbone::new(BackboneSpec::multi_vae(8, vec![16]), 30, &mut rng).unwrap();
    let spec = TextEncoderSpec { buckets: 64, embed_dim: 8, hidden_dims: vec![12], init_std: 0.5 };
    let text = TextEncoder::new(&spec, GaussianHead::plain(8), &mut rng);
    TearsModel::with_backbone(backbone, SideEncoder::Text(text), fusion, "tiny", vec![], &mut rng).unwrap()
}

fn tiny_users(seed: u64) -> (Vec<UserExample>, Vec<String>) {
    let mut rng = StdRng::seed_from_u64(seed);
    let words = ["space", "war", "love", "ghost", "heist", "music", "storm", "robot", "quiet", "family"];
    let mut users = Vec::new();
    let mut texts = Vec::new();
    for u in 0..5 {
        let mut items: Vec<usize> = (0..30).collect();
        items.shuffle(&mut rng);
        let seen: Vec<usize> = items[..8].to_vec();
        let input = seen.iter().map(|&i| (i, rng.random_range(1..=5) as f64)).collect();
        users.push(UserExample {
            user: format!("u{u}"),
            index: u,
            input,
            seen: seen.clone(),
            targets: items[..12].to_vec(),
            relevant: items[8..12].to_vec(),
            eval: items[8..14].to_vec(),
        });
        let text: Vec<&str> = (0..12).map(|_| words[rng.random_range(0..words.len())]).collect();
        texts.push(text.join(" "));
    }
    (users, texts)
}

fn criterion_3() -> Verdict {
    let start = Instant::now();
    let (users, texts) = tiny_users(3);
    let refs: Vec<&UserExample> = users.iter().collect();
    let side: Vec<SideInput> = texts.iter().map(|t| SideInput::Text(t)).collect();
    let off = LossHeads { combined: false, side: false, backbone: false };
    let cases: Vec<(&str, Fusion, TrainConfig, f64)> = vec![
        ("L_OT", Fusion::Mean, TrainConfig { heads: off, lambda1: 1.0, ..TrainConfig::default() }, 0.0),
        ("L_KL", Fusion::Mean, TrainConfig { heads: off, lambda1: 0.0, ..TrainConfig::default() }, 1.0),
        ("L_R", Fusion::Mean, TrainConfig { lambda1: 0.0, ..TrainConfig::default() }, 0.0),
        ("composite", Fusion::Mean, TrainConfig::default(), 0.5),
        ("composite/concat", Fusion::Concat, TrainConfig::default(), 0.5),
    ];
    let mut c = Checks::default();
    for (name, fusion, cfg, lambda2) in cases {
        let model = tiny_model(fusion, 5);
        let g = gradient_check(&model, &refs, &side, &cfg, lambda2, 17).map_err(|e| e.to_string())?;
        c.check(
            g.max_rel_error < 1e-4 && g.checked > 0,
            format!("{name} max rel err {:.1e} over {} params", g.max_rel_error, g.checked),
        );
    }
    timed(Duration::from_secs(60), start, &mut c);
    c.finish()
}

// ---------------------------------------------------------------------------
// Criterion 4: mixing endpoints on a freshly initialized model.

fn small_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = seed;
    cfg.synthetic = SyntheticConfig { n_users: 160, n_items: 300, min_ratings: 20, max_ratings: 40, ..SyntheticConfig::default() };
    cfg.n_val = 20;
    cfg.n_test = 40;
    cfg.backbone = BackboneSpec::multi_vae(16, vec![64]);
    cfg.backbone_train.epochs = 4;
    cfg.text = TextEncoderSpec { buckets: 1024, embed_dim: 16, hidden_dims: vec![32], init_std: 0.01 };
    cfg.side_hidden = vec![32];
    cfg.train.epochs = 4;
    cfg.summary_budget = 120;
    cfg
}

/// Backbone ranking computed directly: encoder mean, decoder logits, full
/// sort with ties broken by ascending index and seen items removed.
fn backbone_ranking(b: &Backbone, row: &Array1<f64>, seen: &[usize]) -> Vec<usize> {
    let z = b.encode(row.view().insert_axis(Axis(0))).unwrap().mu;
    let logits = b.decoder.forward(z.view());
    let logits = logits.row(0);
    let seen: HashSet<usize> = seen.iter().copied().collect();
    let mut order: Vec<usize> = (0..logits.len()).filter(|i| !seen.contains(i)).collect();
    order.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap().then(a.cmp(&b)));
    order
}

fn criterion_4() -> Verdict {
    let cfg = small_config(4);
    let prep = pipeline::prepare(&cfg).map_err(|e| e.to_string())?;
    let (bb, _) = pipeline::fit_backbone(&cfg, &prep).map_err(|e| e.to_string())?;
    let model = pipeline::init_text_model(&cfg, &prep, bb.clone()).map_err(|e| e.to_string())?;
    let n = prep.dataset().num_items();
    let users: Vec<&UserExample> = prep.train.iter().chain(&prep.val).chain(&prep.test).take(50).collect();
    let mut rng = StdRng::seed_from_u64(44);
    let (mut alpha0_ok, mut alpha1_ok, mut ranks_ok) = (0, 0, 0);
    for e in &users {
        let x = dense_inputs(&[e], n);
        let row = x.row(0).to_owned();
        let text = &prep.corpus.get(&e.user).ok_or("missing summary")?.text;
        let input = UserInput { ratings: row.view(), seen: &e.seen, side: Some(SideInput::Text(text)) };
        let got = ranking::recommend(&model, &input, &MixSpec::alpha(0.0).unwrap(), n).map_err(|e| e.to_string())?;
        if got.indices() == backbone_ranking(&bb, &row, &e.seen) {
            alpha0_ok += 1;
        }

        // Same seen set, rating values permuted among the seen items.
        let mut values: Vec<f64> = e.seen.iter().map(|&i| row[i]).collect();
        values.shuffle(&mut rng);
        let mut permuted = row.clone();
        for (&i, v) in e.seen.iter().zip(values) {
            permuted[i] = v;
        }
        let spec = MixSpec::alpha(1.0).unwrap();
        let a = ranking::score_items(&model, &input, &spec).map_err(|e| e.to_string())?;
        let input_p = UserInput { ratings: permuted.view(), ..input };
        let b = ranking::score_items(&model, &input_p, &spec).map_err(|e| e.to_string())?;
        if a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()) {
            alpha1_ok += 1;
        }
        let ra = ranking::recommend(&model, &input, &spec, n).map_err(|e| e.to_string())?;
        let rb = ranking::recommend(&model, &input_p, &spec, n).map_err(|e| e.to_string())?;
        if ra.indices() == rb.indices() {
            ranks_ok += 1;
        }
    }
    let m = users.len();
    let mut c = Checks::default();
    c.check(alpha0_ok == m, format!("alpha=0 equals backbone ranking for {alpha0_ok}/{m} users"));
    c.check(alpha1_ok == m, format!("alpha=1 scores unchanged by rating permutation for {alpha1_ok}/{m}"));
    c.check(ranks_ok == m, format!("alpha=1 ranking unchanged for {ranks_ok}/{m}"));
    c.finish()
}

// ---------------------------------------------------------------------------
// Criteria 5-7: the default synthetic experiment.

struct Experiment {
    cfg: ExperimentConfig,
    prep: Prepared,
    model: TearsModel,
    report: tears::training::TrainReport,
    backbone: Backbone,
    elapsed_fit: Duration,
}

fn run_experiment() -> Result<Experiment, String> {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let prep = pipeline::prepare(&cfg).map_err(|e| e.to_string())?;
    let (backbone, _) = pipeline::fit_backbone(&cfg, &prep).map_err(|e| e.to_string())?;
    let (model, report) = pipeline::fit_text_model(&cfg, &prep, backbone.clone()).map_err(|e| e.to_string())?;
    Ok(Experiment { cfg, prep, model, report, backbone, elapsed_fit: start.elapsed() })
}

fn criterion_5(x: &Experiment) -> Verdict {
    let start = Instant::now();
    let ds = x.prep.dataset();
    let w = Workload { model: &x.model, dataset: ds, users: &x.prep.test, k: 20, parallelism: Parallelism::Rayon };
    let (edits, _) = x.prep.test_flips(1);
    let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
    let ls = bench::run_large_scope(&w, &x.prep.corpus, &edits, &grid).map_err(|e| e.to_string())?;
    let mut c = Checks::default();
    c.check(ls.users.len() >= 50, format!("{} users flipped", ls.users.len()));

    let top = ls.rows.last().ok_or("no rows")?;
    c.check(
        top.up_correct >= 0.7 && top.down_correct >= 0.7,
        format!("(a) sign correct at alpha=1: up {:.2}, down {:.2}", top.up_correct, top.down_correct),
    );
    let zero = &ls.rows[0];
    let max0 = zero.delta_up.values.iter().chain(&zero.delta_down.values).fold(0.0f64, |m, v| m.max(v.abs()));
    c.check(max0 < 1e-9, format!("(b) max |delta| at alpha=0 {max0:.1e}"));
    let abs_up: Vec<f64> = ls.rows.iter().map(|r| r.delta_up.mean_abs()).collect();
    let rho = spearman(&grid, &abs_up).map_err(|e| e.to_string())?;
    c.check(rho >= 0.8, format!("(c) spearman(alpha, |delta_up|) {rho:.2}"));

    let fg_cfg = FineGrainedConfig { alphas: vec![0.5, 1.0], ..FineGrainedConfig::default() };
    let fg = bench::run_fine_grained(&w, &x.prep.corpus, &x.prep.provider, &Default::default(), &fg_cfg)
        .map_err(|e| e.to_string())?;
    for r in &fg.rows {
        c.check(
            r.improved >= 0.7,
            format!("(d) rank improved at alpha={} for {:.2} of {} users", r.alpha, r.improved, r.delta_rank.values.len()),
        );
    }

    let genres = bench::top_genres(ds, 10);
    let g = bench::run_guided(&w, &genres, &[GuidanceMode::Positive], x.cfg.item_type).map_err(|e| e.to_string())?;
    let raised = g.rows.iter().filter(|r| r.guided.mean > r.original.mean).count();
    c.check(raised == genres.len() && !genres.is_empty(), format!("(e) positive guidance raises genre ndcg for {raised}/{} genres", genres.len()));
    timed(Duration::from_secs(900), start - x.elapsed_fit, &mut c);
    c.finish()
}

fn criterion_6(x: &Experiment) -> Verdict {
    let ds = x.prep.dataset();
    let pop = ranking::popularity_scores(&x.prep.train, ds.num_items());
    let k = x.cfg.train.k;
    let vals: Vec<f64> = x
        .prep
        .val
        .iter()
        .filter(|e| !e.relevant.is_empty())
        .map(|e| ndcg_indices(&ranking::top_k_indices(pop.view(), &e.seen, k), &e.relevant, k))
        .collect();
    let popularity = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
    let (best, init) = (x.report.best_score, x.report.initial_score());
    let mut c = Checks::default();
    c.check(best >= 1.2 * init, format!("best val ndcg@{k} {best:.4} vs epoch-0 {init:.4} ({:.2}x)", best / init));
    c.check(best >= 1.2 * popularity, format!("vs popularity {popularity:.4} ({:.2}x)", best / popularity));
    c.finish()
}

fn criterion_7(x: &Experiment) -> Verdict {
    let (gm, _, profiles) = pipeline::fit_genre_model(&x.cfg, &x.prep, x.backbone.clone()).map_err(|e| e.to_string())?;
    let w = Workload { model: &gm, dataset: x.prep.dataset(), users: &x.prep.test, k: 20, parallelism: Parallelism::Rayon };
    let swap = bench::run_gers_flip(&w, &profiles, GersFlipMode::Swap, &[1.0]).map_err(|e| e.to_string())?;
    let hot = bench::run_gers_flip(&w, &profiles, GersFlipMode::OneHotUpperBound, &[1.0]).map_err(|e| e.to_string())?;
    let (s, h) = (&swap.rows[0], &hot.rows[0]);
    let mut c = Checks::default();
    c.check(
        h.delta_up.mean_abs() >= s.delta_up.mean_abs(),
        format!("one-hot |delta_up| {:.4} >= swap {:.4}", h.delta_up.mean_abs(), s.delta_up.mean_abs()),
    );
    c.check(
        s.up_correct >= 0.7 && s.down_correct >= 0.7,
        format!("swap sign correct up {:.2}, down {:.2}", s.up_correct, s.down_correct),
    );
    c.finish()
}

// ---------------------------------------------------------------------------
// Criterion 8: determinism.

/// Every artifact of a reduced run, serialized.
fn reduced_run(parallelism: Parallelism) -> Result<String, String> {
    let e = |e: tears::TearsError| e.to_string();
    let mut cfg = small_config(8);
    cfg.train.parallelism = parallelism;
    let prep = pipeline::prepare(&cfg).map_err(e)?;
    let (bb, bb_report) = pipeline::fit_backbone(&cfg, &prep).map_err(e)?;
    let (model, report) = pipeline::fit_text_model(&cfg, &prep, bb).map_err(e)?;
    let ds = prep.dataset();
    let users: Vec<&UserExample> = prep.test.iter().collect();
    let x = dense_inputs(&users, ds.num_items());
    let side: Vec<SideInput> = users.iter().map(|u| SideInput::Text(&prep.corpus.get(&u.user).unwrap().text)).collect();
    let scores = ranking::score_batch(&model, x.view(), &side, 0.5).map_err(e)?;
    let rankings: Vec<Vec<usize>> = users
        .iter()
        .enumerate()
        .map(|(b, u)| ranking::top_k_indices(scores.row(b), &u.seen, 50))
        .collect();
    let w = Workload { model: &model, dataset: ds, users: &prep.test, k: 20, parallelism };
    let (edits, _) = prep.test_flips(1);
    let table = bench::alpha_sweep(&w, &prep.corpus, &edits, &[0.0, 0.5, 1.0]).map_err(e)?;
    let ls = bench::run_large_scope(&w, &prep.corpus, &edits, &[0.0, 0.5, 1.0]).map_err(e)?;
    let stats = corpus_stats(&prep.corpus.summaries(), 500, 3).map_err(e)?;
    let score_bits: Vec<u64> = scores.iter().map(|v| v.to_bits()).collect();
    let doc = json!({
        "plan": prep.plan,
        "train": prep.train,
        "corpus": prep.corpus.summaries(),
        "backbone": bb_report,
        "history": report.history,
        "best_epoch": report.best_epoch,
        "scores": score_bits,
        "rankings": rankings,
        "sweep": table,
        "large_scope": ls,
        "stats": stats,
    });
    serde_json::to_string(&doc).map_err(|e| e.to_string())
}

fn criterion_8() -> Verdict {
    let a = reduced_run(Parallelism::Rayon)?;
    let b = reduced_run(Parallelism::Rayon)?;
    let s = reduced_run(Parallelism::Sequential)?;
    let mut c = Checks::default();
    c.check(a == b, format!("two runs identical ({} bytes of artifacts)", a.len()));
    c.check(a == s, "rayon and sequential runs identical");
    c.finish()
}

// ---------------------------------------------------------------------------
// Criterion 9: summary statistics.

fn criterion_9() -> Verdict {
    let cfg = small_config(9);
    let prep = pipeline::prepare(&cfg).map_err(|e| e.to_string())?;
    let texts: Vec<String> = prep.corpus.iter().map(|s| s.text.clone()).collect();
    let mut rng = StdRng::seed_from_u64(99);
    let mut c = Checks::default();

    let identity = texts.iter().all(|t| word_edit_distance(t, t) == 0 && (bleu4(t, t) - 1.0).abs() < 1e-12);
    c.check(identity, format!("d(s,s)=0 and BLEU(s,s)=1 on {} summaries", texts.len()));
    let mut symmetric = true;
    let mut triangle = true;
    for _ in 0..200 {
        let pick = |rng: &mut StdRng| &texts[rng.random_range(0..texts.len())];
        let (a, b, x) = (pick(&mut rng), pick(&mut rng), pick(&mut rng));
        let (ab, ba) = (word_edit_distance(a, b), word_edit_distance(b, a));
        symmetric &= ab == ba;
        triangle &= ab <= word_edit_distance(a, x) + word_edit_distance(x, b);
    }
    c.check(symmetric, "edit distance symmetric on 200 pairs");
    c.check(triangle, "triangle inequality on 200 triples");

    let same = vec![
        UserSummary::new("a", texts[0].clone(), SummarySource::Synthetic, 0).unwrap(),
        UserSummary::new("b", texts[0].clone(), SummarySource::Synthetic, 0).unwrap(),
    ];
    let st = corpus_stats(&same, 10, 0).map_err(|e| e.to_string())?;
    c.check(
        st.mean_pairwise_edit_distance == 0.0 && (st.mean_pairwise_bleu4 - 1.0).abs() < 1e-12,
        format!("identical pair: distance {}, BLEU {}", st.mean_pairwise_edit_distance, st.mean_pairwise_bleu4),
    );

    let mut subset: Vec<UserSummary> = prep.corpus.summaries().into_iter().take(30).collect();
    let fwd = corpus_stats(&subset, 10_000, 1).map_err(|e| e.to_string())?;
    subset.shuffle(&mut rng);
    let shuf = corpus_stats(&subset, 10_000, 2).map_err(|e| e.to_string())?;
    c.check(
        fwd.pairs_evaluated == 435
            && (fwd.mean_pairwise_edit_distance - shuf.mean_pairwise_edit_distance).abs() < 1e-9
            && (fwd.mean_pairwise_bleu4 - shuf.mean_pairwise_bleu4).abs() < 1e-12
            && fwd.mean_length == shuf.mean_length,
        "all-pairs statistics invariant to corpus order",
    );

    match std::env::var("TEARS_ML1M_SUMMARIES") {
        Ok(path) => {
            let corpus = SummaryCorpus::load_any(std::path::Path::new(&path)).map_err(|e| e.to_string())?;
            let st = corpus_stats(&corpus.summaries(), 10_000, 0).map_err(|e| e.to_string())?;
            c.check(
                (st.mean_length - 171.27).abs() <= 2.0,
                format!("published corpus mean length {:.2} (target 171.27 +- 2)", st.mean_length),
            );
            c.check(
                (st.mean_pairwise_edit_distance - 160.25).abs() <= 5.0,
                format!("published corpus edit distance {:.2} (target 160.25 +- 5)", st.mean_pairwise_edit_distance),
            );
        }
        Err(_) => c.lines.push("published-corpus comparison not run (TEARS_ML1M_SUMMARIES unset)".into()),
    }
    c.finish()
}

// ---------------------------------------------------------------------------

fn run(id: u8, name: &str, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let secs = start.elapsed().as_secs_f64();
    match verdict {
        Ok(detail) => {
            println!("criterion {id} {name}: PASS — {detail} [{secs:.1}s]");
            true
        }
        Err(detail) => {
            println!("criterion {id} {name}: FAIL — {detail} [{secs:.1}s]");
            false
        }
    }
}

fn main() -> ExitCode {
    // Honor the harness's listing mode so `cargo test -- --list` stays quiet.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let mut ok = true;
    ok &= run(1, "metric oracle parity", criterion_1);
    ok &= run(2, "closed-form OT", criterion_2);
    ok &= run(3, "gradient checks", criterion_3);
    ok &= run(4, "mixing endpoints at init", criterion_4);

    let t = Instant::now();
    let experiment = run_experiment();
    println!("(synthetic experiment fitted in {:.1}s)", t.elapsed().as_secs_f64());
    let shared = |f: fn(&Experiment) -> Verdict| {
        let e = &experiment;
        move || match e {
            Ok(x) => f(x),
            Err(msg) => Err(format!("experiment failed: {msg}")),
        }
    };
    ok &= run(5, "synthetic controllability", shared(criterion_5));
    ok &= run(6, "training improves validation", shared(criterion_6));
    ok &= run(7, "genre-profile flips", shared(criterion_7));
    ok &= run(8, "determinism", criterion_8);
    ok &= run(9, "summary statistics", criterion_9);

    if ok {
        println!("acceptance: all criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: some criteria failed");
        ExitCode::FAILURE
    }
}
