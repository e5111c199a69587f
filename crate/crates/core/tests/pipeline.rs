//! End-to-end checks of the experiment pipeline on a small synthetic corpus.

use std::sync::OnceLock;

use tears::bench::{self, FineGrainedConfig, GersFlipMode, Workload};
use tears::dataio::synthetic::SyntheticConfig;
use tears::models::{BackboneSpec, TearsCheckpoint, TearsModel, TextEncoderSpec};
use tears::par::Parallelism;
use tears::pipeline::{self, ExperimentConfig, Prepared};
use tears::ranking::GuidanceMode;
use tears::summaries::{SummaryCorpus, SummarySource};
use tears::training::TrainReport;

fn config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.synthetic = SyntheticConfig { n_users: 200, n_items: 300, min_ratings: 25, max_ratings: 45, ..SyntheticConfig::default() };
    cfg.n_val = 30;
    cfg.n_test = 40;
    cfg.backbone = BackboneSpec::multi_vae(16, vec![64]);
    cfg.backbone_train.epochs = 10;
    cfg.text = TextEncoderSpec { buckets: 2048, embed_dim: 32, hidden_dims: vec![64], init_std: 0.01 };
    cfg.side_hidden = vec![64];
    cfg.train.epochs = 15;
    cfg.summary_budget = 150;
    cfg
}

struct Fitted {
    cfg: ExperimentConfig,
    prep: Prepared,
    model: TearsModel,
    report: TrainReport,
}

fn fitted() -> &'static Fitted {
    static CELL: OnceLock<Fitted> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = config();
        let prep = pipeline::prepare(&cfg).unwrap();
        let (bb, _) = pipeline::fit_backbone(&cfg, &prep).unwrap();
        let (model, report) = pipeline::fit_text_model(&cfg, &prep, bb).unwrap();
        Fitted { cfg, prep, model, report }
    })
}

fn workload(f: &Fitted) -> Workload<'_> {
    Workload { model: &f.model, dataset: f.prep.dataset(), users: &f.prep.test, k: 20, parallelism: Parallelism::Rayon }
}

#[test]
fn every_user_gets_a_summary() {
    let f = fitted();
    assert!(f.prep.failures.is_empty());
    let users = f.prep.train.len() + f.prep.val.len() + f.prep.test.len();
    assert_eq!(f.prep.corpus.len(), users);
    assert_eq!(f.prep.val.len(), 30);
    assert_eq!(f.prep.test.len(), 40);
}

#[test]
fn training_loss_falls_and_validation_rises() {
    let f = fitted();
    let h = &f.report.history;
    assert_eq!(h.len(), f.cfg.train.epochs + 1);
    let first = h[1].loss.total;
    let last = h.last().unwrap().loss.total;
    assert!(last < first, "loss {first} -> {last}");
    assert!(f.report.best_score > f.report.initial_score());
    assert!(h.iter().all(|r| r.val_by_alpha.len() == 3));
}

#[test]
fn checkpoint_round_trips() {
    let f = fitted();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    TearsCheckpoint::new(f.model.clone(), serde_json::json!({"epoch": f.report.best_epoch})).save(&path).unwrap();
    let back = TearsCheckpoint::load(&path).unwrap();
    let w0 = workload(f);
    let a = bench::run_large_scope(&w0, &f.prep.corpus, &f.prep.test_flips(1).0, &[0.5]).unwrap();
    let w1 = Workload { model: &back.model, ..w0 };
    let b = bench::run_large_scope(&w1, &f.prep.corpus, &f.prep.test_flips(1).0, &[0.5]).unwrap();
    assert_eq!(serde_json::to_string(&a.rows).unwrap(), serde_json::to_string(&b.rows).unwrap());
}

#[test]
fn large_scope_rows_are_ordered_and_zero_at_alpha_zero() {
    let f = fitted();
    let (edits, _) = f.prep.test_flips(1);
    let run = bench::run_large_scope(&workload(f), &f.prep.corpus, &edits, &[0.0, 0.5, 1.0]).unwrap();
    assert_eq!(run.rows.iter().map(|r| r.alpha).collect::<Vec<_>>(), vec![0.0, 0.5, 1.0]);
    assert!(run.rows[0].delta_up.values.iter().all(|v| *v == 0.0));
    assert_eq!(run.metric_rows().len(), 6);
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("rows.csv");
    bench::write_metric_csv(&run.metric_rows(), &csv).unwrap();
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 7);
}

#[test]
fn fine_grained_targets_stay_inside_the_window() {
    let f = fitted();
    let cfg = FineGrainedConfig { window: (20, 200), reruns: 2, alphas: vec![1.0], ..FineGrainedConfig::default() };
    let run = bench::run_fine_grained(&workload(f), &f.prep.corpus, &f.prep.provider, &Default::default(), &cfg).unwrap();
    for u in &run.users {
        assert!(u.original_rank.iter().all(|&r| r > 20 && r < 200), "{:?}", u.original_rank);
        assert_eq!(u.after_rank.len(), 2);
    }
    assert_eq!(run.users.len() + run.filtered.len(), f.prep.test.len());
}

#[test]
fn guided_and_sweep_tables_cover_requests() {
    let f = fitted();
    let w = workload(f);
    let genres = bench::top_genres(f.prep.dataset(), 3);
    let g = bench::run_guided(&w, &genres, &[GuidanceMode::Positive, GuidanceMode::Negative], f.cfg.item_type).unwrap();
    assert_eq!(g.rows.len() + 2 * g.excluded.len(), 6);
    let (edits, _) = f.prep.test_flips(1);
    let t = bench::alpha_sweep(&w, &f.prep.corpus, &edits, &[0.0, 0.5, 1.0]).unwrap();
    assert_eq!(t.rows.len(), 3);
    assert!(t.rows.iter().any(|r| r.alpha == t.best_alpha));
    assert!(bench::render_sweep(&t).contains("0.50"));
}

#[test]
fn gers_one_hot_moves_at_least_as_far_as_swap() {
    let f = fitted();
    let (gm, _, profiles) = pipeline::fit_genre_model(&f.cfg, &f.prep, f.model.backbone.clone().unwrap()).unwrap();
    let w = Workload { model: &gm, ..workload(f) };
    let swap = bench::run_gers_flip(&w, &profiles, GersFlipMode::Swap, &[1.0]).unwrap();
    let hot = bench::run_gers_flip(&w, &profiles, GersFlipMode::OneHotUpperBound, &[1.0]).unwrap();
    assert!(hot.rows[0].delta_up.mean_abs() >= swap.rows[0].delta_up.mean_abs());
}

#[test]
fn json_summary_maps_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("summaries.json");
    std::fs::write(&path, r#"{"1": "Enjoys quiet dramas.", "2": "Loves space operas."}"#).unwrap();
    let c = SummaryCorpus::load_any(&path).unwrap();
    assert_eq!(c.len(), 2);
    assert_eq!(c.get("2").unwrap().text, "Loves space operas.");
    assert!(matches!(c.get("1").unwrap().source, SummarySource::Llm(_)));
    std::fs::write(&path, r#"{"1": "   "}"#).unwrap();
    assert!(SummaryCorpus::load_any(&path).is_err());
}
