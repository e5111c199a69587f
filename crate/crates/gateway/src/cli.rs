//! The `tears` command line. Every subcommand reads the TOML config (plus
//! flag overrides), works inside the configured working directory and
//! writes a run manifest to `manifests/<command>.json`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Axis;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use tears::bench::{self, FineGrainedConfig, GersFlipMode, MetricRow, Workload};
use tears::dataio::synthetic;
use tears::dataio::{
    binarize, build_examples, dense_inputs, load_and_filter, load_catalog, CatalogFormat, Dataset, RatingsFormat,
    Role, SplitPlan, UserExample,
};
use tears::derive_seed;
use tears::metrics::{ndcg_indices, recall_at_k, MetricReport};
use tears::models::{SideInput, TearsCheckpoint, TearsModel};
use tears::par::Parallelism;
use tears::pipeline::{self, Splits};
use tears::ranking::{self, GuidanceMode};
use tears::summaries::llm::{flip_corpus, CannedProvider, CompletionProvider, OfflineProvider, OpenAiProvider, RecordingProvider};
use tears::summaries::SummaryCorpus;

use crate::config::{DataSource, FileFormat, GatewayConfig, ProviderKind, Workdir};
use crate::server;
use crate::service::Service;
use crate::store::SummaryStore;

#[derive(Debug, Parser)]
#[command(name = "tears", version, about = "Recommendations steered by editable natural-language user summaries")]
pub struct Cli {
    /// TOML configuration file; built-in defaults are used when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured working directory.
    #[arg(long, global = true)]
    pub workdir: Option<PathBuf>,
    /// Overrides the experiment seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load ratings and items (or generate a synthetic corpus) and split users.
    Ingest(IngestArgs),
    /// Write one summary per user from their input items.
    Summarize(SummarizeArgs),
    /// Train the rating backbone and the text-conditioned model.
    Train(TrainArgs),
    /// Recall and NDCG of held-out items at one or more mixing weights.
    Evaluate(EvaluateArgs),
    /// Run a controllability task on the test users.
    Bench(BenchArgs),
    /// Serve recommendations, previews and summary edits over HTTP.
    Serve(ServeArgs),
    /// Write per-user summary, rating and mixed latent means as JSONL.
    ExportLatents(ExportArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Generate the synthetic corpus regardless of the configured source.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long)]
    pub ratings: Option<PathBuf>,
    #[arg(long)]
    pub items: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FileFormat>,
    #[arg(long)]
    pub min_user_ratings: Option<usize>,
    #[arg(long)]
    pub min_item_ratings: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long, value_enum)]
    pub provider: Option<ProviderKind>,
    /// Recorded completions for the canned provider.
    #[arg(long)]
    pub canned: Option<PathBuf>,
    /// Save every request and response of this run.
    #[arg(long)]
    pub record: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub backbone_epochs: Option<usize>,
    /// Also train a model whose side input is the genre profile.
    #[arg(long)]
    pub genre_model: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Mixing weights; repeat the flag for several.
    #[arg(long = "alpha", default_values_t = vec![0.0, 0.5, 1.0])]
    pub alpha: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Metric table path (CSV); defaults to `metrics.csv` in the workdir.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchTask {
    LargeScope,
    FineGrained,
    Guided,
    Gers,
    Sweep,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(value_enum)]
    pub task: BenchTask,
    /// Alpha grid as `start:end:step` or a comma list.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    /// Output directory; defaults to `bench/` in the workdir.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub addr: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Weight used for the mixed latent.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `start:end:step` (inclusive) or `a,b,c`.
pub fn parse_grid(s: &str) -> anyhow::Result<Vec<f64>> {
    let round = |x: f64| (x * 1e9).round() / 1e9;
    let grid: Vec<f64> = if let [a, b, step] = s.split(':').collect::<Vec<_>>()[..] {
        let (a, b, step): (f64, f64, f64) = (a.trim().parse()?, b.trim().parse()?, step.trim().parse()?);
        if !(step > 0.0) || b < a {
            bail!("grid {s:?} needs start <= end and a positive step");
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| round(a + i as f64 * step)).collect()
    } else {
        s.split(',').map(|v| v.trim().parse::<f64>().map_err(anyhow::Error::from)).collect::<anyhow::Result<_>>()?
    };
    if grid.is_empty() || grid.iter().any(|a| !(0.0..=1.0).contains(a)) {
        bail!("grid {s:?} must be non-empty and inside [0, 1]");
    }
    Ok(grid)
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

struct Ctx {
    cfg: GatewayConfig,
    wd: Workdir,
}

impl Ctx {
    fn dataset(&self) -> anyhow::Result<Dataset> {
        let p = self.wd.dataset();
        Dataset::load(&p).with_context(|| format!("loading {} (run `tears ingest` first)", p.display()))
    }

    fn splits(&self, ds: &Dataset) -> anyhow::Result<Splits> {
        let p = self.wd.split();
        let plan = SplitPlan::load(&p).with_context(|| format!("loading {}", p.display()))?;
        Ok(Splits {
            train: build_examples(ds, &plan, Role::Train)?,
            val: build_examples(ds, &plan, Role::Validation)?,
            test: build_examples(ds, &plan, Role::Test)?,
            plan,
        })
    }

    fn corpus(&self) -> anyhow::Result<SummaryCorpus> {
        let p = self.wd.summaries();
        SummaryCorpus::load_jsonl(&p).with_context(|| format!("loading {} (run `tears summarize` first)", p.display()))
    }

    fn checkpoint(&self, path: &Path) -> anyhow::Result<TearsCheckpoint> {
        TearsCheckpoint::load(path).with_context(|| format!("loading {} (run `tears train` first)", path.display()))
    }

    fn provider(&self, ds: &Dataset) -> anyhow::Result<RecordingProvider<Box<dyn CompletionProvider>>> {
        let s = &self.cfg.summaries;
        let inner: Box<dyn CompletionProvider> = match s.provider {
            ProviderKind::Offline => {
                Box::new(OfflineProvider::new(ds.catalog.genre_vocabulary().to_vec(), self.cfg.experiment.item_type))
            }
            ProviderKind::Openai => Box::new(OpenAiProvider::from_env(&self.cfg.experiment.llm)?),
            ProviderKind::Canned => {
                let p = s.canned.as_ref().context("the canned provider needs `summaries.canned` or --canned")?;
                Box::new(CannedProvider::load_jsonl("canned", p)?)
            }
        };
        Ok(RecordingProvider::new(inner))
    }

    fn save_recording(&self, p: &RecordingProvider<Box<dyn CompletionProvider>>) -> anyhow::Result<()> {
        if let Some(path) = &self.cfg.summaries.record {
            p.save_jsonl(path)?;
        }
        Ok(())
    }

    fn examples(&self, splits: &Splits, which: SplitArg) -> Vec<UserExample> {
        match which {
            SplitArg::Train => splits.train.clone(),
            SplitArg::Val => splits.val.clone(),
            SplitArg::Test => splits.test.clone(),
            SplitArg::All => splits.all(),
        }
    }

    fn manifest(&self, command: &str, outputs: &[PathBuf], details: serde_json::Value) -> anyhow::Result<()> {
        let dir = self.wd.manifests();
        fs::create_dir_all(&dir)?;
        let outputs: Vec<serde_json::Value> = outputs
            .iter()
            .map(|p| Ok(json!({ "path": p, "sha256": sha256_file(p)? })))
            .collect::<anyhow::Result<_>>()?;
        let doc = json!({
            "command": command,
            "argv": std::env::args().collect::<Vec<_>>(),
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.cfg.experiment.seed,
            "config": self.cfg,
            "outputs": outputs,
            "details": details,
        });
        bench::save_json(&doc, &dir.join(format!("{command}.json")))?;
        Ok(())
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => GatewayConfig::load(p)?,
        None => GatewayConfig::default(),
    };
    if let Some(w) = cli.workdir {
        cfg.workdir = w;
    }
    if let Some(s) = cli.seed {
        cfg.experiment.seed = s;
    }
    let wd = Workdir(cfg.workdir.clone());
    fs::create_dir_all(&wd.0).with_context(|| format!("creating {}", wd.0.display()))?;
    let mut ctx = Ctx { cfg, wd };
    match cli.command {
        Command::Ingest(a) => ingest(&mut ctx, a),
        Command::Summarize(a) => summarize(&mut ctx, a),
        Command::Train(a) => train(&mut ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Bench(a) => run_bench(&ctx, a),
        Command::Serve(a) => serve(&mut ctx, a),
        Command::ExportLatents(a) => export_latents(&ctx, a),
    }
}

fn ingest(ctx: &mut Ctx, a: IngestArgs) -> anyhow::Result<()> {
    let d = &mut ctx.cfg.data;
    if a.synthetic {
        d.source = DataSource::Synthetic;
    }
    if a.ratings.is_some() || a.items.is_some() {
        d.source = DataSource::Files;
    }
    d.ratings = a.ratings.or(d.ratings.take());
    d.items = a.items.or(d.items.take());
    d.format = a.format.unwrap_or(d.format);
    d.min_user_ratings = a.min_user_ratings.unwrap_or(d.min_user_ratings);
    d.min_item_ratings = a.min_item_ratings.unwrap_or(d.min_item_ratings);
    let exp = &ctx.cfg.experiment;
    let mut ds = match d.source {
        DataSource::Synthetic => {
            let mut syn = exp.synthetic.clone();
            syn.seed = derive_seed(exp.seed, "synthetic");
            synthetic::generate(&syn)?.dataset
        }
        DataSource::Files => {
            let ratings = d.ratings.as_ref().context("file ingestion needs --ratings")?;
            let items = d.items.as_ref().context("file ingestion needs --items")?;
            let (rf, cf) = match d.format {
                FileFormat::Movielens => (RatingsFormat::movielens(), CatalogFormat::movielens()),
                FileFormat::Csv => (RatingsFormat::csv(), CatalogFormat::csv()),
            };
            let catalog = load_catalog(items, &cf)?;
            let inter = load_and_filter(ratings, &rf, d.min_user_ratings, d.min_item_ratings)?;
            Dataset::join(&catalog, inter)?
        }
    };
    ds.interactions = binarize(&ds.interactions, exp.threshold)?;
    let splits = pipeline::split(exp, &ds)?;
    ds.save(&ctx.wd.dataset())?;
    splits.plan.save(&ctx.wd.split())?;
    println!(
        "{} users, {} items, {} ratings; {} train / {} validation / {} test users",
        ds.interactions.num_users(),
        ds.num_items(),
        ds.interactions.num_ratings(),
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    );
    ctx.manifest(
        "ingest",
        &[ctx.wd.dataset(), ctx.wd.split()],
        json!({ "dataset_hash": ds.content_hash(), "catalog_hash": ds.catalog.content_hash() }),
    )
}

fn summarize(ctx: &mut Ctx, a: SummarizeArgs) -> anyhow::Result<()> {
    let s = &mut ctx.cfg.summaries;
    s.provider = a.provider.unwrap_or(s.provider);
    s.canned = a.canned.or(s.canned.take());
    s.record = a.record.or(s.record.take());
    let ds = ctx.dataset()?;
    let splits = ctx.splits(&ds)?;
    let provider = ctx.provider(&ds)?;
    let run = pipeline::summarize(&ctx.cfg.experiment, &ds, &splits.all(), &provider)?;
    ctx.save_recording(&provider)?;
    if run.corpus.is_empty() {
        bail!("every summary request failed; first error: {:?}", run.failures.first());
    }
    run.corpus.save_jsonl(&ctx.wd.summaries())?;
    for (u, e) in &run.failures {
        eprintln!("warning: no summary for user {u}: {e}");
    }
    println!("{} summaries written, {} failures", run.corpus.len(), run.failures.len());
    ctx.manifest(
        "summarize",
        &[ctx.wd.summaries()],
        json!({ "provider": provider.name(), "corpus_hash": run.corpus.content_hash(), "failures": run.failures }),
    )
}

fn train(ctx: &mut Ctx, a: TrainArgs) -> anyhow::Result<()> {
    let exp = &mut ctx.cfg.experiment;
    exp.train.epochs = a.epochs.unwrap_or(exp.train.epochs);
    exp.backbone_train.epochs = a.backbone_epochs.unwrap_or(exp.backbone_train.epochs);
    let exp = ctx.cfg.experiment.clone();
    let ds = ctx.dataset()?;
    let splits = ctx.splits(&ds)?;
    let corpus = ctx.corpus()?;
    let (backbone, bb_report) = pipeline::fit_backbone_on(&exp, ds.num_items(), &splits.train, &splits.val)?;
    println!("backbone: best epoch {} of {}", bb_report.best_epoch, exp.backbone_train.epochs);
    let (model, report) = pipeline::fit_text_model_on(&exp, &ds, &splits.train, &splits.val, &corpus, backbone.clone())?;
    println!(
        "model: best epoch {}, validation NDCG@{} {:.4} (epoch 0: {:.4})",
        report.best_epoch,
        exp.train.k,
        report.best_score,
        report.initial_score()
    );
    let meta = json!({
        "best_epoch": report.best_epoch,
        "best_score": report.best_score,
        "initial_score": report.initial_score(),
        "corpus_hash": corpus.content_hash(),
        "experiment": exp,
    });
    TearsCheckpoint::new(model, meta).save(&ctx.wd.model())?;
    let (history, bb_path) = (ctx.wd.path("history.jsonl"), ctx.wd.path("backbone_report.json"));
    report.save_history(&history)?;
    bench::save_json(&bb_report, &bb_path)?;
    let mut outputs = vec![ctx.wd.model(), history, bb_path];
    if a.genre_model {
        let profiles = pipeline::genre_profiles(&ds, &splits.all())?;
        let (gm, grep) = pipeline::fit_genre_model_on(&exp, &ds, &splits.train, &splits.val, &profiles, backbone)?;
        println!("genre model: best epoch {}, validation NDCG@{} {:.4}", grep.best_epoch, exp.train.k, grep.best_score);
        TearsCheckpoint::new(gm, json!({ "best_epoch": grep.best_epoch, "best_score": grep.best_score })).save(&ctx.wd.genre_model())?;
        outputs.push(ctx.wd.genre_model());
    }
    ctx.manifest("train", &outputs, json!({ "run": report.manifest }))
}

#[derive(Serialize)]
struct LatentRecord<'a> {
    user: &'a str,
    alpha: f64,
    mu_s: Vec<f64>,
    mu_r: Vec<f64>,
    z_c: Vec<f64>,
}

fn side_texts<'a>(corpus: &'a SummaryCorpus, users: &[UserExample]) -> anyhow::Result<Vec<SideInput<'a>>> {
    users
        .iter()
        .map(|e| {
            corpus.get(&e.user).map(|s| SideInput::Text(&s.text)).with_context(|| format!("no summary for user {}", e.user))
        })
        .collect()
}

fn evaluate(ctx: &Ctx, a: EvaluateArgs) -> anyhow::Result<()> {
    if a.k == 0 || a.alpha.iter().any(|x| !(0.0..=1.0).contains(x)) {
        bail!("need k >= 1 and every alpha in [0, 1]");
    }
    let ds = ctx.dataset()?;
    let splits = ctx.splits(&ds)?;
    let corpus = ctx.corpus()?;
    let model = ctx.checkpoint(&ctx.wd.model())?.model;
    let users: Vec<UserExample> = ctx.examples(&splits, a.split).into_iter().filter(|e| !e.relevant.is_empty()).collect();
    if users.is_empty() {
        bail!("no users with held-out positives in the {:?} split", a.split);
    }
    let refs: Vec<&UserExample> = users.iter().collect();
    let x = dense_inputs(&refs, ds.num_items());
    let side = side_texts(&corpus, &users)?;
    let seed = ctx.cfg.experiment.seed;
    let dataset = ctx.cfg.data.source_name();
    let row = |model: &str, alpha: f64, metric: &str, values: Vec<f64>| {
        let r = MetricReport::new(metric, a.k, values);
        MetricRow {
            model: model.into(),
            dataset: dataset.clone(),
            task: "evaluate".into(),
            alpha,
            seed,
            metric: metric.into(),
            k: a.k,
            mean: r.mean,
            std: r.std,
            n: r.values.len(),
        }
    };
    let mut rows = Vec::new();
    let mut add = |model: &str, alpha: f64, lists: Vec<Vec<usize>>| -> anyhow::Result<()> {
        let recall = users.iter().zip(&lists).map(|(e, l)| recall_at_k(l, &e.relevant, a.k)).collect::<Result<Vec<_>, _>>()?;
        let ndcg = users.iter().zip(&lists).map(|(e, l)| ndcg_indices(l, &e.relevant, a.k)).collect();
        rows.push(row(model, alpha, "recall", recall));
        rows.push(row(model, alpha, "ndcg", ndcg));
        Ok(())
    };
    for &alpha in &a.alpha {
        let scores = ranking::score_batch(&model, x.view(), &side, alpha)?;
        let lists = users.iter().enumerate().map(|(b, e)| ranking::top_k_indices(scores.row(b), &e.seen, a.k)).collect();
        add("tears", alpha, lists)?;
    }
    let pop = ranking::popularity_scores(&splits.train, ds.num_items());
    add("popularity", 0.0, users.iter().map(|e| ranking::top_k_indices(pop.view(), &e.seen, a.k)).collect())?;
    let out = a.out.unwrap_or_else(|| ctx.wd.path("metrics.csv"));
    bench::write_metric_csv(&rows, &out)?;
    for r in &rows {
        println!("{:<10} alpha {:.2} {}@{} {:.4} (n={})", r.model, r.alpha, r.metric, r.k, r.mean, r.n);
    }
    ctx.manifest("evaluate", &[out], json!({ "split": format!("{:?}", a.split), "users": users.len() }))
}

fn run_bench(ctx: &Ctx, a: BenchArgs) -> anyhow::Result<()> {
    let ds = ctx.dataset()?;
    let splits = ctx.splits(&ds)?;
    let corpus = ctx.corpus()?;
    let exp = &ctx.cfg.experiment;
    let out_dir = a.out.clone().unwrap_or_else(|| ctx.wd.bench());
    fs::create_dir_all(&out_dir)?;
    let default_grid = match a.task {
        BenchTask::LargeScope => "0:1:0.25",
        BenchTask::FineGrained => "0,0.5,1",
        BenchTask::Guided | BenchTask::Gers => "1",
        BenchTask::Sweep => "0:1:0.01",
    };
    let grid = parse_grid(a.grid.as_deref().unwrap_or(default_grid))?;
    let model_path = if a.task == BenchTask::Gers { ctx.wd.genre_model() } else { ctx.wd.model() };
    let model = ctx.checkpoint(&model_path)?.model;
    let w = Workload { model: &model, dataset: &ds, users: &splits.test, k: a.k, parallelism: Parallelism::Rayon };
    let provider = ctx.provider(&ds)?;
    let flips = || {
        let users: Vec<String> = splits.test.iter().map(|e| e.user.clone()).collect();
        let vocab = ds.catalog.genre_vocabulary().to_vec();
        let (edits, failures) = flip_corpus(&provider, &corpus, &users, &vocab, &exp.llm, derive_seed(exp.seed, "flips"));
        for (u, e) in &failures {
            eprintln!("warning: no flip for user {u}: {e}");
        }
        edits
    };
    let name = match a.task {
        BenchTask::LargeScope => "large_scope",
        BenchTask::FineGrained => "fine_grained",
        BenchTask::Guided => "guided",
        BenchTask::Gers => "gers",
        BenchTask::Sweep => "sweep",
    };
    let (json_path, csv_path) = (out_dir.join(format!("{name}.json")), out_dir.join(format!("{name}.csv")));
    match a.task {
        BenchTask::LargeScope => {
            let run = bench::run_large_scope(&w, &corpus, &flips(), &grid)?;
            for r in &run.rows {
                println!(
                    "alpha {:.2}: delta_up {:+.4} ({:.0}% correct), delta_down {:+.4} ({:.0}% correct)",
                    r.alpha,
                    r.delta_up.mean,
                    100.0 * r.up_correct,
                    r.delta_down.mean,
                    100.0 * r.down_correct
                );
            }
            bench::save_json(&run, &json_path)?;
            bench::write_metric_csv(&run.metric_rows(), &csv_path)?;
        }
        BenchTask::FineGrained => {
            let cfg = FineGrainedConfig { alphas: grid, item_type: exp.item_type, seed: derive_seed(exp.seed, "fine-grained"), ..FineGrainedConfig::default() };
            let run = bench::run_fine_grained(&w, &corpus, &provider, &exp.llm, &cfg)?;
            for r in &run.rows {
                println!("alpha {:.2}: mean rank gain {:.1}, improved for {:.0}% of {} users", r.alpha, r.delta_rank.mean, 100.0 * r.improved, r.delta_rank.values.len());
            }
            bench::save_json(&run, &json_path)?;
            bench::write_metric_csv(&run.metric_rows(), &csv_path)?;
        }
        BenchTask::Guided => {
            let genres = bench::top_genres(&ds, 10);
            let run = bench::run_guided(&w, &genres, &[GuidanceMode::Positive, GuidanceMode::Negative], exp.item_type)?;
            for r in &run.rows {
                println!("{:<24} {:?}: {:.4} -> {:.4}", r.phrase, r.mode, r.original.mean, r.guided.mean);
            }
            bench::save_json(&run, &json_path)?;
            bench::write_metric_csv(&run.metric_rows(), &csv_path)?;
        }
        BenchTask::Gers => {
            let profiles = pipeline::genre_profiles(&ds, &splits.test)?;
            let swap = bench::run_gers_flip(&w, &profiles, GersFlipMode::Swap, &grid)?;
            let hot = bench::run_gers_flip(&w, &profiles, GersFlipMode::OneHotUpperBound, &grid)?;
            for (label, run) in [("swap", &swap), ("one-hot", &hot)] {
                for r in &run.rows {
                    println!("{label:<8} alpha {:.2}: |delta_up| {:.4}, |delta_down| {:.4}", r.alpha, r.delta_up.mean_abs(), r.delta_down.mean_abs());
                }
            }
            bench::save_json(&json!({ "swap": swap, "one_hot": hot }), &json_path)?;
            let mut rows = swap.metric_rows();
            rows.extend(hot.metric_rows().into_iter().map(|mut r| {
                r.task = format!("{}-one-hot", r.task);
                r
            }));
            bench::write_metric_csv(&rows, &csv_path)?;
        }
        BenchTask::Sweep => {
            let table = bench::alpha_sweep(&w, &corpus, &flips(), &grid)?;
            println!("{}", bench::render_sweep(&table));
            bench::save_json(&table, &json_path)?;
            bench::write_sweep_csv(&table, &csv_path)?;
        }
    }
    ctx.save_recording(&provider)?;
    ctx.manifest(&format!("bench-{name}"), &[json_path, csv_path], json!({ "grid": a.grid, "k": a.k }))
}

fn serve(ctx: &mut Ctx, a: ServeArgs) -> anyhow::Result<()> {
    if let Some(addr) = a.addr {
        ctx.cfg.server.addr = addr;
    }
    let path = ctx.wd.model();
    if !path.exists() {
        bail!("checkpoint {} not found (run `tears train` first)", path.display());
    }
    let checkpoint = ctx.checkpoint(&path)?;
    let hash = sha256_file(&path)?;
    let ds = ctx.dataset()?;
    let splits = ctx.splits(&ds)?;
    let corpus = ctx.corpus()?;
    let store = SummaryStore::open(&ctx.wd.store(), &corpus)?;
    let service = Service::new(checkpoint, hash, ds, splits.all(), store, ctx.cfg.server.clone())?;
    let addr = ctx.cfg.server.addr.clone();
    tokio::runtime::Runtime::new()?.block_on(server::serve(Arc::new(service), &addr))
}

fn export_latents(ctx: &Ctx, a: ExportArgs) -> anyhow::Result<()> {
    if !(0.0..=1.0).contains(&a.alpha) {
        bail!("alpha {} outside [0, 1]", a.alpha);
    }
    let ds = ctx.dataset()?;
    let splits = ctx.splits(&ds)?;
    let corpus = ctx.corpus()?;
    let model: TearsModel = ctx.checkpoint(&ctx.wd.model())?.model;
    let users = ctx.examples(&splits, a.split);
    let refs: Vec<&UserExample> = users.iter().collect();
    let x = dense_inputs(&refs, ds.num_items());
    let side = side_texts(&corpus, &users)?;
    let mu_s = model.encode_side(&side)?.mu;
    let mu_r = model.encode_ratings(x.view())?.mu;
    let z_c = model.fuse(mu_s.view(), Some(mu_r.view()), a.alpha)?;
    let out = a.out.unwrap_or_else(|| ctx.wd.path("latents.jsonl"));
    let mut w = BufWriter::new(fs::File::create(&out).with_context(|| format!("creating {}", out.display()))?);
    for (b, e) in users.iter().enumerate() {
        let row = |m: &ndarray::Array2<f64>| m.index_axis(Axis(0), b).to_vec();
        let rec = LatentRecord { user: &e.user, alpha: a.alpha, mu_s: row(&mu_s), mu_r: row(&mu_r), z_c: row(&z_c) };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    println!("{} latent records written to {}", users.len(), out.display());
    ctx.manifest("export-latents", &[out], json!({ "split": format!("{:?}", a.split), "alpha": a.alpha }))
}
