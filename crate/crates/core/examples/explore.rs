//! Runs the synthetic experiment end to end and prints controllability
//! numbers. Knobs come from environment variables for quick sweeps.

use std::time::Instant;

use tears::bench::{self, FineGrainedConfig, GersFlipMode, Workload};
use tears::par::Parallelism;
use tears::pipeline::{self, ExperimentConfig};
use tears::ranking::GuidanceMode;

fn env<T: std::str::FromStr>(k: &str, d: T) -> T {
    std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d)
}

fn main() -> tears::Result<()> {
    let t = Instant::now();
    let mut cfg = ExperimentConfig::default();
    cfg.backbone_train.epochs = env("BB_EPOCHS", cfg.backbone_train.epochs);
    cfg.train.epochs = env("EPOCHS", cfg.train.epochs);
    cfg.seed = env("SEED", cfg.seed);
    cfg.train.lr = env("LR", cfg.train.lr);
    cfg.train.lambda1 = env("L1", 0.1);
    cfg.train.lambda2_max = env("L2", 0.5);
    cfg.train.dropout = env("DROPOUT", cfg.train.dropout);
    cfg.text.embed_dim = env("EMBED", cfg.text.embed_dim);
    cfg.text.buckets = env("BUCKETS", cfg.text.buckets);
    cfg.synthetic.genre_concentration = env("GC", cfg.synthetic.genre_concentration);
    cfg.synthetic.genre_strength = env("GS", cfg.synthetic.genre_strength);
    cfg.synthetic.n_themes = env("NT", cfg.synthetic.n_themes);
    let lat: usize = env("LAT", cfg.backbone.latent_dim);
    cfg.backbone = tears::models::BackboneSpec::multi_vae(lat, vec![256]);
    cfg.synthetic.theme_strength = env("TS", cfg.synthetic.theme_strength);
    cfg.text.init_std = env("INIT", cfg.text.init_std);
    cfg.train.weight_decay = env("WD", cfg.train.weight_decay);
    let hid: usize = env("HID", cfg.side_hidden.first().copied().unwrap_or(0));
    cfg.side_hidden = if hid == 0 { vec![] } else { vec![hid] };
    cfg.train.batch = env("BATCH", cfg.train.batch);
    let prep = pipeline::prepare(&cfg)?;
    println!("prepared in {:?}; failures {}", t.elapsed(), prep.failures.len());
    println!("example summary:\n{}", prep.corpus.get(&prep.test[0].user).unwrap().text);
    let (bb, bbr) = pipeline::fit_backbone(&cfg, &prep)?;
    println!("backbone best epoch {} val {:?} in {:?}", bbr.best_epoch, bbr.val_ndcg.iter().cloned().fold(0.0, f64::max), t.elapsed());
    let (model, rep) = pipeline::fit_text_model(&cfg, &prep, bb.clone())?;
    println!("tears best epoch {} score {:.4} init {:.4} in {:?}", rep.best_epoch, rep.best_score, rep.initial_score(), t.elapsed());
    for h in rep.history.iter().step_by(env("EVERY", 5)) {
        println!("  epoch {} loss {:.3} ot {:.3} kl {:.3} val {:?}", h.epoch, h.loss.total, h.loss.l_ot, h.loss.l_kl, h.val_by_alpha);
    }
    let tr = tears::training::validation_ndcg(&model, &prep.train[..100], &prep.corpus, &[0.0, 0.5, 1.0], 50, Parallelism::Rayon)?;
    println!("train-user ndcg@50 {tr:?}");
    let ds = prep.dataset();
    let pop = tears::ranking::popularity_scores(&prep.train, ds.num_items());
    let vals: Vec<f64> = prep.val.iter().filter(|e| !e.relevant.is_empty()).map(|e| {
        let top = tears::ranking::top_k_indices(pop.view(), &e.seen, 50);
        tears::metrics::ndcg_indices(&top, &e.relevant, 50)
    }).collect();
    println!("popularity val ndcg@50 {:.4}", vals.iter().sum::<f64>() / vals.len() as f64);
    let w = Workload { model: &model, dataset: ds, users: &prep.test, k: 20, parallelism: Parallelism::Rayon };
    let (edits, fails) = prep.test_flips(1);
    println!("flips {} failed {}", edits.len(), fails.len());
    let alphas = [0.0, 0.25, 0.5, 0.75, 1.0];
    let ls = bench::run_large_scope(&w, &prep.corpus, &edits, &alphas)?;
    for r in &ls.rows {
        println!("  a={:.2} up {:+.4} ({:.2}) down {:+.4} ({:.2})", r.alpha, r.delta_up.mean, r.up_correct, r.delta_down.mean, r.down_correct);
    }
    let fg = bench::run_fine_grained(&w, &prep.corpus, &prep.provider, &Default::default(), &FineGrainedConfig { alphas: vec![0.5, 1.0], ..Default::default() })?;
    for r in &fg.rows {
        println!("  fine a={:.2} users {} median-mean {:.1} improved {:.2}", r.alpha, r.delta_rank.values.len(), r.delta_rank.mean, r.improved);
    }
    if env("THEMEDIAG", 0) == 1 {
        use tears::dataio::synthetic::THEMES;
        use tears::models::SideInput;
        let users: Vec<&tears::dataio::UserExample> = prep.test.iter().collect();
        let x = tears::dataio::dense_inputs(&users, ds.num_items());
        let base: Vec<String> = users.iter().map(|e| prep.corpus.get(&e.user).unwrap().text.clone()).collect();
        for (ti, (a, b)) in THEMES.iter().enumerate().take(8) {
            let items: Vec<usize> = (0..ds.num_items()).filter(|&i| prep.data.truth.item_theme[&ds.catalog.item(i).id] == ti).collect();
            for (label, sentence) in [("about", format!(" They also enjoy stories about {a} and {b}.")), ("with", format!(" They also enjoy stories with {a}, {b}, tension, stakes, and conflict."))] {
                let edited: Vec<String> = base.iter().map(|t| format!("{t}{sentence}")).collect();
                let s0: Vec<SideInput> = base.iter().map(|t| SideInput::Text(t)).collect();
                let s1: Vec<SideInput> = edited.iter().map(|t| SideInput::Text(t)).collect();
                let o = tears::ranking::score_batch(&model, x.view(), &s0, 1.0)?;
                let n = tears::ranking::score_batch(&model, x.view(), &s1, 1.0)?;
                let mut d = Vec::new();
                for (bi, e) in users.iter().enumerate() {
                    for &i in &items {
                        if e.seen.contains(&i) { continue; }
                        let r0 = tears::ranking::rank_in(o.row(bi), &e.seen, i)? as f64;
                        let r1 = tears::ranking::rank_in(n.row(bi), &e.seen, i)? as f64;
                        d.push(r0 - r1);
                    }
                }
                let pos = d.iter().filter(|&&v| v > 0.0).count() as f64 / d.len() as f64;
                println!("  theme {a}-{b} {label}: mean rank gain {:.1}, improved frac {:.2}", d.iter().sum::<f64>() / d.len() as f64, pos);
            }
        }
    }
    {
        let (mut already, mut already_ok, mut fresh, mut fresh_ok) = (0, 0, 0, 0);
        for u in &fg.users {
            let idx = ds.catalog.index_of(&u.item).unwrap();
            let w = ds.catalog.item(idx).title.split(' ').next().unwrap().to_lowercase();
            let text = prep.corpus.get(&u.user).unwrap().text.to_lowercase();
            let ok = *u.delta_rank.last().unwrap() > 0.0;
            if text.contains(&w) { already += 1; if ok { already_ok += 1 } } else { fresh += 1; if ok { fresh_ok += 1 } }
        }
        println!("  fine: theme already named {already} ({already_ok} improved), new theme {fresh} ({fresh_ok} improved)");
    }
    if env("FGDIAG", 0) == 1 {
        let mut shown = 0;
        for u in fg.users.iter().filter(|u| *u.delta_rank.last().unwrap() <= 0.0) {
            if shown >= 3 { break; }
            shown += 1;
            let idx = ds.catalog.index_of(&u.item).unwrap();
            println!("--- user {} item {} ({}) orig {:?} after {:?}", u.user, u.item, ds.catalog.item(idx).title, u.original_rank, u.after_rank);
            println!("{}", prep.corpus.get(&u.user).unwrap().text);
            let e = prep.test.iter().find(|e| e.user == u.user).unwrap();
            let ed = tears::summaries::llm::finegrained_edit(&prep.provider, prep.corpus.get(&u.user).unwrap(), &ds.catalog.item(idx).title, cfg.item_type, &Default::default(), 7)?;
            println!(">>> edited:\n{}", ed.text);
            let _ = e;
        }
    }
    let gs = bench::top_genres(ds, 10);
    let g = bench::run_guided(&w, &gs, &[GuidanceMode::Positive, GuidanceMode::Negative], cfg.item_type)?;
    for r in &g.rows {
        println!("  guided {} {:?}: {:.4} -> {:.4}", r.genre, r.mode, r.original.mean, r.guided.mean);
    }
    let (gm, grep, profiles) = pipeline::fit_genre_model(&cfg, &prep, bb)?;
    println!("gers best {} score {:.4}", grep.best_epoch, grep.best_score);
    for h in grep.history.iter().step_by(env("EVERY", 5)) {
        println!("  gers epoch {} val {:?}", h.epoch, h.val_by_alpha);
    }
    let gw = Workload { model: &gm, ..w };
    for mode in [GersFlipMode::Swap, GersFlipMode::OneHotUpperBound] {
        let r = bench::run_gers_flip(&gw, &profiles, mode, &[1.0])?;
        let r = &r.rows[0];
        println!("  gers {mode:?}: up {:+.4} ({:.2}) down {:+.4} ({:.2})", r.delta_up.mean, r.up_correct, r.delta_down.mean, r.down_correct);
    }
    if env("TOP3", 0) == 1 {
        let reduced: std::collections::BTreeMap<String, tears::models::GenreProfile> = profiles.iter().map(|(u, p)| {
            let mut idx: Vec<usize> = (0..p.len()).collect();
            idx.sort_by(|&a, &b| p.weights()[b].total_cmp(&p.weights()[a]));
            let mut w = vec![0.0; p.len()];
            for &g in &idx[..3] { w[g] = 1.0 / 3.0; }
            (u.clone(), tears::models::GenreProfile::from_weights(w).unwrap())
        }).collect();
        let m = pipeline::init_genre_model(&cfg, &prep, gm.backbone.clone().unwrap())?;
        let (_, r) = tears::training::train(m, &prep.train, &prep.val, &reduced, &cfg.train)?;
        for h in r.history.iter().step_by(env("EVERY", 5)) {
            println!("  top3 epoch {} val {:?}", h.epoch, h.val_by_alpha);
        }
    }
    println!("total {:?}", t.elapsed());
    Ok(())
}
