//! End-to-end experiment wiring: splits, summaries, backbone and the
//! text-conditioned model, all derived from one configuration and seed.
//! [`prepare`] runs the steps over a synthetic corpus; the `*_on` variants
//! accept any dataset.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataio::synthetic::{self, SyntheticConfig, SyntheticData};
use crate::dataio::{binarize, build_examples, make_splits, Dataset, Role, SplitPlan, UserExample, UserId};
use crate::models::{train_backbone, Backbone, BackboneSpec, BackboneTrainConfig, BackboneTrainReport};
use crate::models::{gers_encode, GaussianHead, GenreEncoder, GenreProfile, SideEncoder, TextEncoder, TextEncoderSpec};
use crate::models::{Fusion, TearsModel};
use crate::summaries::llm::{
    flip_corpus, generate_corpus, generation_jobs, CompletionProvider, CorpusRun, FlipEdit, LlmConfig, OfflineProvider,
};
use crate::summaries::{ItemType, SummaryCorpus};
use crate::training::{train, TrainConfig, TrainReport};
use crate::util::{derive_seed, rng};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub synthetic: SyntheticConfig,
    /// Ratings at or above this value are positives.
    pub threshold: u8,
    pub n_val: usize,
    pub n_test: usize,
    /// Users with more ratings keep this many oldest ones as input.
    pub max_input: usize,
    pub backbone: BackboneSpec,
    pub backbone_train: BackboneTrainConfig,
    pub text: TextEncoderSpec,
    pub side_hidden: Vec<usize>,
    pub fusion: Fusion,
    pub train: TrainConfig,
    pub item_type: ItemType,
    /// Word budget of generated summaries.
    pub summary_budget: usize,
    pub llm: LlmConfig,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            synthetic: SyntheticConfig::default(),
            threshold: 4,
            n_val: 50,
            n_test: 100,
            max_input: 60,
            backbone: BackboneSpec::multi_vae(32, vec![256]),
            backbone_train: BackboneTrainConfig::default(),
            text: TextEncoderSpec::default(),
            side_hidden: vec![256],
            fusion: Fusion::Mean,
            train: TrainConfig { lr: 3e-3, weight_decay: 1.0, dropout: 0.5, ..TrainConfig::default() },
            item_type: ItemType::Movie,
            summary_budget: 200,
            llm: LlmConfig::default(),
            seed: 0,
        }
    }
}

/// Data, splits and summaries ready for training.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub data: SyntheticData,
    pub plan: SplitPlan,
    pub train: Vec<UserExample>,
    pub val: Vec<UserExample>,
    pub test: Vec<UserExample>,
    pub corpus: SummaryCorpus,
    pub provider: OfflineProvider,
    /// Users whose summary generation failed.
    pub failures: Vec<(UserId, String)>,
}

impl Prepared {
    pub fn dataset(&self) -> &Dataset {
        &self.data.dataset
    }

    /// Genre profiles computed from each user's input positives.
    pub fn genre_profiles(&self) -> Result<BTreeMap<UserId, GenreProfile>> {
        let all: Vec<UserExample> = self.train.iter().chain(&self.val).chain(&self.test).cloned().collect();
        genre_profiles(self.dataset(), &all)
    }

    /// Large-scope flips of every test user's summary.
    pub fn test_flips(&self, seed: u64) -> (BTreeMap<UserId, FlipEdit>, Vec<(UserId, String)>) {
        let users: Vec<UserId> = self.test.iter().map(|e| e.user.clone()).collect();
        let vocab = self.dataset().catalog.genre_vocabulary().to_vec();
        flip_corpus(&self.provider, &self.corpus, &users, &vocab, &LlmConfig::default(), seed)
    }
}

/// A dataset's split plan and the examples of each role.
#[derive(Debug, Clone)]
pub struct Splits {
    pub plan: SplitPlan,
    pub train: Vec<UserExample>,
    pub val: Vec<UserExample>,
    pub test: Vec<UserExample>,
}

impl Splits {
    /// Every example, training users first.
    pub fn all(&self) -> Vec<UserExample> {
        self.train.iter().chain(&self.val).chain(&self.test).cloned().collect()
    }
}

/// Splits users into train/validation/test and builds their examples.
pub fn split(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Splits> {
    let plan = make_splits(&ds.interactions, cfg.n_val, cfg.n_test, cfg.max_input, derive_seed(cfg.seed, "split"))?;
    let train = build_examples(ds, &plan, Role::Train)?;
    let val = build_examples(ds, &plan, Role::Validation)?;
    let test = build_examples(ds, &plan, Role::Test)?;
    Ok(Splits { plan, train, val, test })
}

/// One summary per example, prompted with the example's input items.
pub fn summarize(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    examples: &[UserExample],
    provider: &dyn CompletionProvider,
) -> Result<CorpusRun> {
    let jobs = generation_jobs(ds, examples, cfg.item_type, cfg.summary_budget, derive_seed(cfg.seed, "summaries"))?;
    Ok(generate_corpus(provider, &jobs, &cfg.llm))
}

/// Generates the corpus, splits it and writes one offline summary per user.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let mut syn = cfg.synthetic.clone();
    syn.seed = derive_seed(cfg.seed, "synthetic");
    let mut data = synthetic::generate(&syn)?;
    data.dataset.interactions = binarize(&data.dataset.interactions, cfg.threshold)?;
    let ds = &data.dataset;
    let splits = split(cfg, ds)?;
    let provider = OfflineProvider::new(ds.catalog.genre_vocabulary().to_vec(), cfg.item_type);
    let run = summarize(cfg, ds, &splits.all(), &provider)?;
    let Splits { plan, train, val, test } = splits;
    Ok(Prepared { plan, train, val, test, corpus: run.corpus, provider, failures: run.failures, data })
}

/// Trains the rating backbone on the training users.
pub fn fit_backbone(cfg: &ExperimentConfig, prep: &Prepared) -> Result<(Backbone, BackboneTrainReport)> {
    fit_backbone_on(cfg, prep.dataset().num_items(), &prep.train, &prep.val)
}

/// Trains the rating backbone on `train`, selecting on `val`.
pub fn fit_backbone_on(
    cfg: &ExperimentConfig,
    n_items: usize,
    train: &[UserExample],
    val: &[UserExample],
) -> Result<(Backbone, BackboneTrainReport)> {
    let mut bt = cfg.backbone_train.clone();
    bt.seed = derive_seed(cfg.seed, "backbone");
    train_backbone(cfg.backbone.clone(), n_items, train, val, &bt)
}

/// A freshly initialized text-conditioned model over `backbone`.
pub fn init_text_model(cfg: &ExperimentConfig, prep: &Prepared, backbone: Backbone) -> Result<TearsModel> {
    init_text_model_for(cfg, prep.dataset(), backbone)
}

/// A freshly initialized text-conditioned model for `ds` over `backbone`.
pub fn init_text_model_for(cfg: &ExperimentConfig, ds: &Dataset, backbone: Backbone) -> Result<TearsModel> {
    let mut r = rng(derive_seed(cfg.seed, "init"));
    let head = GaussianHead::plain(backbone.latent_dim());
    let enc = TextEncoder::with_embedder(
        crate::models::TokenEmbedder::hashed(&cfg.text, &mut r),
        &cfg.side_hidden,
        head,
        &mut r,
    );
    TearsModel::with_backbone(
        backbone,
        SideEncoder::Text(enc),
        cfg.fusion,
        ds.catalog.content_hash(),
        ds.catalog.genre_vocabulary().to_vec(),
        &mut r,
    )
}

/// Each example's genre profile, computed from its input positives.
pub fn genre_profiles(ds: &Dataset, examples: &[UserExample]) -> Result<BTreeMap<UserId, GenreProfile>> {
    let mut out = BTreeMap::new();
    for e in examples {
        let positives: Vec<String> = e
            .input
            .iter()
            .filter(|(_, r)| ds.interactions.is_positive(*r as u8))
            .map(|(i, _)| ds.catalog.item(*i).id.clone())
            .collect();
        out.insert(e.user.clone(), gers_encode(&positives, &ds.catalog)?);
    }
    Ok(out)
}

/// A freshly initialized genre-profile model over `backbone`.
pub fn init_genre_model(cfg: &ExperimentConfig, prep: &Prepared, backbone: Backbone) -> Result<TearsModel> {
    init_genre_model_for(cfg, prep.dataset(), backbone)
}

/// A freshly initialized genre-profile model for `ds` over `backbone`.
pub fn init_genre_model_for(cfg: &ExperimentConfig, ds: &Dataset, backbone: Backbone) -> Result<TearsModel> {
    let mut r = rng(derive_seed(cfg.seed, "init-genre"));
    let head = GaussianHead::plain(backbone.latent_dim());
    let enc = GenreEncoder::new(ds.catalog.num_genres(), &cfg.side_hidden, head, &mut r);
    TearsModel::with_backbone(
        backbone,
        SideEncoder::Genre(enc),
        cfg.fusion,
        ds.catalog.content_hash(),
        ds.catalog.genre_vocabulary().to_vec(),
        &mut r,
    )
}

/// Trains a text-conditioned model on the offline summaries.
pub fn fit_text_model(cfg: &ExperimentConfig, prep: &Prepared, backbone: Backbone) -> Result<(TearsModel, TrainReport)> {
    fit_text_model_on(cfg, prep.dataset(), &prep.train, &prep.val, &prep.corpus, backbone)
}

/// Trains a text-conditioned model for `ds` on `corpus`.
pub fn fit_text_model_on(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    train_users: &[UserExample],
    val: &[UserExample],
    corpus: &SummaryCorpus,
    backbone: Backbone,
) -> Result<(TearsModel, TrainReport)> {
    let model = init_text_model_for(cfg, ds, backbone)?;
    let mut tc = cfg.train.clone();
    tc.seed = derive_seed(cfg.seed, "train");
    train(model, train_users, val, corpus, &tc)
}

/// Trains a genre-profile model on profiles from the input positives.
pub fn fit_genre_model(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    backbone: Backbone,
) -> Result<(TearsModel, TrainReport, BTreeMap<UserId, GenreProfile>)> {
    let profiles = prep.genre_profiles()?;
    let (m, rep) = fit_genre_model_on(cfg, prep.dataset(), &prep.train, &prep.val, &profiles, backbone)?;
    Ok((m, rep, profiles))
}

/// Trains a genre-profile model for `ds` on `profiles`.
pub fn fit_genre_model_on(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    train_users: &[UserExample],
    val: &[UserExample],
    profiles: &BTreeMap<UserId, GenreProfile>,
    backbone: Backbone,
) -> Result<(TearsModel, TrainReport)> {
    let model = init_genre_model_for(cfg, ds, backbone)?;
    let mut tc = cfg.train.clone();
    tc.seed = derive_seed(cfg.seed, "train-genre");
    train(model, train_users, val, profiles, &tc)
}
