//! Request handling independent of HTTP: recommendations, edit previews
//! with rank diffs, and summary commits. The model is read-only here.

use std::collections::{BTreeSet, HashMap};

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use tears::dataio::{Dataset, UserExample, UserId};
use tears::metrics::ndcg_genre_at_k;
use tears::models::{SideInput, TearsCheckpoint, TearsModel};
use tears::ranking::{self, Guidance, GuidanceMode, MixSpec, RankRecord, RankedList, UserInput};

use crate::config::ServerConfig;
use crate::store::{StoreError, SummaryStore, SummaryVersion};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Invalid(String),
    /// Retry after re-reading the active summary.
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Internal(String),
}

impl From<StoreError> for ServiceError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownUser(_) => ServiceError::NotFound(e.to_string()),
            StoreError::Invalid(_) => ServiceError::Invalid(e.to_string()),
            StoreError::Conflict { .. } => ServiceError::Conflict(e.to_string()),
            StoreError::Io(_) => ServiceError::Internal(e.to_string()),
        }
    }
}

impl From<tears::TearsError> for ServiceError {
    fn from(e: tears::TearsError) -> Self {
        use tears::TearsError as E;
        match e {
            E::InvalidArgument(_) | E::UnknownGenre(_) => ServiceError::Invalid(e.to_string()),
            E::MissingSummary(_) | E::UnknownItem(_) | E::UnknownUser(_) => ServiceError::NotFound(e.to_string()),
            other => ServiceError::Internal(other.to_string()),
        }
    }
}

pub type ServiceResult<T> = Result<T, ServiceError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    /// SHA-256 of the checkpoint file.
    pub checkpoint: String,
    pub catalog: String,
    pub users: usize,
    pub items: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryView {
    pub user: UserId,
    pub active: SummaryVersion,
    /// Active version back to the root.
    pub lineage: Vec<SummaryVersion>,
    pub versions: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RecommendQuery {
    pub alpha: Option<f64>,
    pub k: Option<usize>,
    /// A steering phrase such as "More comedy movies".
    pub guidance: Option<String>,
    /// Overrides the mode inferred from the phrase's first word.
    pub mode: Option<GuidanceMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendations {
    pub user: UserId,
    pub alpha: f64,
    pub k: usize,
    pub guidance: Option<Guidance>,
    pub summary_id: String,
    pub items: Vec<RankRecord>,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviewRequest {
    pub text: String,
    pub alpha: Option<f64>,
    pub k: Option<usize>,
}

/// Rank change of one item between the active and draft summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemDiff {
    pub item: String,
    pub title: String,
    /// 1-based ranks among unseen items.
    pub rank_before: usize,
    pub rank_after: usize,
    /// `rank_before - rank_after`; positive means the item moved up.
    pub delta: i64,
}

/// Genre-wise NDCG@k of the two top-k lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenreDiff {
    pub genre: String,
    pub before: f64,
    pub after: f64,
    /// `before - after`; negative means the draft surfaces more of the genre.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preview {
    pub user: UserId,
    pub alpha: f64,
    pub k: usize,
    pub active_id: String,
    /// Ranked list under the active summary.
    pub before: Vec<RankRecord>,
    /// Ranked list under the draft.
    pub after: Vec<RankRecord>,
    /// Every item in either top-k list, ordered by draft rank.
    pub items: Vec<ItemDiff>,
    pub genres: Vec<GenreDiff>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitRequest {
    pub text: String,
    /// Id of the version the draft was based on; enables conflict checks.
    #[serde(default)]
    pub parent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivateRequest {
    pub version: usize,
}

pub struct Service {
    model: TearsModel,
    dataset: Dataset,
    users: HashMap<UserId, UserExample>,
    store: SummaryStore,
    checkpoint_hash: String,
    cfg: ServerConfig,
}

impl Service {
    /// Refuses to start when the checkpoint was trained on another catalog
    /// or the side encoder does not read text.
    pub fn new(
        checkpoint: TearsCheckpoint,
        checkpoint_hash: String,
        dataset: Dataset,
        examples: Vec<UserExample>,
        store: SummaryStore,
        cfg: ServerConfig,
    ) -> ServiceResult<Self> {
        let model = checkpoint.model;
        let catalog = dataset.catalog.content_hash();
        if model.catalog_hash != catalog {
            return Err(ServiceError::Invalid(format!(
                "checkpoint catalog hash {} does not match catalog {catalog}",
                model.catalog_hash
            )));
        }
        if model.side.kind() != "text" {
            return Err(ServiceError::Invalid(format!("the server needs a text model, not {}", model.side.kind())));
        }
        if !(0.0..=1.0).contains(&cfg.default_alpha) || cfg.default_k == 0 || cfg.default_k > cfg.max_k {
            return Err(ServiceError::Invalid("server defaults out of range".into()));
        }
        let users = examples.into_iter().map(|e| (e.user.clone(), e)).collect();
        Ok(Service { model, dataset, users, store, checkpoint_hash, cfg })
    }

    pub fn model(&self) -> &TearsModel {
        &self.model
    }

    pub fn store(&self) -> &SummaryStore {
        &self.store
    }

    pub fn health(&self) -> Health {
        Health {
            status: "ok".into(),
            checkpoint: self.checkpoint_hash.clone(),
            catalog: self.model.catalog_hash.clone(),
            users: self.users.len(),
            items: self.dataset.num_items(),
        }
    }

    pub fn genres(&self) -> Vec<String> {
        self.dataset.catalog.genre_vocabulary().to_vec()
    }

    fn user(&self, id: &str) -> ServiceResult<&UserExample> {
        self.users.get(id).ok_or_else(|| ServiceError::NotFound(format!("unknown user {id}")))
    }

    fn alpha(&self, alpha: Option<f64>) -> ServiceResult<f64> {
        let a = alpha.unwrap_or(self.cfg.default_alpha);
        if !(0.0..=1.0).contains(&a) {
            return Err(ServiceError::Invalid(format!("alpha {a} outside [0, 1]")));
        }
        Ok(a)
    }

    fn k(&self, k: Option<usize>) -> ServiceResult<usize> {
        let k = k.unwrap_or(self.cfg.default_k);
        if k == 0 || k > self.cfg.max_k {
            return Err(ServiceError::Invalid(format!("k must lie in 1..={}", self.cfg.max_k)));
        }
        Ok(k)
    }

    fn ratings(&self, e: &UserExample) -> Array1<f64> {
        let mut row = Array1::zeros(self.dataset.num_items());
        for &(i, r) in &e.input {
            row[i] = r;
        }
        row
    }

    fn scores(&self, e: &UserExample, text: &str, spec: &MixSpec) -> ServiceResult<Array1<f64>> {
        let row = self.ratings(e);
        let input = UserInput { ratings: row.view(), seen: &e.seen, side: Some(SideInput::Text(text)) };
        Ok(ranking::score_items(&self.model, &input, spec)?)
    }

    pub fn summary(&self, user: &str) -> ServiceResult<SummaryView> {
        self.user(user)?;
        Ok(SummaryView {
            user: user.to_string(),
            active: self.store.active(user)?,
            lineage: self.store.lineage(user)?,
            versions: self.store.history(user)?.len(),
        })
    }

    pub fn commit(&self, user: &str, req: &CommitRequest) -> ServiceResult<SummaryView> {
        self.user(user)?;
        self.store.commit(user, &req.text, req.parent.as_deref())?;
        self.summary(user)
    }

    pub fn activate(&self, user: &str, req: &ActivateRequest) -> ServiceResult<SummaryView> {
        self.user(user)?;
        self.store.activate(user, req.version)?;
        self.summary(user)
    }

    pub fn recommend(&self, user: &str, q: &RecommendQuery) -> ServiceResult<Recommendations> {
        let e = self.user(user)?;
        let alpha = self.alpha(q.alpha)?;
        let k = self.k(q.k)?;
        let guidance = match &q.guidance {
            Some(text) => Some(match q.mode {
                Some(mode) => Guidance::new(text.clone(), mode)?,
                None => Guidance::parse(text.clone())?,
            }),
            None => None,
        };
        let spec = match &guidance {
            Some(g) => MixSpec { alpha, guidance: Some(g.clone()) },
            None => MixSpec::alpha(alpha)?,
        };
        let active = self.store.active(user)?;
        let scores = self.scores(e, &active.text, &spec)?;
        let list = RankedList::from_scores(scores.view(), &e.seen, k)?;
        Ok(Recommendations {
            user: user.to_string(),
            alpha,
            k,
            guidance,
            summary_id: active.id,
            items: list.records(&self.dataset.catalog),
            truncated: list.truncated,
        })
    }

    /// Rankings under the active summary and under `req.text`, with
    /// per-item and per-genre differences. Nothing is stored.
    pub fn preview(&self, user: &str, req: &PreviewRequest) -> ServiceResult<Preview> {
        let e = self.user(user)?;
        if req.text.trim().is_empty() {
            return Err(ServiceError::Invalid("draft text is empty".into()));
        }
        let alpha = self.alpha(req.alpha)?;
        let k = self.k(req.k)?;
        let spec = MixSpec::alpha(alpha)?;
        let active = self.store.active(user)?;
        let s0 = self.scores(e, &active.text, &spec)?;
        let s1 = if req.text == active.text { s0.clone() } else { self.scores(e, &req.text, &spec)? };
        let (l0, l1) = (RankedList::from_scores(s0.view(), &e.seen, k)?, RankedList::from_scores(s1.view(), &e.seen, k)?);

        let rank_map = |order: Vec<usize>| -> HashMap<usize, usize> { order.into_iter().enumerate().map(|(r, i)| (i, r + 1)).collect() };
        let r0 = rank_map(ranking::full_ranking(s0.view(), &e.seen));
        let r1 = rank_map(ranking::full_ranking(s1.view(), &e.seen));
        let shown: BTreeSet<usize> = l0.indices().into_iter().chain(l1.indices()).collect();
        let catalog = &self.dataset.catalog;
        let mut items: Vec<ItemDiff> = shown
            .into_iter()
            .map(|i| ItemDiff {
                item: catalog.item(i).id.clone(),
                title: catalog.item(i).title.clone(),
                rank_before: r0[&i],
                rank_after: r1[&i],
                delta: r0[&i] as i64 - r1[&i] as i64,
            })
            .collect();
        items.sort_by_key(|d| d.rank_after);

        let (top0, top1) = (l0.indices(), l1.indices());
        let genres = (0..catalog.num_genres())
            .map(|g| -> ServiceResult<GenreDiff> {
                let before = ndcg_genre_at_k(&top0, g, catalog, &e.seen, k)?;
                let after = ndcg_genre_at_k(&top1, g, catalog, &e.seen, k)?;
                Ok(GenreDiff { genre: catalog.genre_name(g).to_string(), before, after, delta: before - after })
            })
            .collect::<ServiceResult<Vec<_>>>()?;
        Ok(Preview {
            user: user.to_string(),
            alpha,
            k,
            active_id: active.id,
            before: l0.records(catalog),
            after: l1.records(catalog),
            items,
            genres,
        })
    }
}
