//! User summaries: prompt construction, LLM clients, the offline
//! synthesizer, corpus persistence and text statistics.

pub mod llm;
pub mod prompts;
mod stats;
mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use prompts::{
    build_finegrained_prompts, build_flip_prompts, build_generation_prompt, guidance_phrase,
    parse_flip_identification, FlipPromptPlan, HistoryEntry, PromptBundle,
};
pub use stats::{bleu4, corpus_stats, corpus_stats_with, word_edit_distance, SummaryStats};
pub use synth::{
    flip_genres_in_text, synthesize_offline, validate_four_block, SynthesisInput,
};

use crate::dataio::UserId;
use crate::{Result, TearsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemType {
    #[default]
    Movie,
    Book,
}

impl ItemType {
    pub fn singular(self) -> &'static str {
        match self {
            ItemType::Movie => "movie",
            ItemType::Book => "book",
        }
    }

    pub fn plural(self) -> &'static str {
        match self {
            ItemType::Movie => "movies",
            ItemType::Book => "books",
        }
    }
}

/// Where a summary came from. Serialized as `llm:<model>`, `synthetic` or
/// `human-edit`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SummarySource {
    Llm(String),
    Synthetic,
    HumanEdit,
}

impl fmt::Display for SummarySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SummarySource::Llm(m) => write!(f, "llm:{m}"),
            SummarySource::Synthetic => f.write_str("synthetic"),
            SummarySource::HumanEdit => f.write_str("human-edit"),
        }
    }
}

impl From<SummarySource> for String {
    fn from(s: SummarySource) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for SummarySource {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        match s.as_str() {
            "synthetic" => Ok(SummarySource::Synthetic),
            "human-edit" => Ok(SummarySource::HumanEdit),
            _ => match s.strip_prefix("llm:") {
                Some(m) if !m.is_empty() => Ok(SummarySource::Llm(m.to_string())),
                _ => Err(format!("unknown summary source {s:?}")),
            },
        }
    }
}

/// A natural-language user profile with provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSummary {
    pub user: UserId,
    pub text: String,
    pub source: SummarySource,
    pub seed: u64,
    /// Id of the summary this one edits.
    #[serde(default)]
    pub parent: Option<String>,
}

impl UserSummary {
    pub fn new(user: impl Into<UserId>, text: impl Into<String>, source: SummarySource, seed: u64) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(TearsError::invalid("summary text is empty"));
        }
        Ok(UserSummary {
            user: user.into(),
            text,
            source,
            seed,
            parent: None,
        })
    }

    /// A new summary editing this one.
    pub fn edit(&self, text: impl Into<String>, source: SummarySource, seed: u64) -> Result<Self> {
        let mut s = UserSummary::new(self.user.clone(), text, source, seed)?;
        s.parent = Some(self.id());
        Ok(s)
    }

    /// Content hash over every field; stable across runs.
    pub fn id(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("summary serializes");
        crate::util::sha256_hex(&bytes)[..16].to_string()
    }

    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

/// One summary per user; later records for the same user replace earlier ones.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryCorpus {
    by_user: BTreeMap<UserId, UserSummary>,
}

impl SummaryCorpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, s: UserSummary) {
        self.by_user.insert(s.user.clone(), s);
    }

    pub fn get(&self, user: &str) -> Option<&UserSummary> {
        self.by_user.get(user)
    }

    pub fn len(&self) -> usize {
        self.by_user.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_user.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &UserSummary> {
        self.by_user.values()
    }

    pub fn summaries(&self) -> Vec<UserSummary> {
        self.by_user.values().cloned().collect()
    }

    pub fn content_hash(&self) -> String {
        let mut h = Vec::new();
        for s in self.by_user.values() {
            h.extend_from_slice(s.id().as_bytes());
        }
        crate::util::sha256_hex(&h)
    }

    /// Line-delimited JSON records `{user, text, source, seed, parent}`.
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path).map_err(|e| TearsError::io(path, e))?;
        let mut w = BufWriter::new(f);
        for s in self.by_user.values() {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n").map_err(|e| TearsError::io(path, e))?;
        }
        w.flush().map_err(|e| TearsError::io(path, e))
    }

    pub fn load_jsonl(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| TearsError::io(path, e))?;
        let mut corpus = SummaryCorpus::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| TearsError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let s: UserSummary = serde_json::from_str(&line).map_err(|e| TearsError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if s.text.trim().is_empty() {
                return Err(TearsError::Parse {
                    line: i + 1,
                    message: "empty summary text".into(),
                });
            }
            corpus.insert(s);
        }
        Ok(corpus)
    }

    /// A JSON object mapping user ids to summary text, as published
    /// alongside some datasets. Entries get `source` and `seed` as given.
    pub fn load_json_map(path: &Path, source: SummarySource, seed: u64) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| TearsError::io(path, e))?;
        let map: BTreeMap<String, String> = serde_json::from_str(&raw)?;
        let mut corpus = SummaryCorpus::new();
        for (user, text) in map {
            corpus.insert(UserSummary::new(user, text, source.clone(), seed)?);
        }
        Ok(corpus)
    }

    /// Loads `.jsonl` records or, for any other extension, a JSON map.
    pub fn load_any(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") => Self::load_jsonl(path),
            _ => Self::load_json_map(path, SummarySource::Llm("published".into()), 0),
        }
    }
}

impl FromIterator<UserSummary> for SummaryCorpus {
    fn from_iter<T: IntoIterator<Item = UserSummary>>(iter: T) -> Self {
        let mut c = SummaryCorpus::new();
        for s in iter {
            c.insert(s);
        }
        c
    }
}
