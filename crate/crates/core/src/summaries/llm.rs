//! Provider-agnostic completion client plus the generation and edit
//! pipelines built on it.
//!
//! Providers:
//! - [`OfflineProvider`]: deterministic, network-free; answers the shipped
//!   prompt templates by parsing them and calling the offline synthesizer.
//! - [`OpenAiProvider`]: any OpenAI-compatible chat-completions endpoint.
//! - [`CannedProvider`]: replays recorded completions byte-for-byte.
//! - [`RecordingProvider`]: wraps another provider and records every exchange
//!   in the canned format.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use super::prompts::{
    build_finegrained_prompts, build_flip_prompts, build_generation_prompt, parse_flip_identification, HistoryEntry,
    PromptBundle,
};
use super::synth::{find_word, flip_genres_in_text, synthesize_offline, SynthesisInput};
use super::{ItemType, SummaryCorpus, SummarySource, UserSummary};
use crate::dataio::{Dataset, UserExample, UserId};
use crate::models::GenreProfile;
use crate::util::{derive_seed, rng, sha256_hex};
use crate::{Result, TearsError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(c: impl Into<String>) -> Self {
        ChatMessage { role: "system".into(), content: c.into() }
    }

    pub fn user(c: impl Into<String>) -> Self {
        ChatMessage { role: "user".into(), content: c.into() }
    }

    pub fn assistant(c: impl Into<String>) -> Self {
        ChatMessage { role: "assistant".into(), content: c.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub seed: u64,
}

impl CompletionRequest {
    /// Stable key over the full request, used to store and replay completions.
    pub fn key(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("request serializes"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProviderError {
    pub message: String,
    /// Transport-level failures worth retrying.
    pub retryable: bool,
}

impl ProviderError {
    pub fn fatal(m: impl Into<String>) -> Self {
        ProviderError { message: m.into(), retryable: false }
    }

    pub fn transient(m: impl Into<String>) -> Self {
        ProviderError { message: m.into(), retryable: true }
    }
}

pub trait CompletionProvider: Send + Sync {
    fn name(&self) -> String;

    fn complete(&self, req: &CompletionRequest) -> std::result::Result<String, ProviderError>;

    /// Provenance recorded on summaries produced through this provider.
    fn source(&self) -> SummarySource {
        SummarySource::Llm(self.name())
    }
}

impl<P: CompletionProvider + ?Sized> CompletionProvider for Box<P> {
    fn name(&self) -> String {
        (**self).name()
    }

    fn complete(&self, req: &CompletionRequest) -> std::result::Result<String, ProviderError> {
        (**self).complete(req)
    }

    fn source(&self) -> SummarySource {
        (**self).source()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub model: String,
    pub temperature: f64,
    pub max_retries: usize,
    pub retry_backoff_ms: u64,
    /// Upper bound on concurrent requests during corpus generation.
    pub in_flight: usize,
    pub timeout_secs: u64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            model: "offline".into(),
            temperature: 0.0,
            max_retries: 3,
            retry_backoff_ms: 250,
            in_flight: 4,
            timeout_secs: 120,
        }
    }
}

/// Sends `req`, retrying transient failures up to `cfg.max_retries` times.
pub fn complete_with_retries(provider: &dyn CompletionProvider, req: &CompletionRequest, cfg: &LlmConfig) -> Result<String> {
    let mut attempts = 0;
    loop {
        attempts += 1;
        match provider.complete(req) {
            Ok(text) if text.trim().is_empty() => {
                return Err(TearsError::Generation { attempts, message: "empty completion".into() });
            }
            Ok(text) => return Ok(text),
            Err(e) if e.retryable && attempts <= cfg.max_retries => {
                log::warn!("{} attempt {attempts} failed: {}", provider.name(), e.message);
                if cfg.retry_backoff_ms > 0 {
                    std::thread::sleep(Duration::from_millis(cfg.retry_backoff_ms * attempts as u64));
                }
            }
            Err(e) => return Err(TearsError::Generation { attempts, message: e.message }),
        }
    }
}

/// A running chat: each `ask` appends the user turn and the reply.
pub struct Conversation<'a> {
    provider: &'a dyn CompletionProvider,
    cfg: &'a LlmConfig,
    seed: u64,
    messages: Vec<ChatMessage>,
}

impl<'a> Conversation<'a> {
    pub fn new(provider: &'a dyn CompletionProvider, cfg: &'a LlmConfig, system: &str, seed: u64) -> Self {
        let messages = if system.is_empty() { Vec::new() } else { vec![ChatMessage::system(system)] };
        Conversation { provider, cfg, seed, messages }
    }

    pub fn ask(&mut self, text: &str) -> Result<String> {
        self.messages.push(ChatMessage::user(text));
        let req = CompletionRequest {
            model: self.cfg.model.clone(),
            messages: self.messages.clone(),
            temperature: self.cfg.temperature,
            seed: self.seed,
        };
        let reply = complete_with_retries(self.provider, &req, self.cfg)?;
        self.messages.push(ChatMessage::assistant(reply.clone()));
        Ok(reply)
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }
}

/// Runs every turn of a bundle in order and returns the replies.
pub fn run_bundle(provider: &dyn CompletionProvider, bundle: &PromptBundle, cfg: &LlmConfig, seed: u64) -> Result<Vec<String>> {
    let mut conv = Conversation::new(provider, cfg, &bundle.system, seed);
    bundle.user_turns.iter().map(|t| conv.ask(t)).collect()
}

/// The final reply of `bundle` as a summary with provenance.
pub fn generate_summary(
    user: &str,
    bundle: &PromptBundle,
    provider: &dyn CompletionProvider,
    cfg: &LlmConfig,
    seed: u64,
) -> Result<UserSummary> {
    let replies = run_bundle(provider, bundle, cfg, seed)?;
    let text = replies.last().map(|s| s.trim().to_string()).unwrap_or_default();
    UserSummary::new(user, text, provider.source(), seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipEdit {
    pub favorite: String,
    pub least_favorite: String,
    pub summary: UserSummary,
}

/// The two-step large-scope edit: identify the favorite and least favorite
/// genres, then rewrite the summary with the two exchanged.
pub fn flip_summary(
    provider: &dyn CompletionProvider,
    summary: &UserSummary,
    vocab: &[String],
    cfg: &LlmConfig,
    seed: u64,
) -> Result<FlipEdit> {
    let plan = build_flip_prompts(summary, vocab)?;
    let mut conv = Conversation::new(provider, cfg, &plan.identification.system, seed);
    let id_reply = conv.ask(&plan.identification.user_turns[0])?;
    let (favorite, least_favorite) = parse_flip_identification(&id_reply, vocab)?;
    let full = plan.with_edit(&favorite, &least_favorite)?;
    let edited = conv.ask(&full.user_turns[1])?;
    Ok(FlipEdit {
        summary: summary.edit(edited.trim(), provider.source(), seed)?,
        favorite,
        least_favorite,
    })
}

/// The two-step fine-grained edit toward a target item's themes.
pub fn finegrained_edit(
    provider: &dyn CompletionProvider,
    summary: &UserSummary,
    target_title: &str,
    item_type: ItemType,
    cfg: &LlmConfig,
    seed: u64,
) -> Result<UserSummary> {
    let bundle = build_finegrained_prompts(summary, target_title, item_type)?;
    let replies = run_bundle(provider, &bundle, cfg, seed)?;
    let text = replies.last().map(|s| s.trim().to_string()).unwrap_or_default();
    summary.edit(text, provider.source(), seed)
}

/// History lines for `items` (oldest first) of one user.
pub fn history_for(dataset: &Dataset, user: usize, items: &[usize]) -> Vec<HistoryEntry> {
    items
        .iter()
        .filter_map(|&i| {
            dataset.interactions.rating_of(user, i).map(|r| HistoryEntry {
                title: dataset.catalog.item(i).title.clone(),
                rating: r,
                genres: dataset.catalog.genre_label(i),
            })
        })
        .collect()
}

/// One generation job per example, prompting with the user's input items
/// (oldest first) so summaries never see held-out interactions.
pub fn generation_jobs(
    dataset: &Dataset,
    examples: &[UserExample],
    item_type: ItemType,
    budget: usize,
    seed: u64,
) -> Result<Vec<GenerationJob>> {
    examples
        .iter()
        .map(|e| {
            let history = history_for(dataset, e.index, &e.seen);
            Ok(GenerationJob {
                user: e.user.clone(),
                bundle: build_generation_prompt(&history, item_type, budget)?,
                seed: derive_seed(seed, &e.user),
            })
        })
        .collect()
}

/// Large-scope flips of every listed user's summary; users without a
/// summary or whose flip fails are reported, not fatal.
pub fn flip_corpus(
    provider: &dyn CompletionProvider,
    corpus: &SummaryCorpus,
    users: &[UserId],
    vocab: &[String],
    cfg: &LlmConfig,
    seed: u64,
) -> (BTreeMap<UserId, FlipEdit>, Vec<(UserId, String)>) {
    let run = |u: &UserId| -> Result<FlipEdit> {
        let s = corpus.get(u).ok_or_else(|| TearsError::MissingSummary(u.clone()))?;
        flip_summary(provider, s, vocab, cfg, derive_seed(seed, u))
    };
    let results = run_capped(cfg.in_flight, users, run);
    let mut edits = BTreeMap::new();
    let mut failures = Vec::new();
    for (u, r) in users.iter().zip(results) {
        match r {
            Ok(e) => {
                edits.insert(u.clone(), e);
            }
            Err(e) => failures.push((u.clone(), e.to_string())),
        }
    }
    (edits, failures)
}

#[derive(Debug, Clone)]
pub struct GenerationJob {
    pub user: UserId,
    pub bundle: PromptBundle,
    pub seed: u64,
}

#[derive(Debug, Clone, Default)]
pub struct CorpusRun {
    pub corpus: SummaryCorpus,
    /// Users whose generation failed, with the error message.
    pub failures: Vec<(UserId, String)>,
}

/// Generates one summary per job with at most `cfg.in_flight` requests
/// outstanding. Output does not depend on scheduling.
pub fn generate_corpus(provider: &dyn CompletionProvider, jobs: &[GenerationJob], cfg: &LlmConfig) -> CorpusRun {
    let run = |j: &GenerationJob| generate_summary(&j.user, &j.bundle, provider, cfg, j.seed);
    let results: Vec<Result<UserSummary>> = run_capped(cfg.in_flight, jobs, run);
    let mut out = CorpusRun::default();
    for (job, r) in jobs.iter().zip(results) {
        match r {
            Ok(s) => out.corpus.insert(s),
            Err(e) => {
                log::warn!("summary generation failed for user {}: {e}", job.user);
                out.failures.push((job.user.clone(), e.to_string()));
            }
        }
    }
    out
}

#[cfg(feature = "parallel")]
fn run_capped<T: Sync, R: Send>(cap: usize, items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    use rayon::prelude::*;
    match rayon::ThreadPoolBuilder::new().num_threads(cap.max(1)).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(e) => {
            log::warn!("could not build request pool ({e}); generating sequentially");
            items.iter().map(f).collect()
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn run_capped<T: Sync, R: Send>(_cap: usize, items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    items.iter().map(f).collect()
}

// ---------------------------------------------------------------------------
// Offline provider

const GENERATION_MARKER: &str = "The summary should have the following format";
const HISTORY_START: &str = "[Specific details of plot points the user does not enjoy but other users may].";
const HISTORY_END: &str = "\n\nDo not comment on the ratings or specific titles";
const IDENTIFY_MARKER: &str = "Please identify the user's most favorite genre";
const IDENTIFY_SUMMARY_START: &str = "Least Favorite: [genre] ";
const FLIP_EDIT_MARKER: &str = "write a new summary in the same style that reflects that ";
const THEMES_MARKER: &str = "into 5 words only, referring to plot points/themes: ";
const FG_EDIT_MARKER: &str = "edit those 5 words into this summary";
const FG_SUMMARY_START: &str = "Only output the summary. ";
const FG_SUMMARY_END: &str = " only output the new summary, making sure";

const NEGATIVE_CUES: &[&str] = &["dislike", "avoid", "does not enjoy", "do not enjoy", "lukewarm", "leave them cold", "not a fan"];
const STOPWORDS: &[&str] = &[
    "the", "and", "for", "with", "from", "into", "that", "this", "are", "was", "his", "her", "its", "our", "their", "who",
    "what", "when", "part", "one", "two", "three", "les", "der", "die", "das",
];
const THEME_FILLERS: &[&str] = &["tension", "stakes", "journey", "twists", "conflict"];

/// Network-free provider that answers the shipped templates. Generation
/// derives genre preferences from the rated history (sum of rating − 3 per
/// genre) and themes from title words, then writes a four-block summary.
#[derive(Debug, Clone)]
pub struct OfflineProvider {
    vocab: Vec<String>,
    item_type: ItemType,
}

impl OfflineProvider {
    pub fn new(vocab: Vec<String>, item_type: ItemType) -> Self {
        OfflineProvider { vocab, item_type }
    }

    fn generation(&self, prompt: &str, seed: u64) -> std::result::Result<String, ProviderError> {
        let start = prompt
            .find(HISTORY_START)
            .map(|p| p + HISTORY_START.len())
            .ok_or_else(|| ProviderError::fatal("generation prompt has no history section"))?;
        let end = prompt[start..].find(HISTORY_END).map_or(prompt.len(), |p| start + p);
        let mut scores = vec![0.0f64; self.vocab.len()];
        let mut liked: HashMap<String, f64> = HashMap::new();
        let mut disliked: HashMap<String, f64> = HashMap::new();
        for line in prompt[start..end].lines().map(str::trim).filter(|l| !l.is_empty()) {
            let mut parts = line.rsplitn(3, ", ");
            let (Some(genres), Some(rating), Some(title)) = (parts.next(), parts.next(), parts.next()) else {
                continue;
            };
            let Ok(rating) = rating.trim().parse::<f64>() else { continue };
            let dev = rating - 3.0;
            for g in genres.split('|') {
                if let Some(gi) = self.vocab.iter().position(|v| v.eq_ignore_ascii_case(g.trim())) {
                    scores[gi] += dev;
                }
            }
            for w in theme_words(title, &self.vocab) {
                if dev > 0.0 {
                    *liked.entry(w).or_default() += dev;
                } else if dev < 0.0 {
                    *disliked.entry(w).or_default() -= dev;
                }
            }
        }
        let prefs = GenreProfile::from_scores(&scores).map_err(|e| ProviderError::fatal(e.to_string()))?;
        let liked_themes = top_words(&liked, 4, &[]);
        let disliked_themes = top_words(&disliked, 2, &liked_themes);
        let input = SynthesisInput {
            vocab: &self.vocab,
            genre_prefs: &prefs,
            liked_themes: &liked_themes,
            disliked_themes: &disliked_themes,
            item_type: self.item_type,
        };
        synthesize_offline("offline", &input, seed)
            .map(|s| s.text)
            .map_err(|e| ProviderError::fatal(e.to_string()))
    }

    fn identify(&self, prompt: &str) -> std::result::Result<String, ProviderError> {
        let text = prompt
            .find(IDENTIFY_SUMMARY_START)
            .map_or(prompt, |p| &prompt[p + IDENTIFY_SUMMARY_START.len()..]);
        let first = |from: usize| -> Option<(usize, &String)> {
            self.vocab
                .iter()
                .filter_map(|g| find_word(&text[from..], g).first().map(|h| (h.0 + from, g)))
                .min_by_key(|h| h.0)
        };
        let (_, favorite) = first(0).ok_or_else(|| ProviderError::fatal("no genre named in summary"))?;
        let lower = text.to_ascii_lowercase();
        let cue = NEGATIVE_CUES.iter().filter_map(|c| lower.find(c)).min();
        let least = cue
            .and_then(|c| {
                let mut from = c;
                while let Some((pos, g)) = first(from) {
                    if g != favorite {
                        return Some(g);
                    }
                    from = pos + g.len();
                }
                None
            })
            .ok_or_else(|| ProviderError::fatal("no disliked genre named in summary"))?;
        Ok(format!("Favorite: {favorite}\nLeast Favorite: {least}"))
    }

    fn flip_edit(&self, messages: &[ChatMessage], prompt: &str) -> std::result::Result<String, ProviderError> {
        let rest = &prompt[prompt.find(FLIP_EDIT_MARKER).expect("dispatched on marker") + FLIP_EDIT_MARKER.len()..];
        let (favorite, rest) = rest
            .split_once(" is your least favorite and ")
            .ok_or_else(|| ProviderError::fatal("malformed flip edit prompt"))?;
        let (least, _) = rest
            .split_once(" is your favorite")
            .ok_or_else(|| ProviderError::fatal("malformed flip edit prompt"))?;
        let identify = messages
            .iter()
            .find(|m| m.role == "user" && m.content.contains(IDENTIFY_MARKER))
            .ok_or_else(|| ProviderError::fatal("flip edit without an identification turn"))?;
        let c = &identify.content;
        let summary = c.find(IDENTIFY_SUMMARY_START).map_or(c.as_str(), |p| &c[p + IDENTIFY_SUMMARY_START.len()..]);
        // The template closes the summary with its own period.
        let summary = summary.strip_suffix('.').unwrap_or(summary);
        Ok(flip_genres_in_text(summary, favorite, least))
    }

    fn themes(&self, prompt: &str) -> String {
        let title = &prompt[prompt.find(THEMES_MARKER).expect("dispatched on marker") + THEMES_MARKER.len()..];
        let title = title.strip_suffix('.').unwrap_or(title);
        let mut words = theme_words(title, &self.vocab);
        for f in THEME_FILLERS {
            if words.len() >= 5 {
                break;
            }
            words.push((*f).to_string());
        }
        words.truncate(5);
        words.join(", ")
    }

    fn finegrained(&self, messages: &[ChatMessage], prompt: &str, seed: u64) -> std::result::Result<String, ProviderError> {
        let words: Vec<String> = messages
            .iter()
            .rev()
            .find(|m| m.role == "assistant")
            .map(|m| m.content.split(',').map(|w| w.trim().to_string()).filter(|w| !w.is_empty()).take(5).collect())
            .ok_or_else(|| ProviderError::fatal("fine-grained edit without a theme turn"))?;
        let start = prompt
            .find(FG_SUMMARY_START)
            .map(|p| p + FG_SUMMARY_START.len())
            .ok_or_else(|| ProviderError::fatal("malformed fine-grained prompt"))?;
        let end = prompt.rfind(FG_SUMMARY_END).filter(|&e| e >= start).unwrap_or(prompt.len());
        let summary = &prompt[start..end];
        let sentence = match words.as_slice() {
            [] => return Err(ProviderError::fatal("empty theme list")),
            [one] => format!("They especially enjoy stories about {one}."),
            [a, b] => format!("They especially enjoy stories about {a} and {b}."),
            [a, b, rest @ ..] => {
                let (last, init) = rest.split_last().expect("non-empty rest");
                let mood = if init.is_empty() { last.clone() } else { format!("{}, and {last}", init.join(", ")) };
                format!("They especially enjoy stories about {a} and {b}, full of {mood}.")
            }
        };
        Ok(replace_sentence(summary, &sentence, &self.vocab, seed))
    }
}

impl CompletionProvider for OfflineProvider {
    fn name(&self) -> String {
        "offline".into()
    }

    fn source(&self) -> SummarySource {
        SummarySource::Synthetic
    }

    fn complete(&self, req: &CompletionRequest) -> std::result::Result<String, ProviderError> {
        let prompt = req
            .messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .ok_or_else(|| ProviderError::fatal("request has no user turn"))?;
        let seed = derive_seed(req.seed, &sha256_hex(prompt.as_bytes()));
        if prompt.contains(GENERATION_MARKER) {
            self.generation(prompt, seed)
        } else if prompt.contains(IDENTIFY_MARKER) {
            self.identify(prompt)
        } else if prompt.contains(FLIP_EDIT_MARKER) {
            self.flip_edit(&req.messages, prompt)
        } else if prompt.contains(THEMES_MARKER) {
            Ok(self.themes(prompt))
        } else if prompt.contains(FG_EDIT_MARKER) {
            self.finegrained(&req.messages, prompt, seed)
        } else {
            Err(ProviderError::fatal("offline provider does not recognize this prompt"))
        }
    }
}

/// Lowercase alphabetic title words of three or more letters, excluding
/// stopwords and genre names, in order of first appearance.
fn theme_words(title: &str, vocab: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for w in title.split(|c: char| !c.is_ascii_alphabetic()) {
        let w = w.to_ascii_lowercase();
        if w.len() < 3 || STOPWORDS.contains(&w.as_str()) || vocab.iter().any(|g| g.eq_ignore_ascii_case(&w)) {
            continue;
        }
        if !out.contains(&w) {
            out.push(w);
        }
    }
    out
}

fn top_words(scores: &HashMap<String, f64>, n: usize, exclude: &[String]) -> Vec<String> {
    let mut v: Vec<(&String, f64)> = scores.iter().filter(|(w, _)| !exclude.contains(w)).map(|(w, &s)| (w, s)).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    v.into_iter().take(n).map(|(w, _)| w.clone()).collect()
}

/// Splits a block into sentences ending in `.`, `!` or `?`.
fn sentences(block: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let chars: Vec<char> = block.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        cur.push(c);
        if matches!(c, '.' | '!' | '?') && chars.get(i + 1).is_none_or(|n| n.is_whitespace()) {
            out.push(cur.trim().to_string());
            cur.clear();
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

/// Replaces one seed-chosen sentence that names no genre, preferring the
/// liked-plot block; appends to that block when no sentence qualifies.
fn replace_sentence(summary: &str, new_sentence: &str, vocab: &[String], seed: u64) -> String {
    let mut blocks: Vec<Vec<String>> = summary.split("\n\n").map(sentences).collect();
    let names_genre = |s: &str| vocab.iter().any(|g| !find_word(s, g).is_empty());
    let header = usize::from(blocks.first().is_some_and(|b| b.len() == 1 && b[0].trim() == "Summary:"));
    let candidates = |only: Option<usize>| -> Vec<(usize, usize)> {
        blocks
            .iter()
            .enumerate()
            .skip(header)
            .filter(|(b, _)| only.is_none_or(|o| *b == o))
            .flat_map(|(b, ss)| ss.iter().enumerate().filter(|(_, s)| !names_genre(s)).map(move |(i, _)| (b, i)))
            .collect()
    };
    let plot_block = header + 1;
    let mut pool = candidates(Some(plot_block));
    if pool.is_empty() {
        pool = candidates(None);
    }
    match pool.choose(&mut rng(seed)) {
        Some(&(b, i)) => blocks[b][i] = new_sentence.to_string(),
        None => {
            let b = plot_block.min(blocks.len().saturating_sub(1));
            blocks[b].push(new_sentence.to_string());
        }
    }
    blocks.iter().map(|b| b.join(" ")).collect::<Vec<_>>().join("\n\n")
}

// ---------------------------------------------------------------------------
// Canned and recording providers

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CannedRecord {
    pub key: String,
    pub request: CompletionRequest,
    pub response: String,
}

/// Replays stored completions keyed by request hash.
#[derive(Debug, Clone)]
pub struct CannedProvider {
    name: String,
    responses: HashMap<String, String>,
}

impl CannedProvider {
    pub fn new(name: impl Into<String>, records: impl IntoIterator<Item = CannedRecord>) -> Self {
        CannedProvider {
            name: name.into(),
            responses: records.into_iter().map(|r| (r.key, r.response)).collect(),
        }
    }

    pub fn load_jsonl(name: impl Into<String>, path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| TearsError::io(path, e))?;
        let mut records = Vec::new();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| TearsError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let r: CannedRecord = serde_json::from_str(&line).map_err(|e| TearsError::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
            records.push(r);
        }
        Ok(Self::new(name, records))
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl CompletionProvider for CannedProvider {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn complete(&self, req: &CompletionRequest) -> std::result::Result<String, ProviderError> {
        self.responses
            .get(&req.key())
            .cloned()
            .ok_or_else(|| ProviderError::fatal(format!("no canned completion for request {}", &req.key()[..16])))
    }
}

/// Records every successful exchange of the wrapped provider.
pub struct RecordingProvider<P> {
    inner: P,
    records: Mutex<Vec<CannedRecord>>,
}

impl<P: CompletionProvider> RecordingProvider<P> {
    pub fn new(inner: P) -> Self {
        RecordingProvider { inner, records: Mutex::new(Vec::new()) }
    }

    /// Recorded exchanges sorted by key, so the file does not depend on
    /// request scheduling.
    pub fn records(&self) -> Vec<CannedRecord> {
        let mut v = self.records.lock().expect("recording lock").clone();
        v.sort_by(|a, b| a.key.cmp(&b.key));
        v.dedup_by(|a, b| a.key == b.key);
        v
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path).map_err(|e| TearsError::io(path, e))?;
        let mut w = BufWriter::new(f);
        for r in self.records() {
            serde_json::to_writer(&mut w, &r)?;
            w.write_all(b"\n").map_err(|e| TearsError::io(path, e))?;
        }
        w.flush().map_err(|e| TearsError::io(path, e))
    }
}

impl<P: CompletionProvider> CompletionProvider for RecordingProvider<P> {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn source(&self) -> SummarySource {
        self.inner.source()
    }

    fn complete(&self, req: &CompletionRequest) -> std::result::Result<String, ProviderError> {
        let out = self.inner.complete(req)?;
        self.records.lock().expect("recording lock").push(CannedRecord {
            key: req.key(),
            request: req.clone(),
            response: out.clone(),
        });
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// OpenAI-compatible HTTP provider

pub const ENV_ENDPOINT: &str = "TEARS_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "TEARS_LLM_API_KEY";
pub const ENV_MODEL: &str = "TEARS_LLM_MODEL";

/// Chat-completions client for OpenAI-compatible endpoints. Requests carry
/// the configured temperature and seed.
pub struct OpenAiProvider {
    url: String,
    api_key: Option<String>,
    model: String,
    agent: ureq::Agent,
}

impl OpenAiProvider {
    pub fn new(endpoint: &str, api_key: Option<String>, model: impl Into<String>, timeout: Duration) -> Self {
        let base = endpoint.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        };
        let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        OpenAiProvider { url, api_key, model: model.into(), agent }
    }

    /// Reads endpoint, credential and model name from the environment.
    pub fn from_env(cfg: &LlmConfig) -> Result<Self> {
        let endpoint = std::env::var(ENV_ENDPOINT)
            .map_err(|_| TearsError::invalid(format!("{ENV_ENDPOINT} is not set")))?;
        let key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| cfg.model.clone());
        Ok(Self::new(&endpoint, key, model, Duration::from_secs(cfg.timeout_secs)))
    }
}

impl CompletionProvider for OpenAiProvider {
    fn name(&self) -> String {
        self.model.clone()
    }

    fn complete(&self, req: &CompletionRequest) -> std::result::Result<String, ProviderError> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": req.messages,
            "temperature": req.temperature,
            "seed": req.seed,
        });
        let mut call = self.agent.post(&self.url);
        if let Some(k) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = call.send_json(&body).map_err(|e| match e {
            ureq::Error::StatusCode(c) if c == 429 || c >= 500 => ProviderError::transient(format!("HTTP {c}")),
            ureq::Error::StatusCode(c) => ProviderError::fatal(format!("HTTP {c}")),
            other => ProviderError::transient(other.to_string()),
        })?;
        let v: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::transient(format!("unreadable response: {e}")))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderError::fatal(format!("response has no message content: {v}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::summaries::prompts::build_generation_prompt;
    use crate::summaries::validate_four_block;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn vocab() -> Vec<String> {
        ["Action", "Comedy", "Drama", "Horror", "Romance"].iter().map(|s| s.to_string()).collect()
    }

    fn history() -> Vec<HistoryEntry> {
        let mut h = Vec::new();
        for i in 0..6 {
            h.push(HistoryEntry { title: format!("Vault Heist {i:04}"), rating: 5, genres: "Drama".into() });
            h.push(HistoryEntry { title: format!("Zombie Outbreak {i:04}"), rating: 1, genres: "Horror".into() });
            h.push(HistoryEntry { title: format!("Chess Prodigy {i:04}"), rating: 4, genres: "Comedy|Drama".into() });
        }
        h
    }

    fn cfg() -> LlmConfig {
        LlmConfig { retry_backoff_ms: 0, ..LlmConfig::default() }
    }

    fn offline_summary() -> UserSummary {
        let p = OfflineProvider::new(vocab(), ItemType::Movie);
        let b = build_generation_prompt(&history(), ItemType::Movie, 50).unwrap();
        generate_summary("u1", &b, &p, &cfg(), 7).unwrap()
    }

    #[test]
    fn offline_generation_reflects_history() {
        let s = offline_summary();
        validate_four_block(&s.text).unwrap();
        assert_eq!(s.source, SummarySource::Synthetic);
        assert!(s.text.contains("loves drama"), "{}", s.text);
        assert!(s.text.contains("dislikes horror"), "{}", s.text);
        assert!(s.text.contains("heist") || s.text.contains("vault"));
        assert_eq!(s.text, offline_summary().text);
    }

    #[test]
    fn offline_flip_round_trip() {
        let p = OfflineProvider::new(vocab(), ItemType::Movie);
        let s = offline_summary();
        let f = flip_summary(&p, &s, &vocab(), &cfg(), 1).unwrap();
        assert_eq!((f.favorite.as_str(), f.least_favorite.as_str()), ("Drama", "Horror"));
        assert!(f.summary.text.contains("loves horror"));
        assert!(f.summary.text.contains("dislikes drama"));
        assert_eq!(f.summary.parent, Some(s.id()));
        validate_four_block(&f.summary.text).unwrap();
    }

    #[test]
    fn offline_finegrained_inserts_theme_sentence() {
        let p = OfflineProvider::new(vocab(), ItemType::Movie);
        let s = offline_summary();
        let e = finegrained_edit(&p, &s, "Dragon Quest 0042", ItemType::Movie, &cfg(), 3).unwrap();
        assert!(e.text.contains("They especially enjoy stories about dragon and quest, full of tension, stakes, and journey."), "{}", e.text);
        validate_four_block(&e.text).unwrap();
        for g in vocab() {
            assert_eq!(find_word(&s.text, &g).is_empty(), find_word(&e.text, &g).is_empty());
        }
    }

    #[test]
    fn unknown_prompt_is_rejected() {
        let p = OfflineProvider::new(vocab(), ItemType::Movie);
        let b = PromptBundle { system: String::new(), user_turns: vec!["hello".into()], expected_format: String::new() };
        assert!(matches!(generate_summary("u", &b, &p, &cfg(), 0), Err(TearsError::Generation { .. })));
    }

    struct Flaky {
        fails: usize,
        calls: AtomicUsize,
    }

    impl CompletionProvider for Flaky {
        fn name(&self) -> String {
            "flaky".into()
        }

        fn complete(&self, _: &CompletionRequest) -> std::result::Result<String, ProviderError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fails {
                Err(ProviderError::transient("timeout"))
            } else {
                Ok("Summary:\n\na\n\nb\n\nc\n\nd".into())
            }
        }
    }

    fn bundle() -> PromptBundle {
        PromptBundle { system: String::new(), user_turns: vec!["x".into()], expected_format: String::new() }
    }

    #[test]
    fn retries_then_succeeds() {
        let p = Flaky { fails: 2, calls: AtomicUsize::new(0) };
        let s = generate_summary("u", &bundle(), &p, &cfg(), 0).unwrap();
        assert_eq!(s.source, SummarySource::Llm("flaky".into()));
        assert_eq!(p.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn gives_up_after_retry_limit() {
        let p = Flaky { fails: 10, calls: AtomicUsize::new(0) };
        let err = generate_summary("u", &bundle(), &p, &cfg(), 0).unwrap_err();
        assert!(matches!(err, TearsError::Generation { attempts: 4, .. }), "{err}");
    }

    #[test]
    fn record_then_replay_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("canned.jsonl");
        let rec = RecordingProvider::new(OfflineProvider::new(vocab(), ItemType::Movie));
        let s = offline_summary();
        let live = flip_summary(&rec, &s, &vocab(), &cfg(), 1).unwrap();
        rec.save_jsonl(&path).unwrap();
        let canned = CannedProvider::load_jsonl("offline", &path).unwrap();
        assert_eq!(canned.len(), 2);
        let replay = flip_summary(&canned, &s, &vocab(), &cfg(), 1).unwrap();
        assert_eq!(live.summary.text, replay.summary.text);
        assert!(flip_summary(&canned, &s, &vocab(), &cfg(), 2).is_err());
    }

    #[test]
    fn corpus_generation_is_schedule_independent() {
        let p = OfflineProvider::new(vocab(), ItemType::Movie);
        let jobs: Vec<GenerationJob> = (0..8)
            .map(|i| GenerationJob {
                user: format!("u{i}"),
                bundle: build_generation_prompt(&history()[i..], ItemType::Movie, 50).unwrap(),
                seed: i as u64,
            })
            .collect();
        let a = generate_corpus(&p, &jobs, &LlmConfig { in_flight: 4, ..cfg() });
        let b = generate_corpus(&p, &jobs, &LlmConfig { in_flight: 1, ..cfg() });
        assert!(a.failures.is_empty());
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.corpus.len(), 8);
    }

    #[test]
    fn sentence_split_keeps_abbreviated_tokens() {
        assert_eq!(sentences("One. Two! Sci-Fi fans? end"), vec!["One.", "Two!", "Sci-Fi fans?", "end"]);
    }
}
