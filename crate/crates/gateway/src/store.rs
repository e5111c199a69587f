//! Append-only, versioned summary log with an active-version pointer per
//! user. Every change is one JSONL event, so replaying the file restores the
//! store exactly; moving the pointer back gives undo without losing history.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tears::dataio::UserId;
use tears::summaries::{SummaryCorpus, SummarySource, UserSummary};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("{0}")]
    Invalid(String),
    /// The caller's view of the active version is stale; re-read and retry.
    #[error("active summary is {active}, not {expected}")]
    Conflict { expected: String, active: String },
    #[error("summary store I/O: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
enum Event {
    Version { summary: UserSummary },
    Activate { user: UserId, version: usize },
}

/// One stored summary as served to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryVersion {
    pub user: UserId,
    pub version: usize,
    pub id: String,
    pub text: String,
    pub source: SummarySource,
    pub seed: u64,
    pub parent: Option<String>,
}

impl SummaryVersion {
    fn new(version: usize, s: &UserSummary) -> Self {
        SummaryVersion {
            user: s.user.clone(),
            version,
            id: s.id(),
            text: s.text.clone(),
            source: s.source.clone(),
            seed: s.seed,
            parent: s.parent.clone(),
        }
    }
}

#[derive(Debug, Default, Serialize)]
struct Inner {
    versions: BTreeMap<UserId, Vec<UserSummary>>,
    active: BTreeMap<UserId, usize>,
}

impl Inner {
    fn apply(&mut self, e: Event) -> Result<(), StoreError> {
        match e {
            Event::Version { summary } => {
                let list = self.versions.entry(summary.user.clone()).or_default();
                list.push(summary.clone());
                self.active.insert(summary.user, list.len() - 1);
            }
            Event::Activate { user, version } => {
                let n = self.versions.get(&user).map_or(0, Vec::len);
                if version >= n {
                    return Err(StoreError::Invalid(format!("user {user} has no version {version}")));
                }
                self.active.insert(user, version);
            }
        }
        Ok(())
    }

    fn active(&self, user: &str) -> Result<(usize, &UserSummary), StoreError> {
        let v = *self.active.get(user).ok_or_else(|| StoreError::UnknownUser(user.to_string()))?;
        Ok((v, &self.versions[user][v]))
    }
}

/// Thread-safe store; writes are serialized and hit disk before memory.
#[derive(Debug)]
pub struct SummaryStore {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl SummaryStore {
    /// An in-memory store seeded with `corpus` as every user's version 0.
    pub fn in_memory(corpus: &SummaryCorpus) -> Self {
        let mut inner = Inner::default();
        for s in corpus.iter() {
            inner.apply(Event::Version { summary: s.clone() }).expect("version events always apply");
        }
        SummaryStore { path: None, inner: Mutex::new(inner) }
    }

    /// Replays the log at `path`, then appends version 0 for any user of
    /// `corpus` the log does not know yet.
    pub fn open(path: &Path, corpus: &SummaryCorpus) -> Result<Self, StoreError> {
        let mut inner = Inner::default();
        if path.exists() {
            let f = fs::File::open(path).map_err(|e| StoreError::Io(e.to_string()))?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| StoreError::Io(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let e: Event = serde_json::from_str(&line)
                    .map_err(|e| StoreError::Io(format!("{} line {}: {e}", path.display(), i + 1)))?;
                inner.apply(e)?;
            }
        }
        let store = SummaryStore { path: Some(path.to_path_buf()), inner: Mutex::new(inner) };
        {
            let mut inner = store.inner.lock().expect("store lock");
            for s in corpus.iter() {
                if !inner.versions.contains_key(&s.user) {
                    let e = Event::Version { summary: s.clone() };
                    store.append(&e)?;
                    inner.apply(e)?;
                }
            }
        }
        Ok(store)
    }

    fn append(&self, e: &Event) -> Result<(), StoreError> {
        let Some(path) = &self.path else { return Ok(()) };
        let mut line = serde_json::to_string(e).map_err(|e| StoreError::Io(e.to_string()))?;
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| StoreError::Io(format!("{}: {e}", path.display())))?;
        f.write_all(line.as_bytes()).map_err(|e| StoreError::Io(e.to_string()))?;
        f.sync_data().map_err(|e| StoreError::Io(e.to_string()))
    }

    pub fn contains(&self, user: &str) -> bool {
        self.inner.lock().expect("store lock").active.contains_key(user)
    }

    pub fn active(&self, user: &str) -> Result<SummaryVersion, StoreError> {
        let inner = self.inner.lock().expect("store lock");
        let (v, s) = inner.active(user)?;
        Ok(SummaryVersion::new(v, s))
    }

    /// Every version of `user`'s summary, oldest first.
    pub fn history(&self, user: &str) -> Result<Vec<SummaryVersion>, StoreError> {
        let inner = self.inner.lock().expect("store lock");
        let list = inner.versions.get(user).ok_or_else(|| StoreError::UnknownUser(user.to_string()))?;
        Ok(list.iter().enumerate().map(|(v, s)| SummaryVersion::new(v, s)).collect())
    }

    /// The chain of versions from the active one back to the root.
    pub fn lineage(&self, user: &str) -> Result<Vec<SummaryVersion>, StoreError> {
        let history = self.history(user)?;
        let by_id: BTreeMap<&str, &SummaryVersion> = history.iter().map(|v| (v.id.as_str(), v)).collect();
        let mut out = vec![self.active(user)?];
        while let Some(parent) = out.last().and_then(|v| v.parent.clone()) {
            match by_id.get(parent.as_str()) {
                Some(v) if out.len() <= history.len() => out.push((*v).clone()),
                _ => break,
            }
        }
        Ok(out)
    }

    /// Appends `text` as a new version whose parent is the active one and
    /// makes it active. With `expected_parent`, refuses when another commit
    /// has moved the active version since the caller read it.
    pub fn commit(&self, user: &str, text: &str, expected_parent: Option<&str>) -> Result<SummaryVersion, StoreError> {
        if text.trim().is_empty() {
            return Err(StoreError::Invalid("summary text is empty".into()));
        }
        let mut inner = self.inner.lock().expect("store lock");
        let (_, current) = inner.active(user)?;
        let current_id = current.id();
        if let Some(expected) = expected_parent {
            if expected != current_id {
                return Err(StoreError::Conflict { expected: expected.to_string(), active: current_id });
            }
        }
        let next = current.edit(text, SummarySource::HumanEdit, current.seed).map_err(|e| StoreError::Invalid(e.to_string()))?;
        let e = Event::Version { summary: next };
        self.append(&e)?;
        inner.apply(e)?;
        let (v, s) = inner.active(user)?;
        Ok(SummaryVersion::new(v, s))
    }

    /// Points `user`'s active summary at an existing version.
    pub fn activate(&self, user: &str, version: usize) -> Result<SummaryVersion, StoreError> {
        let mut inner = self.inner.lock().expect("store lock");
        inner.active(user)?;
        if version >= inner.versions[user].len() {
            return Err(StoreError::Invalid(format!("user {user} has no version {version}")));
        }
        let e = Event::Activate { user: user.to_string(), version };
        self.append(&e)?;
        inner.apply(e)?;
        let (v, s) = inner.active(user)?;
        Ok(SummaryVersion::new(v, s))
    }

    /// Hash over every version and pointer.
    pub fn content_hash(&self) -> String {
        let inner = self.inner.lock().expect("store lock");
        let bytes = serde_json::to_vec(&*inner).expect("store serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> SummaryCorpus {
        let mut c = SummaryCorpus::new();
        c.insert(UserSummary::new("u1", "Likes quiet dramas.", SummarySource::Synthetic, 4).unwrap());
        c.insert(UserSummary::new("u2", "Loves loud action.", SummarySource::Synthetic, 5).unwrap());
        c
    }

    #[test]
    fn commit_then_fetch_reads_back_exact_text() {
        let s = SummaryStore::in_memory(&corpus());
        let text = "  Enjoys slow cinema — and café scenes.\n";
        let v = s.commit("u1", text, None).unwrap();
        assert_eq!(s.active("u1").unwrap().text, text);
        assert_eq!(v.version, 1);
        assert_eq!(v.source, SummarySource::HumanEdit);
    }

    #[test]
    fn two_commits_form_a_chain_and_last_wins() {
        let s = SummaryStore::in_memory(&corpus());
        let root = s.active("u1").unwrap();
        let a = s.commit("u1", "first", None).unwrap();
        let b = s.commit("u1", "second", None).unwrap();
        assert_eq!(a.parent.as_deref(), Some(root.id.as_str()));
        assert_eq!(b.parent.as_deref(), Some(a.id.as_str()));
        assert_eq!(s.active("u1").unwrap().text, "second");
        let chain: Vec<usize> = s.lineage("u1").unwrap().iter().map(|v| v.version).collect();
        assert_eq!(chain, vec![2, 1, 0]);
    }

    #[test]
    fn stale_parent_is_a_conflict() {
        let s = SummaryStore::in_memory(&corpus());
        let root = s.active("u1").unwrap();
        s.commit("u1", "first", Some(&root.id)).unwrap();
        let err = s.commit("u1", "second", Some(&root.id)).unwrap_err();
        assert!(matches!(err, StoreError::Conflict { .. }));
        assert_eq!(s.active("u1").unwrap().text, "first");
    }

    #[test]
    fn empty_text_and_unknown_users_are_rejected() {
        let s = SummaryStore::in_memory(&corpus());
        assert!(matches!(s.commit("u1", "  ", None), Err(StoreError::Invalid(_))));
        assert!(matches!(s.commit("nobody", "x", None), Err(StoreError::UnknownUser(_))));
        assert!(matches!(s.activate("u1", 9), Err(StoreError::Invalid(_))));
    }

    #[test]
    fn activate_moves_the_pointer_without_losing_history() {
        let s = SummaryStore::in_memory(&corpus());
        s.commit("u2", "edited", None).unwrap();
        let back = s.activate("u2", 0).unwrap();
        assert_eq!(back.text, "Loves loud action.");
        assert_eq!(s.history("u2").unwrap().len(), 2);
    }

    #[test]
    fn reopening_replays_the_log() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let hash = {
            let s = SummaryStore::open(&path, &corpus()).unwrap();
            s.commit("u1", "first", None).unwrap();
            s.commit("u1", "second", None).unwrap();
            s.activate("u1", 1).unwrap();
            s.content_hash()
        };
        let again = SummaryStore::open(&path, &corpus()).unwrap();
        assert_eq!(again.content_hash(), hash);
        assert_eq!(again.active("u1").unwrap().text, "first");
    }
}
