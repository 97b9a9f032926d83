//! A local, file-per-entry library of prompt examples with voting.
//!
//! Layout of a store directory:
//!
//! ```text
//! categories.json   configured category names
//! index.json        id, category, title and hash of every entry
//! entries/<id>.json one entry per file
//! votes.jsonl       one vote record per line, append-only
//! .lock             present while a writer holds the store
//! ```

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::gateway::{Role, Transcript};

pub const DEFAULT_CATEGORIES: &[&str] = &["navigation", "grasping", "manipulation", "aerial"];

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("an entry with the same dialogue already exists in `{category}` ({id})")]
    DuplicateContent { category: String, id: String },
    #[error("unknown category `{0}`")]
    BadCategory(String),
    #[error("no entry with id `{0}`")]
    UnknownEntry(String),
    #[error("vote delta must be +1 or -1, got {0}")]
    BadDelta(i32),
    #[error("dialogue has no messages")]
    EmptyDialogue,
    #[error("{path} line {line}: {reason}")]
    Format { path: String, line: usize, reason: String },
    #[error("store is locked by another writer ({0})")]
    Locked(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptEntry {
    pub id: String,
    pub category: String,
    pub title: String,
    pub dialogue: Transcript,
    pub tags: Vec<String>,
    pub score: i64,
    pub created_at: DateTime<Utc>,
    pub content_hash: String,
}

/// Fields supplied by the submitter.
#[derive(Debug, Clone, PartialEq)]
pub struct NewEntry {
    pub category: String,
    pub title: String,
    pub dialogue: Transcript,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vote {
    pub entry_id: String,
    pub voter: String,
    pub delta: i32,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct IndexRow {
    id: String,
    category: String,
    title: String,
    content_hash: String,
}

/// Trailing whitespace is trimmed per line and line endings normalized so
/// that whitespace-only edits keep the hash.
pub fn canonical_dialogue(dialogue: &Transcript) -> String {
    let mut out = String::new();
    for m in &dialogue.messages {
        let role = match m.role {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        out.push_str(role);
        out.push('\n');
        let normalized = m.content.replace("\r\n", "\n").replace('\r', "\n");
        let lines: Vec<&str> = normalized.lines().map(str::trim_end).collect();
        out.push_str(lines.join("\n").trim_end_matches('\n'));
        out.push_str("\n\n");
    }
    out
}

pub fn content_hash(dialogue: &Transcript) -> String {
    hex::encode(Sha256::digest(canonical_dialogue(dialogue).as_bytes()))
}

fn entry_id(category: &str, hash: &str) -> String {
    let digest = Sha256::digest(format!("{category}\n{hash}").as_bytes());
    hex::encode(&digest[..8])
}

struct LockGuard(PathBuf);

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Export record; votes are keyed by category and content hash so they
/// survive id reassignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum ExportRecord {
    Entry {
        category: String,
        title: String,
        dialogue: Transcript,
        tags: Vec<String>,
        created_at: DateTime<Utc>,
        content_hash: String,
    },
    Vote {
        category: String,
        content_hash: String,
        voter: String,
        delta: i32,
        timestamp: DateTime<Utc>,
    },
}

#[derive(Debug, Clone)]
pub struct PromptStore {
    dir: PathBuf,
    categories: Vec<String>,
}

impl PromptStore {
    /// Opens the store at `dir`, creating it with the default categories
    /// when absent.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let cat_path = dir.join("categories.json");
        let categories = if cat_path.is_file() {
            let text = fs::read_to_string(&cat_path)?;
            serde_json::from_str(&text).map_err(|e| StoreError::Format {
                path: cat_path.display().to_string(),
                line: e.line(),
                reason: e.to_string(),
            })?
        } else {
            DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect()
        };
        let store = Self {
            dir: dir.to_path_buf(),
            categories,
        };
        fs::create_dir_all(store.entries_dir())?;
        if !cat_path.is_file() {
            store.write_categories()?;
        }
        Ok(store)
    }

    pub fn set_categories(&mut self, categories: &[&str]) -> Result<(), StoreError> {
        let _lock = self.lock()?;
        self.categories = categories.iter().map(|s| s.to_string()).collect();
        self.write_categories()
    }

    fn write_categories(&self) -> Result<(), StoreError> {
        let text = serde_json::to_string_pretty(&self.categories).expect("categories serialize");
        fs::write(self.dir.join("categories.json"), text + "\n")?;
        Ok(())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    fn entries_dir(&self) -> PathBuf {
        self.dir.join("entries")
    }

    fn votes_path(&self) -> PathBuf {
        self.dir.join("votes.jsonl")
    }

    fn lock(&self) -> Result<LockGuard, StoreError> {
        let path = self.dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(LockGuard(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let holder = fs::read_to_string(&path).unwrap_or_default();
                Err(StoreError::Locked(format!("pid {}", holder.trim())))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn check_category(&self, category: &str) -> Result<(), StoreError> {
        if self.categories.iter().any(|c| c == category) {
            Ok(())
        } else {
            Err(StoreError::BadCategory(category.to_string()))
        }
    }

    /// Every entry with its score recomputed from the vote set.
    fn load_entries(&self) -> Result<Vec<PromptEntry>, StoreError> {
        let scores = self.scores()?;
        let mut entries = Vec::new();
        for row in self.load_index()? {
            let path = self.entries_dir().join(format!("{}.json", row.id));
            let text = fs::read_to_string(&path)?;
            let mut e: PromptEntry = serde_json::from_str(&text).map_err(|err| StoreError::Format {
                path: path.display().to_string(),
                line: err.line(),
                reason: err.to_string(),
            })?;
            e.score = scores.get(&e.id).copied().unwrap_or(0);
            entries.push(e);
        }
        Ok(entries)
    }

    fn load_index(&self) -> Result<Vec<IndexRow>, StoreError> {
        let path = self.dir.join("index.json");
        if !path.is_file() {
            return Ok(Vec::new());
        }
        let text = fs::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(|e| StoreError::Format {
            path: path.display().to_string(),
            line: e.line(),
            reason: e.to_string(),
        })
    }

    fn write_entry(&self, entry: &PromptEntry, index: &mut Vec<IndexRow>) -> Result<(), StoreError> {
        let path = self.entries_dir().join(format!("{}.json", entry.id));
        let text = serde_json::to_string_pretty(entry).expect("entry serializes");
        fs::write(path, text + "\n")?;
        index.push(IndexRow {
            id: entry.id.clone(),
            category: entry.category.clone(),
            title: entry.title.clone(),
            content_hash: entry.content_hash.clone(),
        });
        let text = serde_json::to_string_pretty(index).expect("index serializes");
        fs::write(self.dir.join("index.json"), text + "\n")?;
        Ok(())
    }

    pub fn add(&self, entry: NewEntry) -> Result<String, StoreError> {
        self.add_at(entry, Utc::now())
    }

    /// Like [`PromptStore::add`] with an explicit creation time.
    pub fn add_at(&self, entry: NewEntry, created_at: DateTime<Utc>) -> Result<String, StoreError> {
        let _lock = self.lock()?;
        self.insert(entry, created_at)
    }

    fn insert(&self, entry: NewEntry, created_at: DateTime<Utc>) -> Result<String, StoreError> {
        self.check_category(&entry.category)?;
        if entry.dialogue.messages.is_empty() {
            return Err(StoreError::EmptyDialogue);
        }
        let hash = content_hash(&entry.dialogue);
        let mut index = self.load_index()?;
        if let Some(row) = index
            .iter()
            .find(|r| r.category == entry.category && r.content_hash == hash)
        {
            return Err(StoreError::DuplicateContent {
                category: entry.category,
                id: row.id.clone(),
            });
        }
        let stored = PromptEntry {
            id: entry_id(&entry.category, &hash),
            category: entry.category,
            title: entry.title,
            dialogue: entry.dialogue,
            tags: entry.tags,
            score: 0,
            created_at,
            content_hash: hash,
        };
        self.write_entry(&stored, &mut index)?;
        Ok(stored.id)
    }

    pub fn get(&self, id: &str) -> Result<PromptEntry, StoreError> {
        self.load_entries()?
            .into_iter()
            .find(|e| e.id == id)
            .ok_or_else(|| StoreError::UnknownEntry(id.to_string()))
    }

    pub fn votes(&self) -> Result<Vec<Vote>, StoreError> {
        let path = self.votes_path();
        if !path.is_file() {
            return Ok(Vec::new());
        }
        let text = fs::read_to_string(&path)?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| StoreError::Format {
                    path: path.display().to_string(),
                    line: i + 1,
                    reason: e.to_string(),
                })
            })
            .collect()
    }

    /// Latest vote per (entry, voter); later records win timestamp ties.
    fn effective_votes(&self) -> Result<BTreeMap<(String, String), Vote>, StoreError> {
        let mut latest: BTreeMap<(String, String), Vote> = BTreeMap::new();
        for v in self.votes()? {
            let key = (v.entry_id.clone(), v.voter.clone());
            match latest.get(&key) {
                Some(old) if old.timestamp > v.timestamp => {}
                _ => {
                    latest.insert(key, v);
                }
            }
        }
        Ok(latest)
    }

    fn scores(&self) -> Result<BTreeMap<String, i64>, StoreError> {
        let mut scores = BTreeMap::new();
        for ((id, _), v) in self.effective_votes()? {
            *scores.entry(id).or_insert(0) += i64::from(v.delta);
        }
        Ok(scores)
    }

    fn append_vote(&self, vote: &Vote) -> Result<(), StoreError> {
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.votes_path())?;
        writeln!(f, "{}", serde_json::to_string(vote).expect("vote serializes"))?;
        Ok(())
    }

    pub fn vote(&self, id: &str, delta: i32, voter: &str) -> Result<i64, StoreError> {
        self.vote_at(id, delta, voter, Utc::now())
    }

    pub fn vote_at(
        &self,
        id: &str,
        delta: i32,
        voter: &str,
        timestamp: DateTime<Utc>,
    ) -> Result<i64, StoreError> {
        if delta != 1 && delta != -1 {
            return Err(StoreError::BadDelta(delta));
        }
        let _lock = self.lock()?;
        if !self.load_index()?.iter().any(|r| r.id == id) {
            return Err(StoreError::UnknownEntry(id.to_string()));
        }
        // Keep this voter's records ordered even if the clock steps back.
        let previous = self
            .effective_votes()?
            .remove(&(id.to_string(), voter.to_string()))
            .map(|v| v.timestamp);
        let timestamp = previous.map_or(timestamp, |p| timestamp.max(p));
        self.append_vote(&Vote {
            entry_id: id.to_string(),
            voter: voter.to_string(),
            delta,
            timestamp,
        })?;
        Ok(self.scores()?.get(id).copied().unwrap_or(0))
    }

    /// Entries of `category` by score descending, then oldest first.
    pub fn list(&self, category: &str) -> Result<Vec<PromptEntry>, StoreError> {
        let mut entries: Vec<PromptEntry> = self
            .load_entries()?
            .into_iter()
            .filter(|e| e.category == category)
            .collect();
        entries.sort_by(|a, b| b.score.cmp(&a.score).then(a.created_at.cmp(&b.created_at)));
        Ok(entries)
    }

    pub fn all(&self) -> Result<Vec<PromptEntry>, StoreError> {
        self.load_entries()
    }

    /// Writes every entry and vote as JSON lines; returns the entry count.
    pub fn export(&self, path: &Path) -> Result<usize, StoreError> {
        let entries = self.load_entries()?;
        let by_id: BTreeMap<&str, &PromptEntry> = entries.iter().map(|e| (e.id.as_str(), e)).collect();
        let mut out = String::new();
        for e in &entries {
            let rec = ExportRecord::Entry {
                category: e.category.clone(),
                title: e.title.clone(),
                dialogue: e.dialogue.clone(),
                tags: e.tags.clone(),
                created_at: e.created_at,
                content_hash: e.content_hash.clone(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        for v in self.effective_votes()?.into_values() {
            let Some(e) = by_id.get(v.entry_id.as_str()) else {
                continue;
            };
            let rec = ExportRecord::Vote {
                category: e.category.clone(),
                content_hash: e.content_hash.clone(),
                voter: v.voter,
                delta: v.delta,
                timestamp: v.timestamp,
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(entries.len())
    }

    /// Merges an export file; returns the number of entries added. The file
    /// is fully parsed before anything is written.
    pub fn import(&self, path: &Path) -> Result<usize, StoreError> {
        let text = fs::read_to_string(path)?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ExportRecord = serde_json::from_str(line).map_err(|e| StoreError::Format {
                path: path.display().to_string(),
                line: i + 1,
                reason: e.to_string(),
            })?;
            if let ExportRecord::Entry { dialogue, content_hash: h, .. } = &rec {
                if content_hash(dialogue) != *h {
                    return Err(StoreError::Format {
                        path: path.display().to_string(),
                        line: i + 1,
                        reason: "content_hash does not match the dialogue".into(),
                    });
                }
            }
            records.push(rec);
        }
        let _lock = self.lock()?;
        let mut added = 0;
        for rec in &records {
            if let ExportRecord::Entry { category, title, dialogue, tags, created_at, .. } = rec {
                let entry = NewEntry {
                    category: category.clone(),
                    title: title.clone(),
                    dialogue: dialogue.clone(),
                    tags: tags.clone(),
                };
                match self.insert(entry, *created_at) {
                    Ok(_) => added += 1,
                    Err(StoreError::DuplicateContent { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        let index = self.load_index()?;
        let existing = self.effective_votes()?;
        for rec in records {
            if let ExportRecord::Vote { category, content_hash, voter, delta, timestamp } = rec {
                let Some(row) = index
                    .iter()
                    .find(|r| r.category == category && r.content_hash == content_hash)
                else {
                    continue;
                };
                let key = (row.id.clone(), voter.clone());
                let newer = existing.get(&key).is_none_or(|old| timestamp > old.timestamp);
                if newer {
                    self.append_vote(&Vote {
                        entry_id: row.id.clone(),
                        voter,
                        delta,
                        timestamp,
                    })?;
                }
            }
        }
        Ok(added)
    }
}

/// One-line summary used by table listings.
pub fn format_row(e: &PromptEntry) -> String {
    format!(
        "{:>5}  {}  {}  {}",
        e.score,
        e.id,
        e.created_at.to_rfc3339_opts(SecondsFormat::Secs, true),
        e.title
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatMessage, TranscriptMeta};
    use chrono::TimeZone;

    fn dialogue(text: &str) -> Transcript {
        Transcript {
            meta: TranscriptMeta {
                scenario_id: "t".into(),
                created_at: "2023-01-01T00:00:00Z".into(),
                adapter_kind: "scripted".into(),
                extra: Default::default(),
            },
            messages: vec![ChatMessage::user(text), ChatMessage::assistant("ok")],
        }
    }

    fn entry(category: &str, text: &str) -> NewEntry {
        NewEntry {
            category: category.into(),
            title: text.into(),
            dialogue: dialogue(text),
            tags: vec![],
        }
    }

    fn at(s: i64) -> DateTime<Utc> {
        Utc.timestamp_opt(1_700_000_000 + s, 0).unwrap()
    }

    #[test]
    fn add_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let store = PromptStore::open(dir.path()).unwrap();
        let id = store.add(entry("aerial", "fly")).unwrap();
        assert_eq!(store.get(&id).unwrap().score, 0);
        assert!(matches!(
            store.add(entry("aerial", "fly  ")),
            Err(StoreError::DuplicateContent { .. })
        ));
        assert!(store.add(entry("navigation", "fly")).is_ok());
        assert!(matches!(store.add(entry("cooking", "x")), Err(StoreError::BadCategory(_))));
    }

    #[test]
    fn hash_ignores_trailing_whitespace_and_crlf() {
        assert_eq!(content_hash(&dialogue("a\r\nb  ")), content_hash(&dialogue("a\nb")));
        assert_ne!(content_hash(&dialogue("a b")), content_hash(&dialogue("ab")));
    }

    #[test]
    fn voting_rules() {
        let dir = tempfile::tempdir().unwrap();
        let store = PromptStore::open(dir.path()).unwrap();
        let id = store.add(entry("aerial", "fly")).unwrap();
        assert_eq!(store.vote(&id, 1, "ann").unwrap(), 1);
        assert_eq!(store.vote(&id, -1, "ann").unwrap(), -1);
        assert_eq!(store.vote(&id, 1, "bob").unwrap(), 0);
        assert_eq!(store.vote(&id, 1, "ann").unwrap(), 2);
        assert!(matches!(store.vote("nope", 1, "ann"), Err(StoreError::UnknownEntry(_))));
        assert!(matches!(store.vote(&id, 2, "ann"), Err(StoreError::BadDelta(2))));
    }

    #[test]
    fn listing_order() {
        let dir = tempfile::tempdir().unwrap();
        let store = PromptStore::open(dir.path()).unwrap();
        let a = store.add_at(entry("aerial", "a"), at(0)).unwrap();
        let b = store.add_at(entry("aerial", "b"), at(1)).unwrap();
        let c = store.add_at(entry("aerial", "c"), at(2)).unwrap();
        for (id, n) in [(&a, 3), (&b, 1), (&c, 2)] {
            for v in 0..n {
                store.vote(id, 1, &format!("v{v}")).unwrap();
            }
        }
        let order: Vec<String> = store.list("aerial").unwrap().into_iter().map(|e| e.title).collect();
        assert_eq!(order, vec!["a", "c", "b"]);
        assert!(store.list("grasping").unwrap().is_empty());

        let dir = tempfile::tempdir().unwrap();
        let store = PromptStore::open(dir.path()).unwrap();
        store.add_at(entry("aerial", "new"), at(5)).unwrap();
        store.add_at(entry("aerial", "old"), at(1)).unwrap();
        let order: Vec<String> = store.list("aerial").unwrap().into_iter().map(|e| e.title).collect();
        assert_eq!(order, vec!["old", "new"]);
    }

    #[test]
    fn export_import_round_trip() {
        let src_dir = tempfile::tempdir().unwrap();
        let src = PromptStore::open(src_dir.path()).unwrap();
        let a = src.add_at(entry("aerial", "a"), at(0)).unwrap();
        src.add_at(entry("grasping", "b"), at(1)).unwrap();
        src.vote_at(&a, 1, "ann", at(10)).unwrap();
        let file = src_dir.path().join("export.jsonl");
        assert_eq!(src.export(&file).unwrap(), 2);

        let dst_dir = tempfile::tempdir().unwrap();
        let dst = PromptStore::open(dst_dir.path()).unwrap();
        assert_eq!(dst.import(&file).unwrap(), 2);
        assert_eq!(dst.import(&file).unwrap(), 0);
        for cat in ["aerial", "grasping"] {
            assert_eq!(src.list(cat).unwrap(), dst.list(cat).unwrap());
        }
    }

    #[test]
    fn import_merges_votes_last_write_wins() {
        let dir = tempfile::tempdir().unwrap();
        let store = PromptStore::open(dir.path()).unwrap();
        let id = store.add_at(entry("aerial", "a"), at(0)).unwrap();
        store.vote_at(&id, 1, "ann", at(5)).unwrap();
        let file = dir.path().join("x.jsonl");
        store.export(&file).unwrap();
        store.vote_at(&id, -1, "ann", at(9)).unwrap();
        store.import(&file).unwrap();
        assert_eq!(store.get(&id).unwrap().score, -1);
    }

    #[test]
    fn corrupted_import_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let store = PromptStore::open(dir.path()).unwrap();
        store.add(entry("aerial", "a")).unwrap();
        let file = dir.path().join("x.jsonl");
        store.export(&file).unwrap();
        let mut text = fs::read_to_string(&file).unwrap();
        text.push_str("{broken\n");
        fs::write(&file, text).unwrap();
        match store.import(&file) {
            Err(StoreError::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lock_excludes_second_writer() {
        let dir = tempfile::tempdir().unwrap();
        let store = PromptStore::open(dir.path()).unwrap();
        let _held = store.lock().unwrap();
        assert!(matches!(store.add(entry("aerial", "a")), Err(StoreError::Locked(_))));
        assert!(store.list("aerial").is_ok());
    }
}
