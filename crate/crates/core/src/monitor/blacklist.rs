//! Persistent consumer blacklist.
//!
//! One entry per line, `ban <consumer> <unix-ms> <reason>`. New bans are
//! appended; removal rewrites the file through a temporary and a rename.
//! Readers notice edits made by other processes (the admin CLI) by comparing
//! the file's modification time and length.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::RwLock;
use serde::Serialize;
use thiserror::Error;

use super::Reason;
use crate::model::strip_comment;
use crate::policy::ConsumerId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BlacklistError {
    #[error("blacklist store {path} unavailable: {message}")]
    StoreUnavailable { path: PathBuf, message: String },
    #[error("blacklist {path}, line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("consumer `{0}` is not on the blacklist")]
    NotFound(ConsumerId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BanEntry {
    pub consumer: ConsumerId,
    pub banned_at_unix_ms: u64,
    pub reason: Reason,
}

impl BanEntry {
    fn line(&self) -> String {
        format!(
            "ban {} {} {}\n",
            self.consumer, self.banned_at_unix_ms, self.reason
        )
    }
}

type Stamp = Option<(SystemTime, u64)>;

#[derive(Debug, Default)]
struct Inner {
    entries: BTreeMap<ConsumerId, BanEntry>,
    stamp: Stamp,
}

#[derive(Debug)]
pub struct Blacklist {
    path: Option<PathBuf>,
    inner: RwLock<Inner>,
}

pub fn unix_ms_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl Blacklist {
    /// Volatile blacklist, lost when the process exits.
    pub fn in_memory() -> Self {
        Self {
            path: None,
            inner: RwLock::new(Inner::default()),
        }
    }

    /// Loads the blacklist stored at `path`. A missing file is an empty list.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, BlacklistError> {
        let path = path.into();
        let (entries, stamp) = load(&path)?;
        Ok(Self {
            path: Some(path),
            inner: RwLock::new(Inner { entries, stamp }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn unavailable(&self, e: impl std::fmt::Display) -> BlacklistError {
        BlacklistError::StoreUnavailable {
            path: self.path.clone().unwrap_or_default(),
            message: e.to_string(),
        }
    }

    /// Re-reads the file if it changed since the last read.
    pub fn refresh(&self) -> Result<(), BlacklistError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let current = stamp_of(path).map_err(|e| self.unavailable(e))?;
        if current == self.inner.read().stamp {
            return Ok(());
        }
        let (entries, stamp) = load(path)?;
        let mut inner = self.inner.write();
        inner.entries = entries;
        inner.stamp = stamp;
        Ok(())
    }

    /// Membership, consistent with the persisted store.
    pub fn contains(&self, consumer: &ConsumerId) -> Result<bool, BlacklistError> {
        self.refresh()?;
        Ok(self.contains_cached(consumer))
    }

    /// Membership from memory only; does not touch the file.
    pub fn contains_cached(&self, consumer: &ConsumerId) -> bool {
        self.inner.read().entries.contains_key(consumer)
    }

    /// Bans `consumer`. Returns false when it was already banned.
    pub fn add(&self, consumer: &ConsumerId, reason: Reason) -> Result<bool, BlacklistError> {
        let mut inner = self.inner.write();
        if inner.entries.contains_key(consumer) {
            return Ok(false);
        }
        let entry = BanEntry {
            consumer: consumer.clone(),
            banned_at_unix_ms: unix_ms_now(),
            reason,
        };
        if let Some(path) = &self.path {
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| self.unavailable(e))?;
            file.write_all(entry.line().as_bytes())
                .and_then(|_| file.sync_data())
                .map_err(|e| self.unavailable(e))?;
            inner.stamp = stamp_of(path).map_err(|e| self.unavailable(e))?;
        }
        inner.entries.insert(consumer.clone(), entry);
        Ok(true)
    }

    /// Administrative removal.
    pub fn remove(&self, consumer: &ConsumerId) -> Result<BanEntry, BlacklistError> {
        self.refresh()?;
        let mut inner = self.inner.write();
        let Some(removed) = inner.entries.remove(consumer) else {
            return Err(BlacklistError::NotFound(consumer.clone()));
        };
        if let Some(path) = &self.path {
            let body: String = inner.entries.values().map(BanEntry::line).collect();
            let tmp = path.with_extension("tmp");
            let written = fs::write(&tmp, body).and_then(|_| fs::rename(&tmp, path));
            if let Err(e) = written {
                inner.entries.insert(consumer.clone(), removed);
                return Err(self.unavailable(e));
            }
            inner.stamp = stamp_of(path).map_err(|e| self.unavailable(e))?;
        }
        Ok(removed)
    }

    pub fn entries(&self) -> Vec<BanEntry> {
        self.inner.read().entries.values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.inner.read().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn stamp_of(path: &Path) -> std::io::Result<Stamp> {
    match fs::metadata(path) {
        Ok(meta) => Ok(Some((meta.modified()?, meta.len()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e),
    }
}

fn load(path: &Path) -> Result<(BTreeMap<ConsumerId, BanEntry>, Stamp), BlacklistError> {
    let unavailable = |e: std::io::Error| BlacklistError::StoreUnavailable {
        path: path.to_owned(),
        message: e.to_string(),
    };
    let stamp = stamp_of(path).map_err(unavailable)?;
    if stamp.is_none() {
        return Ok((BTreeMap::new(), None));
    }
    let text = fs::read_to_string(path).map_err(unavailable)?;
    let mut entries = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let fields: Vec<&str> = strip_comment(raw).split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let corrupt = |message: String| BlacklistError::Corrupt {
            path: path.to_owned(),
            line: idx + 1,
            message,
        };
        let ["ban", consumer, at, reason] = fields.as_slice() else {
            return Err(corrupt("expected `ban <consumer> <unix-ms> <reason>`".into()));
        };
        let entry = BanEntry {
            consumer: ConsumerId::new(*consumer).map_err(|e| corrupt(e.to_string()))?,
            banned_at_unix_ms: at.parse().map_err(|_| corrupt(format!("bad timestamp `{at}`")))?,
            reason: reason.parse().map_err(|_| corrupt(format!("unknown reason `{reason}`")))?,
        };
        entries.entry(entry.consumer.clone()).or_insert(entry);
    }
    Ok((entries, stamp))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cid(s: &str) -> ConsumerId {
        ConsumerId::new(s).unwrap()
    }

    #[test]
    fn fresh_store_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let bl = Blacklist::open(dir.path().join("bl")).unwrap();
        assert!(!bl.contains(&cid("C0")).unwrap());
        assert!(bl.is_empty());
    }

    #[test]
    fn ban_survives_reopen_and_removal_is_durable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blacklist");
        let bl = Blacklist::open(&path).unwrap();
        assert!(bl.add(&cid("C0"), Reason::BothExceeded).unwrap());
        assert!(!bl.add(&cid("C0"), Reason::BothExceeded).unwrap());
        bl.add(&cid("C2"), Reason::BothExceeded).unwrap();
        drop(bl);

        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("ban C0 "));
        assert!(text.lines().next().unwrap().ends_with(" BothExceeded"));

        let bl = Blacklist::open(&path).unwrap();
        assert!(bl.contains(&cid("C0")).unwrap());
        bl.remove(&cid("C0")).unwrap();
        assert!(!bl.contains(&cid("C0")).unwrap());
        assert_eq!(
            bl.remove(&cid("C0")),
            Err(BlacklistError::NotFound(cid("C0")))
        );
        let bl = Blacklist::open(&path).unwrap();
        assert!(!bl.contains(&cid("C0")).unwrap());
        assert!(bl.contains(&cid("C2")).unwrap());
    }

    #[test]
    fn sees_removal_by_another_handle() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blacklist");
        let server = Blacklist::open(&path).unwrap();
        server.add(&cid("C0"), Reason::BothExceeded).unwrap();
        let admin = Blacklist::open(&path).unwrap();
        admin.remove(&cid("C0")).unwrap();
        assert!(!server.contains(&cid("C0")).unwrap());
    }

    #[test]
    fn corrupt_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blacklist");
        fs::write(&path, "ban C0 12 BothExceeded\nban C1 soon BothExceeded\n").unwrap();
        assert!(matches!(
            Blacklist::open(&path),
            Err(BlacklistError::Corrupt { line: 2, .. })
        ));
    }

    #[test]
    fn unavailable_store() {
        let dir = tempfile::tempdir().unwrap();
        // a directory where the file should be
        let bl = Blacklist::open(dir.path()).map(|_| ()).unwrap_err();
        assert!(matches!(bl, BlacklistError::StoreUnavailable { .. }));
    }
}
