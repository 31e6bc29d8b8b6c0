//! On-disk artifact store and per-session event logs.
//!
//! Layout under the data directory:
//! - `datasets/<id>.csv`: uploaded datasets, named by content hash
//! - `ensembles/<id>.json`: uploaded trees, named by content hash
//! - `sessions/<id>/session.json`: what a session was created from
//! - `sessions/<id>/events.jsonl`: append-only answers, undos and aborts

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use forestcut::dataset::WaveformDataset;
use forestcut::treegen::LinkageTree;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::session::{Event, SessionMeta};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: line {line}: {reason}", .path.display())]
    Corrupt { path: PathBuf, line: usize, reason: String },
    #[error(transparent)]
    Artifact(#[from] forestcut::Error),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

/// First 16 hex digits of the SHA-256 of `bytes`.
pub fn content_id(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Ids become path components, so only plain tokens are accepted.
pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-')
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StoredTree {
    pub tag: String,
    pub linkage: String,
}

#[derive(Clone, Debug)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for sub in ["datasets", "ensembles", "sessions"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(io(&dir))?;
        }
        Ok(Store { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dataset_path(&self, id: &str) -> PathBuf {
        self.root.join("datasets").join(format!("{id}.csv"))
    }

    fn ensemble_path(&self, id: &str) -> PathBuf {
        self.root.join("ensembles").join(format!("{id}.json"))
    }

    fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(id)
    }

    /// Stores a dataset in canonical form and returns its id.
    pub fn put_dataset(&self, dataset: &WaveformDataset) -> Result<String, StoreError> {
        let text = dataset.to_text();
        let id = content_id(text.as_bytes());
        let path = self.dataset_path(&id);
        if !path.exists() {
            write_atomic(&path, text.as_bytes())?;
        }
        Ok(id)
    }

    pub fn get_dataset(&self, id: &str) -> Result<Option<WaveformDataset>, StoreError> {
        let path = self.dataset_path(id);
        if !valid_id(id) || !path.exists() {
            return Ok(None);
        }
        Ok(Some(WaveformDataset::load(&path)?))
    }

    pub fn put_ensemble(&self, trees: &[(String, LinkageTree)]) -> Result<String, StoreError> {
        let stored: Vec<StoredTree> =
            trees.iter().map(|(tag, t)| StoredTree { tag: tag.clone(), linkage: t.to_text() }).collect();
        let text = serde_json::to_string(&stored).expect("trees serialize");
        let id = content_id(text.as_bytes());
        let path = self.ensemble_path(&id);
        if !path.exists() {
            write_atomic(&path, text.as_bytes())?;
        }
        Ok(id)
    }

    pub fn get_ensemble(&self, id: &str) -> Result<Option<Vec<(String, LinkageTree)>>, StoreError> {
        let path = self.ensemble_path(id);
        if !valid_id(id) || !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(io(&path))?;
        let stored: Vec<StoredTree> = serde_json::from_str(&text)
            .map_err(|e| StoreError::Corrupt { path: path.clone(), line: e.line(), reason: e.to_string() })?;
        let trees = stored
            .into_iter()
            .map(|s| Ok((s.tag, LinkageTree::parse(&s.linkage, &path)?)))
            .collect::<Result<Vec<_>, StoreError>>()?;
        Ok(Some(trees))
    }

    pub fn create_session(&self, meta: &SessionMeta, events: &[Event]) -> Result<(), StoreError> {
        let dir = self.session_dir(&meta.session_id);
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        let mut body = String::new();
        for e in events {
            body.push_str(&serde_json::to_string(e).expect("event serializes"));
            body.push('\n');
        }
        write_atomic(&dir.join("events.jsonl"), body.as_bytes())?;
        // the meta file goes last: a session directory without it is ignored
        let meta_text = serde_json::to_string_pretty(meta).expect("meta serializes");
        write_atomic(&dir.join("session.json"), meta_text.as_bytes())
    }

    /// Appends one event and syncs it to disk before returning.
    pub fn append_event(&self, session_id: &str, event: &Event) -> Result<(), StoreError> {
        let path = self.session_dir(session_id).join("events.jsonl");
        let mut f = OpenOptions::new().append(true).open(&path).map_err(io(&path))?;
        let mut line = serde_json::to_string(event).expect("event serializes");
        line.push('\n');
        f.write_all(line.as_bytes()).map_err(io(&path))?;
        f.sync_data().map_err(io(&path))
    }

    pub fn load_session(&self, id: &str) -> Result<Option<(SessionMeta, Vec<Event>)>, StoreError> {
        if !valid_id(id) {
            return Ok(None);
        }
        let dir = self.session_dir(id);
        let meta_path = dir.join("session.json");
        if !meta_path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&meta_path).map_err(io(&meta_path))?;
        let meta: SessionMeta = serde_json::from_str(&text)
            .map_err(|e| StoreError::Corrupt { path: meta_path.clone(), line: e.line(), reason: e.to_string() })?;
        let path = dir.join("events.jsonl");
        let f = fs::File::open(&path).map_err(io(&path))?;
        let mut events = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(io(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line) {
                Ok(e) => events.push(e),
                // a torn final line from a crash mid-append was never acknowledged
                Err(_) if is_last_line(&path, i) => break,
                Err(e) => {
                    return Err(StoreError::Corrupt { path: path.clone(), line: i + 1, reason: e.to_string() })
                }
            }
        }
        Ok(Some((meta, events)))
    }
}

fn is_last_line(path: &Path, index: usize) -> bool {
    fs::read_to_string(path).map(|t| t.lines().count() == index + 1).unwrap_or(false)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(io(&tmp))?;
        f.write_all(bytes).map_err(io(&tmp))?;
        f.sync_all().map_err(io(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io(path))
}
