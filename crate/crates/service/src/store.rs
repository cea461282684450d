//! Session persistence.
//!
//! A session is stored as its replay log: everything needed to rebuild the
//! live state deterministically (environment, settings, seed and the actions
//! taken so far).

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use policy_tree::exec::ControllerConfig;
use policy_tree::setup::{BaselineKind, EnvParams};
use policy_tree::tree::BuildConfig;
use policy_tree::ActionId;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActMode {
    Approve,
    Override,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedAction {
    pub action: ActionId,
    pub mode: ActMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub env: EnvParams,
    pub baseline: BaselineKind,
    pub build: BuildConfig,
    pub controller: ControllerConfig,
    pub seed: u64,
    pub actions: Vec<LoggedAction>,
}

pub trait SessionStore: Send + Sync {
    fn save(&self, record: &SessionRecord) -> std::io::Result<()>;
    fn load(&self, id: &str) -> std::io::Result<Option<SessionRecord>>;
}

#[derive(Default)]
pub struct MemoryStore {
    records: Mutex<HashMap<String, SessionRecord>>,
}

impl SessionStore for MemoryStore {
    fn save(&self, record: &SessionRecord) -> std::io::Result<()> {
        self.records.lock().unwrap().insert(record.id.clone(), record.clone());
        Ok(())
    }

    fn load(&self, id: &str) -> std::io::Result<Option<SessionRecord>> {
        Ok(self.records.lock().unwrap().get(id).cloned())
    }
}

/// One JSON file per session under a directory.
pub struct DirStore {
    root: PathBuf,
}

impl DirStore {
    pub fn open(root: impl AsRef<Path>) -> std::io::Result<Self> {
        std::fs::create_dir_all(root.as_ref())?;
        Ok(Self { root: root.as_ref().to_path_buf() })
    }

    fn path(&self, id: &str) -> Option<PathBuf> {
        // Ids are generated server-side; anything else cannot name a file.
        let ok = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-');
        ok.then(|| self.root.join(format!("{id}.json")))
    }
}

impl SessionStore for DirStore {
    fn save(&self, record: &SessionRecord) -> std::io::Result<()> {
        let path = self
            .path(&record.id)
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "bad session id"))?;
        let tmp = path.with_extension("json.tmp");
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&serde_json::to_vec_pretty(record)?)?;
        f.sync_all()?;
        std::fs::rename(tmp, path)
    }

    fn load(&self, id: &str) -> std::io::Result<Option<SessionRecord>> {
        let Some(path) = self.path(id) else {
            return Ok(None);
        };
        match std::fs::read(path) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use policy_tree::env::EnvKind;

    fn record(id: &str) -> SessionRecord {
        SessionRecord {
            id: id.into(),
            env: EnvParams::default_for(EnvKind::Grid),
            baseline: BaselineKind::ValueIteration,
            build: BuildConfig::default(),
            controller: ControllerConfig::default(),
            seed: 5,
            actions: vec![LoggedAction { action: ActionId(2), mode: ActMode::Override }],
        }
    }

    #[test]
    fn dir_store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = DirStore::open(dir.path()).unwrap();
        store.save(&record("abc-1")).unwrap();
        assert_eq!(store.load("abc-1").unwrap(), Some(record("abc-1")));
        assert_eq!(store.load("missing").unwrap(), None);
    }

    #[test]
    fn path_like_ids_are_refused() {
        let dir = tempfile::tempdir().unwrap();
        let store = DirStore::open(dir.path()).unwrap();
        assert!(store.save(&record("../x")).is_err());
        assert_eq!(store.load("../x").unwrap(), None);
        assert_eq!(store.load("").unwrap(), None);
    }
}
