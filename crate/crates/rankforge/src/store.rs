//! Session store: live analyses in memory, persisted as JSON under
//! `<data_dir>/sessions/`.
//!
//! Reads share a session freely. Updates to one session are serialized by a
//! per-session gate; a second update arriving while one is in flight is
//! rejected with [`Error::Busy`] instead of queued.

use std::collections::HashMap;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use rankforge_core::history::{load_history, HistoryTable};
use rankforge_core::model::{RankeeRecord, RankingSystemSpec};
use rankforge_core::scenario::ScenarioFilter;
use rankforge_core::session::{Analysis, Session, SessionRequest};
use rankforge_core::{Error, Result};
use serde::Deserialize;
use tokio::sync::{Mutex, OwnedMutexGuard};

/// Where a new session's history comes from: a CSV under the data directory
/// or inline rows.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum HistorySource {
    Path { path: String },
    Rows { rows: Vec<RankeeRecord> },
}

#[derive(Debug, Clone, Deserialize)]
pub struct CreateSession {
    pub history: HistorySource,
    #[serde(flatten)]
    pub request: SessionRequest,
}

pub struct Entry {
    analysis: RwLock<Analysis>,
    gate: Arc<Mutex<()>>,
}

impl Entry {
    fn new(analysis: Analysis) -> Self {
        Self {
            analysis: RwLock::new(analysis),
            gate: Arc::new(Mutex::new(())),
        }
    }

    pub fn read(&self) -> RwLockReadGuard<'_, Analysis> {
        self.analysis.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> RwLockWriteGuard<'_, Analysis> {
        self.analysis.write().unwrap_or_else(|e| e.into_inner())
    }
}

pub struct SessionStore {
    data_dir: PathBuf,
    sessions: RwLock<HashMap<String, Arc<Entry>>>,
}

impl SessionStore {
    pub fn new(data_dir: impl Into<PathBuf>) -> Result<Self> {
        let data_dir = data_dir.into();
        std::fs::create_dir_all(data_dir.join("sessions"))?;
        Ok(Self {
            data_dir,
            sessions: RwLock::new(HashMap::new()),
        })
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    fn session_path(&self, id: &str) -> PathBuf {
        self.data_dir.join("sessions").join(format!("{id}.json"))
    }

    /// Resolves a history path relative to the data directory; paths that
    /// would escape it are rejected.
    pub fn resolve(&self, relative: &str) -> Result<PathBuf> {
        let p = Path::new(relative);
        if p.components().any(|c| !matches!(c, Component::Normal(_))) {
            return Err(Error::validation(format!(
                "history path `{relative}` must be relative to the data directory"
            )));
        }
        Ok(self.data_dir.join(p))
    }

    fn load_table(&self, source: HistorySource, spec: &RankingSystemSpec) -> Result<HistoryTable> {
        match source {
            HistorySource::Path { path } => {
                let full = self.resolve(&path)?;
                if !full.is_file() {
                    return Err(Error::NotFound(format!("history file `{path}`")));
                }
                load_history(full, spec)
            }
            HistorySource::Rows { rows } => HistoryTable::from_rows(rows, spec, "request"),
        }
    }

    pub fn create(&self, body: CreateSession) -> Result<(String, usize)> {
        let table = self.load_table(body.history, &body.request.spec)?;
        let id = uuid::Uuid::new_v4().to_string();
        let analysis = Analysis::create(body.request, &table, id.clone())?;
        analysis.session().save(self.session_path(&id))?;
        let count = analysis.session().scenario_count;
        self.sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id.clone(), Arc::new(Entry::new(analysis)));
        Ok((id, count))
    }

    /// The live session, reopening it from disk if this process has not seen it yet.
    pub fn get(&self, id: &str) -> Result<Arc<Entry>> {
        if let Some(e) = self.sessions.read().unwrap_or_else(|e| e.into_inner()).get(id) {
            return Ok(Arc::clone(e));
        }
        let valid = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-');
        let path = self.session_path(id);
        if !valid || !path.is_file() {
            return Err(Error::NotFound(format!("session `{id}`")));
        }
        let analysis = Analysis::open(Session::load(&path)?)?;
        let mut map = self.sessions.write().unwrap_or_else(|e| e.into_inner());
        let entry = map
            .entry(id.to_string())
            .or_insert_with(|| Arc::new(Entry::new(analysis)));
        Ok(Arc::clone(entry))
    }

    /// Claims the session's update gate. Fails with [`Error::Busy`] while
    /// another update holds it.
    pub fn begin_update(&self, id: &str) -> Result<(Arc<Entry>, OwnedMutexGuard<()>)> {
        let entry = self.get(id)?;
        let guard = Arc::clone(&entry.gate)
            .try_lock_owned()
            .map_err(|_| Error::Busy(id.to_string()))?;
        Ok((entry, guard))
    }

    fn save(&self, analysis: &Analysis) -> Result<()> {
        let session = analysis.session();
        session.save(self.session_path(&session.session_id))
    }

    pub fn push_filter(&self, id: &str, filter: ScenarioFilter) -> Result<usize> {
        let (entry, _gate) = self.begin_update(id)?;
        let mut analysis = entry.write();
        let count = analysis.apply_filter(filter)?;
        if let Err(e) = self.save(&analysis) {
            analysis.undo_filter()?;
            return Err(e);
        }
        Ok(count)
    }

    pub fn pop_filter(&self, id: &str) -> Result<usize> {
        let (entry, _gate) = self.begin_update(id)?;
        let mut analysis = entry.write();
        let last = analysis.session().filter_log.last().map(|e| e.filter.clone());
        let count = analysis.undo_filter()?;
        if let Err(e) = self.save(&analysis) {
            if let Some(f) = last {
                analysis.apply_filter(f)?;
            }
            return Err(e);
        }
        Ok(count)
    }
}
