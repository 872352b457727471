//! File-backed scenario store.
//!
//! Layout: `{root}/{id}/scenario.json`, `record.json`, `result.json`.
//! Files are written to a temporary name and renamed, so a crash never
//! leaves a half-written record behind.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use stormflux_core::Scenario;

use crate::ErrorBody;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub id: String,
    pub name: String,
    pub status: Status,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
    /// Set exactly when the status is done.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_ref: Option<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

#[derive(Debug)]
struct Entry {
    record: ScenarioRecord,
    scenario: Scenario,
    /// Serialized result, kept verbatim so repeated reads are identical.
    result: Option<Arc<String>>,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
    entries: Arc<RwLock<BTreeMap<String, Entry>>>,
}

fn write_atomic(path: &Path, text: &str) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)
}

impl Store {
    /// Opens (or creates) a store and loads every complete record in it.
    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        let mut entries = BTreeMap::new();
        for dir in std::fs::read_dir(&root)? {
            let dir = dir?.path();
            let (Ok(rec), Ok(scn)) = (
                std::fs::read_to_string(dir.join("record.json")),
                std::fs::read_to_string(dir.join("scenario.json")),
            ) else {
                continue;
            };
            let (Ok(record), Ok(scenario)) = (
                serde_json::from_str::<ScenarioRecord>(&rec),
                serde_json::from_str::<Scenario>(&scn),
            ) else {
                tracing::warn!("skipping unreadable store entry {}", dir.display());
                continue;
            };
            let result = if record.status == Status::Done {
                std::fs::read_to_string(dir.join("result.json")).ok().map(Arc::new)
            } else {
                None
            };
            entries.insert(
                record.id.clone(),
                Entry {
                    record,
                    scenario,
                    result,
                },
            );
        }
        Ok(Store {
            root,
            entries: Arc::new(RwLock::new(entries)),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn insert(&self, record: ScenarioRecord, scenario: Scenario) -> std::io::Result<()> {
        let dir = self.dir(&record.id);
        std::fs::create_dir_all(&dir)?;
        write_atomic(&dir.join("scenario.json"), &serde_json::to_string_pretty(&scenario)?)?;
        write_atomic(&dir.join("record.json"), &serde_json::to_string_pretty(&record)?)?;
        self.entries.write().expect("store lock").insert(
            record.id.clone(),
            Entry {
                record,
                scenario,
                result: None,
            },
        );
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<ScenarioRecord> {
        self.entries.read().expect("store lock").get(id).map(|e| e.record.clone())
    }

    pub fn scenario(&self, id: &str) -> Option<Scenario> {
        self.entries.read().expect("store lock").get(id).map(|e| e.scenario.clone())
    }

    pub fn result(&self, id: &str) -> Option<Arc<String>> {
        self.entries.read().expect("store lock").get(id).and_then(|e| e.result.clone())
    }

    pub fn list(&self) -> Vec<ScenarioRecord> {
        let mut v: Vec<_> = self
            .entries
            .read()
            .expect("store lock")
            .values()
            .map(|e| e.record.clone())
            .collect();
        v.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        v
    }

    /// Applies `f` to the record and persists it. Returns false when the
    /// record no longer exists (deleted while a job ran).
    pub fn update(&self, id: &str, f: impl FnOnce(&mut ScenarioRecord)) -> std::io::Result<bool> {
        let mut guard = self.entries.write().expect("store lock");
        let Some(entry) = guard.get_mut(id) else {
            return Ok(false);
        };
        f(&mut entry.record);
        entry.record.updated_at = Utc::now();
        write_atomic(
            &self.dir(id).join("record.json"),
            &serde_json::to_string_pretty(&entry.record)?,
        )?;
        Ok(true)
    }

    /// Stores a finished result and marks the record done.
    pub fn complete(&self, id: &str, result_json: String, warnings: Vec<String>) -> std::io::Result<bool> {
        let mut guard = self.entries.write().expect("store lock");
        let Some(entry) = guard.get_mut(id) else {
            return Ok(false);
        };
        let dir = self.dir(id);
        write_atomic(&dir.join("result.json"), &result_json)?;
        let now = Utc::now();
        entry.record.status = Status::Done;
        entry.record.warnings = warnings;
        entry.record.updated_at = now;
        entry.record.finished_at = Some(now);
        entry.record.result_ref = Some(format!("/v1/scenarios/{id}/result"));
        write_atomic(&dir.join("record.json"), &serde_json::to_string_pretty(&entry.record)?)?;
        entry.result = Some(Arc::new(result_json));
        Ok(true)
    }

    pub fn remove(&self, id: &str) -> std::io::Result<bool> {
        let removed = self.entries.write().expect("store lock").remove(id).is_some();
        if removed {
            let dir = self.dir(id);
            if dir.exists() {
                std::fs::remove_dir_all(dir)?;
            }
        }
        Ok(removed)
    }
}
