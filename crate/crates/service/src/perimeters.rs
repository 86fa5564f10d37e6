//! Named publication subsets that restrict queries.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Perimeter {
    pub perimeter_id: String,
    pub pub_ids: BTreeSet<String>,
}

#[derive(Debug, Error)]
pub enum PerimeterError {
    #[error("perimeter_id must not be empty")]
    EmptyId,
    #[error("perimeter store {path}: {source}")]
    Store { path: PathBuf, source: io::Error },
    #[error("perimeter store {path} is not valid JSON: {source}")]
    Corrupt { path: PathBuf, source: serde_json::Error },
}

/// In-memory registry with optional JSON persistence. Reads share the lock;
/// a registration holds it exclusively until the store file is rewritten.
#[derive(Debug, Default)]
pub struct PerimeterRegistry {
    entries: RwLock<BTreeMap<String, Arc<BTreeSet<String>>>>,
    path: Option<PathBuf>,
}

impl PerimeterRegistry {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens a persisted registry; a missing file starts empty.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, PerimeterError> {
        let path = path.into();
        let entries = match fs::read_to_string(&path) {
            Ok(text) => {
                let stored: BTreeMap<String, BTreeSet<String>> = serde_json::from_str(&text)
                    .map_err(|source| PerimeterError::Corrupt { path: path.clone(), source })?;
                stored.into_iter().map(|(k, v)| (k, Arc::new(v))).collect()
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => BTreeMap::new(),
            Err(source) => return Err(PerimeterError::Store { path, source }),
        };
        Ok(PerimeterRegistry { entries: RwLock::new(entries), path: Some(path) })
    }

    /// Stores or replaces a perimeter.
    pub fn register(&self, p: Perimeter) -> Result<(), PerimeterError> {
        let id = p.perimeter_id.trim();
        if id.is_empty() {
            return Err(PerimeterError::EmptyId);
        }
        let mut entries = self.entries.write().unwrap_or_else(|e| e.into_inner());
        let previous = entries.insert(id.to_string(), Arc::new(p.pub_ids));
        if let Some(path) = &self.path {
            if let Err(e) = persist(path, &entries) {
                match previous {
                    Some(old) => entries.insert(id.to_string(), old),
                    None => entries.remove(id),
                };
                return Err(e);
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<Arc<BTreeSet<String>>> {
        self.entries.read().unwrap_or_else(|e| e.into_inner()).get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn persist(path: &Path, entries: &BTreeMap<String, Arc<BTreeSet<String>>>) -> Result<(), PerimeterError> {
    let plain: BTreeMap<&str, &BTreeSet<String>> = entries.iter().map(|(k, v)| (k.as_str(), v.as_ref())).collect();
    let text = serde_json::to_string_pretty(&plain).expect("perimeters serialize");
    let tmp = path.with_extension("tmp");
    let io_err = |source| PerimeterError::Store { path: path.to_path_buf(), source };
    fs::write(&tmp, text).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}
