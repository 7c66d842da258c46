//! HTTP annotation service: serves acquired windows to human annotators,
//! persists their votes in an append-only log and finalizes sessions into
//! an [`ExpertSet`](crate::training::ExpertSet).

mod server;
mod store;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::datasets::{load_canonical, CanonicalDataset, WindowedDataset, MANIFEST_FILE};

pub use server::{router, serve, BatchItem, CreateSession, SubmitLabels};
pub use store::{
    session_id, Finalized, ItemStatus, LabelSubmission, Progress, SessionMeta, SessionStore, SessionView, SubmitAck,
};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DatasetRef {
    pub name: String,
    #[serde(default = "default_split")]
    pub split: String,
}

fn default_split() -> String {
    "train".into()
}

impl DatasetRef {
    pub fn new(name: impl Into<String>, split: impl Into<String>) -> Self {
        Self { name: name.into(), split: split.into() }
    }
}

impl fmt::Display for DatasetRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.name, self.split)
    }
}

/// One split of a dataset with the metadata annotators need.
#[derive(Debug, Clone)]
pub struct DatasetEntry {
    pub data: WindowedDataset,
    pub class_names: Vec<String>,
    pub channel_names: Vec<String>,
    pub sample_rate_hz: f64,
}

/// Datasets a service can open sessions against, keyed by name and split.
#[derive(Debug, Clone, Default)]
pub struct DatasetRegistry {
    entries: BTreeMap<DatasetRef, Arc<DatasetEntry>>,
}

impl DatasetRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register every split of a loaded canonical dataset under `name`.
    pub fn insert(&mut self, name: &str, ds: CanonicalDataset) {
        let class_names = ds.manifest.class_names();
        let channel_names = ds.manifest.channel_names();
        for (split, data) in ds.splits {
            self.entries.insert(
                DatasetRef::new(name, split),
                Arc::new(DatasetEntry {
                    data,
                    class_names: class_names.clone(),
                    channel_names: channel_names.clone(),
                    sample_rate_hz: ds.manifest.sample_rate_hz,
                }),
            );
        }
    }

    /// Load each immediate subdirectory of `root` holding a manifest; the
    /// directory name becomes the dataset name.
    pub fn scan(root: &Path) -> crate::Result<Self> {
        let mut reg = Self::new();
        let entries = fs::read_dir(root).map_err(|e| crate::Error::io(root, e))?;
        let mut dirs: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(MANIFEST_FILE).exists())
            .collect();
        dirs.sort();
        for d in dirs {
            let name = d.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            reg.insert(&name, load_canonical(&d)?);
        }
        Ok(reg)
    }

    pub fn get(&self, r: &DatasetRef) -> Result<Arc<DatasetEntry>, ServiceError> {
        self.entries
            .get(r)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownDataset(r.to_string()))
    }

    pub fn refs(&self) -> Vec<DatasetRef> {
        self.entries.keys().cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ServiceError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("unknown dataset {0}")]
    UnknownDataset(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("session {0} is finalized")]
    Closed(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("{} items still unlabeled", .0.len())]
    Unlabeled(Vec<usize>),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "not_found",
            ServiceError::UnknownDataset(_) => "unknown_dataset",
            ServiceError::Conflict(_) => "conflict",
            ServiceError::Closed(_) => "session_closed",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::Unlabeled(_) => "unlabeled_items",
            ServiceError::Internal(_) => "internal",
        }
    }
}
