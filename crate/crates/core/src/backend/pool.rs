use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    Backend, BackendError, HttpBackend, HttpBackendConfig, TableFile, TableLm, TableLmError,
    TokenScore,
};
use crate::ensemble::SpanCandidate;

/// One entry of a pool configuration file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PoolEntry {
    /// A table model, either stored in its own file (`path`, relative to the
    /// pool file) or inlined (`table`).
    Table {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        table: Option<TableFile>,
    },
    Http(HttpBackendConfig),
}

#[derive(Debug, Error)]
pub enum PoolError {
    #[error("reading pool config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing pool config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("pool has no models")]
    Empty,
    #[error("model {index} ({name}) cannot score spans")]
    NoScoring { index: usize, name: String },
    #[error("model {index}: {source}")]
    Table { index: usize, source: TableLmError },
    #[error("model {index}: table entry needs exactly one of \"path\" or \"table\"")]
    TableSource { index: usize },
    #[error("model {index}: {source}")]
    Http { index: usize, source: BackendError },
}

/// A backend failure attributed to one pool member.
#[derive(Debug, Clone, Error, PartialEq)]
#[error("model {index} ({name}): {source}")]
pub struct ModelError {
    pub index: usize,
    pub name: String,
    pub source: BackendError,
}

/// Ordered set of candidate models. Index `i` is the `i`-th configured entry
/// for the lifetime of the pool.
#[derive(Clone)]
pub struct EnsemblePool {
    models: Vec<Arc<dyn Backend>>,
}

impl std::fmt::Debug for EnsemblePool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list()
            .entries(self.models.iter().map(|m| m.name()))
            .finish()
    }
}

impl EnsemblePool {
    pub fn new(models: Vec<Arc<dyn Backend>>) -> Result<Self, PoolError> {
        if models.is_empty() {
            return Err(PoolError::Empty);
        }
        for (index, m) in models.iter().enumerate() {
            if !m.supports_scoring() {
                return Err(PoolError::NoScoring {
                    index,
                    name: m.name().to_string(),
                });
            }
        }
        Ok(EnsemblePool { models })
    }

    pub fn from_tables(tables: Vec<TableLm>) -> Result<Self, PoolError> {
        EnsemblePool::new(
            tables
                .into_iter()
                .map(|t| Arc::new(t) as Arc<dyn Backend>)
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.models.iter().map(|m| m.name().to_string()).collect()
    }

    pub fn model(&self, index: usize) -> &Arc<dyn Backend> {
        &self.models[index]
    }

    /// Pool made of a subset of this pool's members, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, PoolError> {
        EnsemblePool::new(indices.iter().map(|&i| self.models[i].clone()).collect())
    }

    fn wrap(&self, index: usize, source: BackendError) -> ModelError {
        ModelError {
            index,
            name: self.models[index].name().to_string(),
            source,
        }
    }

    pub fn generate_span(
        &self,
        index: usize,
        prefix: &str,
        span_words: usize,
    ) -> Result<SpanCandidate, ModelError> {
        let span = self.models[index]
            .generate_span(prefix, span_words)
            .map_err(|e| self.wrap(index, e))?;
        Ok(SpanCandidate {
            producer_index: index,
            text: span.text,
            word_count: span.word_count,
            finished: span.finished,
        })
    }

    pub fn score(
        &self,
        index: usize,
        prefix: &str,
        continuation: &str,
    ) -> Result<Vec<TokenScore>, ModelError> {
        let scores = self.models[index]
            .score(prefix, continuation)
            .map_err(|e| self.wrap(index, e))?;
        let spelled: String = scores.iter().map(|s| s.token_text.as_str()).collect();
        if spelled != continuation {
            return Err(self.wrap(
                index,
                BackendError::Misaligned(format!(
                    "tokens spell {spelled:?}, expected {continuation:?}"
                )),
            ));
        }
        Ok(scores)
    }
}

/// Overrides applied while instantiating backends.
#[derive(Debug, Clone, Default)]
pub struct PoolOverrides {
    pub timeout_ms: Option<u64>,
}

pub fn load_pool(path: &Path) -> Result<EnsemblePool, PoolError> {
    load_pool_with(path, &PoolOverrides::default())
}

pub fn load_pool_with(path: &Path, overrides: &PoolOverrides) -> Result<EnsemblePool, PoolError> {
    let raw = std::fs::read_to_string(path).map_err(|source| PoolError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let entries: Vec<PoolEntry> =
        serde_json::from_str(&raw).map_err(|source| PoolError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    build_pool(&entries, base, overrides)
}

/// Instantiates `entries` in order; relative table paths resolve against `base`.
pub fn build_pool(
    entries: &[PoolEntry],
    base: &Path,
    overrides: &PoolOverrides,
) -> Result<EnsemblePool, PoolError> {
    if entries.is_empty() {
        return Err(PoolError::Empty);
    }
    let mut models: Vec<Arc<dyn Backend>> = Vec::with_capacity(entries.len());
    for (index, entry) in entries.iter().enumerate() {
        let model: Arc<dyn Backend> = match entry {
            PoolEntry::Table { name, path, table } => {
                let lm = match (path, table) {
                    (Some(p), None) => {
                        let lm = TableLm::load(&base.join(p))
                            .map_err(|source| PoolError::Table { index, source })?;
                        match name {
                            Some(n) => rename(lm, n, index)?,
                            None => lm,
                        }
                    }
                    (None, Some(t)) => {
                        let default = name.clone().unwrap_or_else(|| format!("table-{index}"));
                        let mut t = t.clone();
                        if name.is_some() {
                            t.name = name.clone();
                        }
                        TableLm::from_file(t, &default)
                            .map_err(|source| PoolError::Table { index, source })?
                    }
                    _ => return Err(PoolError::TableSource { index }),
                };
                Arc::new(lm)
            }
            PoolEntry::Http(cfg) => {
                let mut cfg = cfg.clone();
                if let Some(t) = overrides.timeout_ms {
                    cfg.timeout_ms = t;
                }
                if !cfg.supports_scoring {
                    return Err(PoolError::NoScoring {
                        index,
                        name: cfg.model.clone(),
                    });
                }
                Arc::new(HttpBackend::new(cfg).map_err(|source| PoolError::Http { index, source })?)
            }
        };
        models.push(model);
    }
    EnsemblePool::new(models)
}

fn rename(lm: TableLm, name: &str, index: usize) -> Result<TableLm, PoolError> {
    let mut file = lm.to_file();
    file.name = Some(name.to_string());
    TableLm::from_file(file, name).map_err(|source| PoolError::Table { index, source })
}
