//! Long-term associative memory.
//!
//! A [`MemoryBank`] is an append-only list of timestamped texts. Retrieval
//! ranks records by a weighted sum of three signals:
//!
//! ```text
//! score = w_rel * cos(embed(query), embedding)
//!       + w_rec * exp(-ln2 / half_life * (latest_index - index))
//!       + w_imp * importance
//! ```
//!
//! Recency decays over insertion index, so retrieval does not depend on how
//! far the clock moved between records.

mod embedder;

use std::cmp::Ordering;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::kernel::Timestamp;
use crate::model::Model;

pub use embedder::{normalize, EmbedError, Embedder, HashEmbedder, HttpEmbedder};

#[derive(Debug, thiserror::Error)]
pub enum MemoryError {
    #[error("memory text is empty")]
    EmptyText,
    #[error(transparent)]
    Embedding(#[from] EmbedError),
    #[error("embedder returned dimension {got}, bank expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryRecord {
    /// Insertion index; also the record id.
    pub index: usize,
    pub text: String,
    pub timestamp: Timestamp,
    pub embedding: Vec<f64>,
    pub importance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalWeights {
    pub relevance: f64,
    pub recency: f64,
    pub importance: f64,
}

impl Default for RetrievalWeights {
    fn default() -> Self {
        RetrievalWeights {
            relevance: 1.0,
            recency: 1.0,
            importance: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryConfig {
    #[serde(default)]
    pub weights: RetrievalWeights,
    /// Recency half-life, in insertions.
    #[serde(default = "default_half_life")]
    pub half_life: f64,
}

fn default_half_life() -> f64 {
    100.0
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            weights: RetrievalWeights::default(),
            half_life: default_half_life(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRecord {
    pub record: MemoryRecord,
    pub score: f64,
}

pub const IMPORTANCE_PROMPT: &str =
    "On a scale from 0 to 1, how important is the following memory to the person who holds it?";

pub struct MemoryBank {
    embedder: Arc<dyn Embedder>,
    config: MemoryConfig,
    importance_model: Option<Model>,
    records: RwLock<Vec<MemoryRecord>>,
}

impl std::fmt::Debug for MemoryBank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MemoryBank")
            .field("len", &self.len())
            .field("config", &self.config)
            .finish()
    }
}

/// Total order used for ranking: higher score first, then higher index.
fn rank(a: &ScoredRecord, b: &ScoredRecord) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| b.record.index.cmp(&a.record.index))
}

impl MemoryBank {
    pub fn new(embedder: Arc<dyn Embedder>, config: MemoryConfig) -> Self {
        MemoryBank {
            embedder,
            config,
            importance_model: None,
            records: RwLock::new(Vec::new()),
        }
    }

    /// Scores importance of every new record with `model` when no explicit
    /// importance is given.
    pub fn with_importance_model(mut self, model: Model) -> Self {
        self.importance_model = Some(model);
        self
    }

    /// A new empty bank with the same embedder and retrieval settings.
    pub fn empty_like(&self) -> MemoryBank {
        MemoryBank {
            embedder: Arc::clone(&self.embedder),
            config: self.config.clone(),
            importance_model: self.importance_model.clone(),
            records: RwLock::new(Vec::new()),
        }
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.config
    }

    pub fn dimension(&self) -> usize {
        self.embedder.dimension()
    }

    pub fn len(&self) -> usize {
        self.records.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn score_importance(&self, text: &str) -> f64 {
        let Some(model) = &self.importance_model else {
            return 1.0;
        };
        let prompt = format!("{IMPORTANCE_PROMPT}\nMemory: {text}\nAnswer with a single number.");
        match model.sample_float(&prompt) {
            Ok(v) => v.clamp(0.0, 1.0),
            Err(_) => 1.0,
        }
    }

    /// Appends a record and returns its id. Importance defaults to 1.0 unless
    /// an importance model is configured.
    pub fn add(
        &self,
        text: &str,
        timestamp: Timestamp,
        importance: Option<f64>,
    ) -> Result<usize, MemoryError> {
        if text.trim().is_empty() {
            return Err(MemoryError::EmptyText);
        }
        let embedding = normalize(self.embedder.embed(text)?);
        if embedding.len() != self.embedder.dimension() {
            return Err(MemoryError::DimensionMismatch {
                expected: self.embedder.dimension(),
                got: embedding.len(),
            });
        }
        let importance = importance
            .unwrap_or_else(|| self.score_importance(text))
            .clamp(0.0, 1.0);
        let mut records = self.records.write();
        let index = records.len();
        records.push(MemoryRecord {
            index,
            text: text.to_string(),
            timestamp,
            embedding,
            importance,
        });
        Ok(index)
    }

    pub fn get(&self, index: usize) -> Option<MemoryRecord> {
        self.records.read().get(index).cloned()
    }

    pub fn all(&self) -> Vec<MemoryRecord> {
        self.records.read().clone()
    }

    pub fn texts(&self) -> Vec<String> {
        self.records.read().iter().map(|r| r.text.clone()).collect()
    }

    /// Every record scored against `query`, best first.
    pub fn score_all(&self, query: &str) -> Result<Vec<ScoredRecord>, MemoryError> {
        let records = self.records.read().clone();
        if records.is_empty() {
            return Ok(Vec::new());
        }
        let q = normalize(self.embedder.embed(query)?);
        let w = self.config.weights;
        let lambda = std::f64::consts::LN_2 / self.config.half_life;
        let latest = records.len() - 1;
        let mut scored: Vec<ScoredRecord> = records
            .into_iter()
            .map(|record| {
                let relevance: f64 = q.iter().zip(&record.embedding).map(|(a, b)| a * b).sum();
                let age = (latest - record.index) as f64;
                let recency = (-lambda * age).exp();
                let score =
                    w.relevance * relevance + w.recency * recency + w.importance * record.importance;
                ScoredRecord { record, score }
            })
            .collect();
        scored.sort_by(rank);
        Ok(scored)
    }

    pub fn retrieve_associative(&self, query: &str, k: usize) -> Result<Vec<MemoryRecord>, MemoryError> {
        let mut scored = self.score_all(query)?;
        scored.truncate(k);
        Ok(scored.into_iter().map(|s| s.record).collect())
    }

    /// The last `k` records, oldest first.
    pub fn retrieve_recent(&self, k: usize) -> Vec<MemoryRecord> {
        let records = self.records.read();
        let start = records.len().saturating_sub(k);
        records[start..].to_vec()
    }

    /// Records with `start <= timestamp <= end`, in insertion order.
    pub fn retrieve_by_time(&self, start: Timestamp, end: Timestamp) -> Vec<MemoryRecord> {
        self.records
            .read()
            .iter()
            .filter(|r| r.timestamp >= start && r.timestamp <= end)
            .cloned()
            .collect()
    }
}

/// One line per record: `[time] text`.
pub fn format_records(records: &[MemoryRecord]) -> String {
    records
        .iter()
        .map(|r| format!("[{}] {}", r.timestamp, r.text))
        .collect::<Vec<_>>()
        .join("\n")
}
