//! Type-partitioned label index serving top-n candidate retrieval.

mod bm25;
pub(crate) mod reader;
mod store;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::entity::{is_absolute_iri, KgType, MentionType};

pub use reader::{read_ntriples_labels, read_tsv, MalformedRecord};
pub use store::{IndexManifest, StorageError, INDEX_FORMAT, INDEX_FORMAT_VERSION};

use bm25::Partition;

/// Default number of candidates retrieved per mention.
pub const DEFAULT_CANDIDATES: usize = 10;

/// Added to the relevance score of documents whose normalized label or
/// alias equals the normalized query; text relevance alone stays far
/// below this.
pub const EXACT_MATCH_BOOST: f64 = 1.0e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub entity_iri: String,
    pub label: String,
    pub kg_type: KgType,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

impl LabelRecord {
    /// Validates and trims the record fields. Empty aliases are dropped.
    pub fn new(
        entity_iri: &str,
        label: &str,
        kg_type: KgType,
        aliases: impl IntoIterator<Item = String>,
    ) -> Result<Self, String> {
        let entity_iri = entity_iri.trim();
        if !is_absolute_iri(entity_iri) {
            return Err(format!("invalid IRI {entity_iri:?}"));
        }
        let label = label.trim();
        if label.is_empty() {
            return Err("empty label".into());
        }
        Ok(Self {
            entity_iri: entity_iri.to_string(),
            label: label.to_string(),
            kg_type,
            aliases: aliases
                .into_iter()
                .map(|a| a.trim().to_string())
                .filter(|a| !a.is_empty())
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityCandidate {
    pub entity_iri: String,
    pub label: String,
    pub kg_type: KgType,
    pub retrieval_score: f64,
    /// 1-based position in the retrieval response.
    pub retrieval_rank: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexStats {
    pub per_type: BTreeMap<KgType, usize>,
    pub total: usize,
}

impl IndexStats {
    pub fn count(&self, kg_type: KgType) -> usize {
        self.per_type.get(&kg_type).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SearchError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("candidate count must be at least 1")]
    ZeroLimit,
    #[error("unknown mention type {0:?}")]
    UnknownType(String),
}

/// Lowercases, trims, collapses internal whitespace and strips matching
/// surrounding quotation marks. Idempotent.
pub fn normalize_label(s: &str) -> String {
    const QUOTES: [(char, char); 4] = [('"', '"'), ('\'', '\''), ('\u{201c}', '\u{201d}'), ('\u{2018}', '\u{2019}')];
    let mut out = s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ");
    loop {
        let stripped = QUOTES.iter().find_map(|&(open, close)| {
            let inner = out.strip_prefix(open)?.strip_suffix(close)?;
            Some(inner.trim().to_string())
        });
        match stripped {
            Some(inner) => out = inner,
            None => return out,
        }
    }
}

/// Tokens of an already normalized string: maximal alphanumeric runs.
pub(crate) fn tokenize(normalized: &str) -> Vec<String> {
    normalized
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// In-memory label index with one full-text partition per entity class.
///
/// Ingestion requires `&mut self`; searches take `&self`, so a loaded
/// index can be shared behind an `Arc` by concurrent readers.
#[derive(Debug, Clone, Default)]
pub struct LabelIndex {
    partitions: BTreeMap<KgType, Partition>,
}

impl LabelIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces records keyed by IRI (last write wins).
    pub fn ingest<I>(&mut self, records: I) -> IndexStats
    where
        I: IntoIterator<Item = LabelRecord>,
    {
        for record in records {
            // an IRI re-ingested under a different class moves partitions
            for (ty, part) in self.partitions.iter_mut() {
                if *ty != record.kg_type {
                    part.remove(&record.entity_iri);
                }
            }
            self.partitions
                .entry(record.kg_type)
                .or_default()
                .upsert(record);
        }
        self.stats()
    }

    pub fn stats(&self) -> IndexStats {
        let per_type: BTreeMap<KgType, usize> = self
            .partitions
            .iter()
            .map(|(ty, p)| (*ty, p.len()))
            .filter(|(_, n)| *n > 0)
            .collect();
        IndexStats {
            total: per_type.values().sum(),
            per_type,
        }
    }

    /// All records, ordered by class then IRI.
    pub fn records(&self) -> Vec<LabelRecord> {
        self.partitions
            .iter()
            .flat_map(|(ty, p)| p.records(*ty))
            .collect()
    }

    /// Top-`n` candidates from the partition serving `mention_type`,
    /// ordered by score descending then IRI ascending.
    pub fn search(
        &self,
        query: &str,
        mention_type: MentionType,
        n: usize,
    ) -> Result<Vec<EntityCandidate>, SearchError> {
        if n == 0 {
            return Err(SearchError::ZeroLimit);
        }
        let normalized = normalize_label(query);
        if normalized.is_empty() {
            return Err(SearchError::EmptyQuery);
        }
        let kg_type = mention_type.kg_type();
        let Some(partition) = self.partitions.get(&kg_type) else {
            return Ok(Vec::new());
        };
        Ok(partition
            .search(&normalized, n)
            .into_iter()
            .enumerate()
            .map(|(i, hit)| EntityCandidate {
                entity_iri: hit.iri,
                label: hit.label,
                kg_type,
                retrieval_score: hit.score,
                retrieval_rank: i + 1,
            })
            .collect())
    }

    /// Like [`search`](Self::search) with the mention type given by name.
    pub fn search_named(
        &self,
        query: &str,
        mention_type: &str,
        n: usize,
    ) -> Result<Vec<EntityCandidate>, SearchError> {
        let ty = mention_type
            .parse::<MentionType>()
            .map_err(|_| SearchError::UnknownType(mention_type.to_string()))?;
        self.search(query, ty, n)
    }
}
