//! Okapi BM25 over label + alias text, one instance per partition.

use std::collections::{BTreeMap, HashMap};

use super::{normalize_label, tokenize, LabelRecord, EXACT_MATCH_BOOST};
use crate::entity::KgType;

const K1: f64 = 1.2;
const B: f64 = 0.75;

#[derive(Debug, Clone)]
struct Doc {
    record: LabelRecord,
    names: Vec<String>,
    len: usize,
}

#[derive(Debug, Clone, Default)]
pub(super) struct Partition {
    docs: BTreeMap<String, Doc>,
    /// term -> (iri -> term frequency)
    postings: HashMap<String, BTreeMap<String, u32>>,
    /// normalized label or alias -> iris
    exact: HashMap<String, Vec<String>>,
    total_len: usize,
}

pub(super) struct Hit {
    pub iri: String,
    pub label: String,
    pub score: f64,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn records(&self, kg_type: KgType) -> impl Iterator<Item = LabelRecord> + '_ {
        debug_assert!(self.docs.values().all(|d| d.record.kg_type == kg_type));
        self.docs.values().map(|d| d.record.clone())
    }

    pub fn remove(&mut self, iri: &str) {
        let Some(doc) = self.docs.remove(iri) else {
            return;
        };
        self.total_len -= doc.len;
        for name in &doc.names {
            for term in tokenize(name) {
                if let Some(p) = self.postings.get_mut(&term) {
                    p.remove(iri);
                    if p.is_empty() {
                        self.postings.remove(&term);
                    }
                }
            }
            if let Some(iris) = self.exact.get_mut(name) {
                iris.retain(|i| i != iri);
                if iris.is_empty() {
                    self.exact.remove(name);
                }
            }
        }
    }

    pub fn upsert(&mut self, record: LabelRecord) {
        self.remove(&record.entity_iri);
        let iri = record.entity_iri.clone();
        let mut names: Vec<String> = std::iter::once(&record.label)
            .chain(&record.aliases)
            .map(|s| normalize_label(s))
            .filter(|s| !s.is_empty())
            .collect();
        names.sort();
        names.dedup();
        let mut len = 0;
        for name in &names {
            for term in tokenize(name) {
                len += 1;
                *self
                    .postings
                    .entry(term)
                    .or_default()
                    .entry(iri.clone())
                    .or_insert(0) += 1;
            }
            let iris = self.exact.entry(name.clone()).or_default();
            if !iris.contains(&iri) {
                iris.push(iri.clone());
            }
        }
        self.total_len += len;
        self.docs.insert(iri, Doc { record, names, len });
    }

    pub fn search(&self, normalized_query: &str, n: usize) -> Vec<Hit> {
        let n_docs = self.docs.len() as f64;
        if n_docs == 0.0 {
            return Vec::new();
        }
        let avg_len = (self.total_len as f64 / n_docs).max(1.0);
        let mut terms = tokenize(normalized_query);
        terms.sort();
        terms.dedup();

        let mut scores: BTreeMap<&str, f64> = BTreeMap::new();
        for term in &terms {
            let Some(posting) = self.postings.get(term) else {
                continue;
            };
            let df = posting.len() as f64;
            let idf = (1.0 + (n_docs - df + 0.5) / (df + 0.5)).ln();
            for (iri, tf) in posting {
                let tf = f64::from(*tf);
                let doc_len = self.docs[iri].len as f64;
                let norm = tf * (K1 + 1.0) / (tf + K1 * (1.0 - B + B * doc_len / avg_len));
                *scores.entry(iri.as_str()).or_insert(0.0) += idf * norm;
            }
        }
        if let Some(iris) = self.exact.get(normalized_query) {
            for iri in iris {
                *scores.entry(iri.as_str()).or_insert(0.0) += EXACT_MATCH_BOOST;
            }
        }

        let mut hits: Vec<(&str, f64)> = scores.into_iter().collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        hits.truncate(n);
        hits.into_iter()
            .map(|(iri, score)| Hit {
                iri: iri.to_string(),
                label: self.docs[iri].record.label.clone(),
                score,
            })
            .collect()
    }
}
