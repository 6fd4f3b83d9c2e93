//! One-hop knowledge graph neighborhoods, rendered as short sentences.

mod fixture;
mod sparql;

use std::cmp::Ordering;
use std::collections::HashMap;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

pub use fixture::FixtureStore;
pub use sparql::{SparqlClient, SparqlClientConfig};

/// Default number of neighborhood facts kept per candidate.
pub const DEFAULT_NEIGHBORS: usize = 10;

/// Literal tails longer than this many characters are truncated.
pub const MAX_LITERAL_CHARS: usize = 300;

const ELLIPSIS: char = '\u{2026}';

/// Predicates that carry names rather than facts; they are used to label
/// nodes and never appear in neighborhoods.
pub(crate) const NAME_PREDICATES: [&str; 2] = [
    crate::index::reader::RDFS_LABEL,
    crate::index::reader::SKOS_ALT_LABEL,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// The focus entity is the subject.
    Outgoing,
    /// The focus entity is the object.
    Incoming,
}

/// A one-hop fact around a focus entity, kept in its original
/// subject-predicate-object orientation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub head_iri: String,
    pub head_label: String,
    pub relation_iri: String,
    pub relation_label: String,
    /// Tail label, or the literal value.
    pub tail: String,
    /// `None` when the tail is a literal.
    pub tail_iri: Option<String>,
    pub direction: Direction,
}

impl Triple {
    /// Sort key: outgoing before incoming, then relation IRI, then the
    /// neighbor node (IRIs before literals, each by lexical form).
    fn order_key(&self) -> (Direction, &str, bool, &str) {
        let (is_literal, neighbor) = match self.direction {
            Direction::Outgoing => match &self.tail_iri {
                Some(iri) => (false, iri.as_str()),
                None => (true, self.tail.as_str()),
            },
            Direction::Incoming => (false, self.head_iri.as_str()),
        };
        (self.direction, &self.relation_iri, is_literal, neighbor)
    }

    pub fn neighborhood_order(a: &Triple, b: &Triple) -> Ordering {
        a.order_key().cmp(&b.order_key())
    }
}

/// Renders a triple as `<head> - <relation> - <tail>`.
pub fn linearize(t: &Triple) -> String {
    format!("{} - {} - {}", t.head_label, t.relation_label, t.tail)
}

/// A readable name for an IRI: the looked-up label when present, otherwise
/// the last path or fragment segment split at camelCase humps and
/// underscores into lowercase words.
pub fn humanize_iri(iri: &str, labels: Option<&HashMap<String, String>>) -> String {
    if let Some(label) = labels.and_then(|m| m.get(iri)) {
        return label.clone();
    }
    let trimmed = iri.trim_end_matches(['/', '#']);
    let local = trimmed.rsplit(['#', '/']).next().unwrap_or(trimmed);
    let words = split_identifier(local);
    if words.is_empty() {
        iri.to_string()
    } else {
        words.join(" ")
    }
}

fn split_identifier(s: &str) -> Vec<String> {
    let mut words = Vec::new();
    for part in s.split(['_', '-', ' ']).filter(|p| !p.is_empty()) {
        let chars: Vec<char> = part.chars().collect();
        let mut current = String::new();
        for (i, &c) in chars.iter().enumerate() {
            let boundary = i > 0 && c.is_uppercase() && {
                let prev = chars[i - 1];
                let next_lower = chars.get(i + 1).is_some_and(|n| n.is_lowercase());
                prev.is_lowercase() || prev.is_ascii_digit() || (prev.is_uppercase() && next_lower)
            };
            if boundary && !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            current.extend(c.to_lowercase());
        }
        if !current.is_empty() {
            words.push(current);
        }
    }
    words
}

pub(crate) fn truncate_literal(value: &str) -> String {
    match value.char_indices().nth(MAX_LITERAL_CHARS) {
        Some((cut, _)) => {
            let mut out = value[..cut].to_string();
            out.push(ELLIPSIS);
            out
        }
        None => value.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum KgError {
    #[error("knowledge graph unreachable: {0}")]
    Unreachable(String),
    #[error("invalid entity IRI {0:?}")]
    InvalidIri(String),
    #[error("malformed endpoint response: {0}")]
    Protocol(String),
    #[error("neighbor count must be at least 1")]
    ZeroLimit,
}

/// Source of one-hop neighborhoods.
#[async_trait]
pub trait KnowledgeGraph: Send + Sync {
    /// Up to `k` facts where `entity_iri` is subject or object, in
    /// [`Triple::neighborhood_order`]. Unknown entities yield an empty list.
    async fn fetch_neighborhood(&self, entity_iri: &str, k: usize) -> Result<Vec<Triple>, KgError>;
}

#[async_trait]
impl<T: KnowledgeGraph + ?Sized> KnowledgeGraph for std::sync::Arc<T> {
    async fn fetch_neighborhood(&self, entity_iri: &str, k: usize) -> Result<Vec<Triple>, KgError> {
        (**self).fetch_neighborhood(entity_iri, k).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn triple(head: &str, rel: &str, tail: &str) -> Triple {
        Triple {
            head_iri: format!("https://e.org/{head}"),
            head_label: head.into(),
            relation_iri: format!("https://e.org/{rel}"),
            relation_label: rel.into(),
            tail: tail.into(),
            tail_iri: None,
            direction: Direction::Outgoing,
        }
    }

    #[test]
    fn linearize_examples() {
        assert_eq!(
            linearize(&triple("Ashish Vaswani", "authored", "attention is all you need")),
            "Ashish Vaswani - authored - attention is all you need"
        );
        assert_eq!(linearize(&triple("X", "r", "Y")), "X - r - Y");
    }

    #[test]
    fn humanize_examples() {
        assert_eq!(humanize_iri("https://dblp.org/rdf/schema#authoredBy", None), "authored by");
        assert_eq!(
            humanize_iri("https://dblp.org/rdf/schema#publishedInStream", None),
            "published in stream"
        );
        assert_eq!(humanize_iri("http://www.w3.org/1999/02/22-rdf-syntax-ns#type", None), "type");
        assert_eq!(humanize_iri("https://e.org/has_DOI_link", None), "has doi link");
        assert_eq!(humanize_iri("https://e.org/XMLSchema", None), "xml schema");
        assert_eq!(humanize_iri("https://dblp.org/pid/c01/", None), "c01");
        let labels = HashMap::from([(
            "https://dblp.org/rdf/schema#authoredBy".to_string(),
            "Authored By (verbatim)".to_string(),
        )]);
        assert_eq!(
            humanize_iri("https://dblp.org/rdf/schema#authoredBy", Some(&labels)),
            "Authored By (verbatim)"
        );
    }

    #[test]
    fn long_literals_are_truncated() {
        let long = "é".repeat(400);
        let out = truncate_literal(&long);
        assert_eq!(out.chars().count(), MAX_LITERAL_CHARS + 1);
        assert!(out.ends_with(ELLIPSIS));
        assert_eq!(truncate_literal("short"), "short");
        assert_eq!(truncate_literal(&"a".repeat(300)), "a".repeat(300));
    }

    const LABEL: &str = "[a-z]([a-z -]{0,4}[a-z])?";

    proptest! {
        #[test]
        fn linearize_is_injective_without_separator(
            a in (LABEL, LABEL, LABEL),
            b in (LABEL, LABEL, LABEL),
        ) {
            let labels = [&a.0, &a.1, &a.2, &b.0, &b.1, &b.2];
            prop_assume!(labels.iter().all(|l| !l.contains(" - ")));
            let ta = triple(&a.0, &a.1, &a.2);
            let tb = triple(&b.0, &b.1, &b.2);
            if linearize(&ta) == linearize(&tb) {
                prop_assert_eq!((ta.head_label, ta.relation_label, ta.tail), (tb.head_label, tb.relation_label, tb.tail));
            }
        }
    }
}
