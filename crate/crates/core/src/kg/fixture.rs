//! In-memory graph loaded from N-Triples, for hermetic runs and tests.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use async_trait::async_trait;
use oxrdf::{Subject, Term};
use oxttl::NTriplesParser;

use super::{
    humanize_iri, truncate_literal, Direction, KgError, KnowledgeGraph, Triple, NAME_PREDICATES,
};
use crate::index::reader::RDFS_LABEL;

#[derive(Debug, Clone)]
enum Object {
    Iri(String),
    Literal(String),
}

#[derive(Debug, Clone)]
struct Fact {
    subject: String,
    predicate: String,
    object: Object,
}

#[derive(Debug, Default)]
pub struct FixtureStore {
    facts: Vec<Fact>,
    by_subject: HashMap<String, Vec<usize>>,
    by_object: HashMap<String, Vec<usize>>,
    labels: HashMap<String, String>,
}

impl FixtureStore {
    /// Parses N-Triples, failing on the first syntax error. Blank nodes
    /// are dropped.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self, String> {
        let mut store = Self::default();
        for (i, triple) in NTriplesParser::new().for_reader(reader).enumerate() {
            let triple = triple.map_err(|e| format!("triple {}: {e}", i + 1))?;
            let Subject::NamedNode(subject) = triple.subject else {
                continue;
            };
            let object = match triple.object {
                Term::NamedNode(n) => Object::Iri(n.into_string()),
                Term::Literal(l) => Object::Literal(l.value().to_string()),
                _ => continue,
            };
            store.insert(subject.into_string(), triple.predicate.into_string(), object);
        }
        Ok(store)
    }

    pub fn from_file(path: &Path) -> Result<Self, String> {
        let file = std::fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_reader(std::io::BufReader::new(file)).map_err(|e| format!("{}: {e}", path.display()))
    }

    fn insert(&mut self, subject: String, predicate: String, object: Object) {
        if predicate == RDFS_LABEL {
            if let Object::Literal(label) = &object {
                self.labels.entry(subject.clone()).or_insert_with(|| label.clone());
            }
        }
        let id = self.facts.len();
        self.by_subject.entry(subject.clone()).or_default().push(id);
        if let Object::Iri(o) = &object {
            self.by_object.entry(o.clone()).or_default().push(id);
        }
        self.facts.push(Fact {
            subject,
            predicate,
            object,
        });
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn label_of(&self, iri: &str) -> Option<&str> {
        self.labels.get(iri).map(String::as_str)
    }

    fn name(&self, iri: &str) -> String {
        humanize_iri(iri, Some(&self.labels))
    }

    /// Every neighborhood fact of `iri`, fully ordered and uncapped.
    pub fn all_facts(&self, iri: &str) -> Vec<Triple> {
        let focus_label = self.name(iri);
        let mut out = Vec::new();
        for &id in self.by_subject.get(iri).into_iter().flatten() {
            let fact = &self.facts[id];
            if NAME_PREDICATES.contains(&fact.predicate.as_str()) {
                continue;
            }
            let (tail, tail_iri) = match &fact.object {
                Object::Iri(o) => (self.name(o), Some(o.clone())),
                Object::Literal(v) => (truncate_literal(v), None),
            };
            out.push(Triple {
                head_iri: iri.to_string(),
                head_label: focus_label.clone(),
                relation_iri: fact.predicate.clone(),
                relation_label: self.name(&fact.predicate),
                tail,
                tail_iri,
                direction: Direction::Outgoing,
            });
        }
        for &id in self.by_object.get(iri).into_iter().flatten() {
            let fact = &self.facts[id];
            // self-loops were already listed as outgoing
            if fact.subject == iri || NAME_PREDICATES.contains(&fact.predicate.as_str()) {
                continue;
            }
            out.push(Triple {
                head_iri: fact.subject.clone(),
                head_label: self.name(&fact.subject),
                relation_iri: fact.predicate.clone(),
                relation_label: self.name(&fact.predicate),
                tail: focus_label.clone(),
                tail_iri: Some(iri.to_string()),
                direction: Direction::Incoming,
            });
        }
        out.sort_by(Triple::neighborhood_order);
        out.dedup();
        out
    }
}

#[async_trait]
impl KnowledgeGraph for FixtureStore {
    async fn fetch_neighborhood(&self, entity_iri: &str, k: usize) -> Result<Vec<Triple>, KgError> {
        if k == 0 {
            return Err(KgError::ZeroLimit);
        }
        let mut facts = self.all_facts(entity_iri);
        facts.truncate(k);
        Ok(facts)
    }
}
