//! SPARQL 1.1 protocol client (HTTP GET, JSON results).

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::Semaphore;

use super::{
    humanize_iri, truncate_literal, Direction, KgError, KnowledgeGraph, Triple, NAME_PREDICATES,
};
use crate::entity::is_absolute_iri;
use crate::index::reader::RDFS_LABEL;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparqlClientConfig {
    pub endpoint: String,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_in_flight() -> usize {
    4
}

fn default_timeout_secs() -> u64 {
    30
}

impl SparqlClientConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            max_in_flight: default_in_flight(),
            timeout_secs: default_timeout_secs(),
        }
    }
}

pub struct SparqlClient {
    http: reqwest::Client,
    endpoint: url::Url,
    in_flight: Semaphore,
}

/// One bound RDF term from a JSON results binding.
#[derive(Debug, Clone, PartialEq)]
enum Bound {
    Iri(String),
    Literal(String),
    Blank,
}

fn bound(binding: &Value, var: &str) -> Option<Bound> {
    let cell = binding.get(var)?;
    let value = cell.get("value")?.as_str()?.to_string();
    match cell.get("type")?.as_str()? {
        "uri" => Some(Bound::Iri(value)),
        "literal" | "typed-literal" => Some(Bound::Literal(value)),
        _ => Some(Bound::Blank),
    }
}

fn literal(binding: &Value, var: &str) -> Option<String> {
    match bound(binding, var)? {
        Bound::Literal(v) => Some(v),
        _ => None,
    }
}

pub(crate) fn bindings(results: &Value) -> Result<&Vec<Value>, KgError> {
    results
        .get("results")
        .and_then(|r| r.get("bindings"))
        .and_then(Value::as_array)
        .ok_or_else(|| KgError::Protocol("missing results.bindings".into()))
}

fn name_filter(var: &str) -> String {
    let excluded: Vec<String> = NAME_PREDICATES.iter().map(|p| format!("<{p}>")).collect();
    format!("FILTER(?{var} NOT IN ({}))", excluded.join(", "))
}

pub(crate) fn outgoing_query(iri: &str, k: usize) -> String {
    format!(
        "SELECT ?p ?o (MIN(?pl) AS ?pLabel) (MIN(?ol) AS ?oLabel) WHERE {{ \
         <{iri}> ?p ?o . {filter} FILTER(!isBlank(?o)) \
         OPTIONAL {{ ?p <{RDFS_LABEL}> ?pl }} OPTIONAL {{ ?o <{RDFS_LABEL}> ?ol }} }} \
         GROUP BY ?p ?o ORDER BY ?p ?o LIMIT {k}",
        filter = name_filter("p")
    )
}

pub(crate) fn incoming_query(iri: &str, k: usize) -> String {
    format!(
        "SELECT ?s ?p (MIN(?pl) AS ?pLabel) (MIN(?sl) AS ?sLabel) WHERE {{ \
         ?s ?p <{iri}> . {filter} FILTER(isIRI(?s) && ?s != <{iri}>) \
         OPTIONAL {{ ?p <{RDFS_LABEL}> ?pl }} OPTIONAL {{ ?s <{RDFS_LABEL}> ?sl }} }} \
         GROUP BY ?s ?p ORDER BY ?p ?s LIMIT {k}",
        filter = name_filter("p")
    )
}

pub(crate) fn label_query(iri: &str) -> String {
    format!("SELECT (MIN(?l) AS ?label) WHERE {{ <{iri}> <{RDFS_LABEL}> ?l }}")
}

impl SparqlClient {
    pub fn new(config: SparqlClientConfig) -> Result<Self, KgError> {
        let endpoint = url::Url::parse(&config.endpoint)
            .map_err(|e| KgError::Unreachable(format!("bad endpoint URL {:?}: {e}", config.endpoint)))?;
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| KgError::Unreachable(e.to_string()))?;
        Ok(Self {
            http,
            endpoint,
            in_flight: Semaphore::new(config.max_in_flight.max(1)),
        })
    }

    async fn select(&self, query: &str) -> Result<Value, KgError> {
        let _permit = self
            .in_flight
            .acquire()
            .await
            .map_err(|e| KgError::Unreachable(e.to_string()))?;
        let mut url = self.endpoint.clone();
        url.query_pairs_mut().append_pair("query", query);
        let resp = self
            .http
            .get(url)
            .header("Accept", "application/sparql-results+json")
            .send()
            .await
            .map_err(|e| KgError::Unreachable(e.to_string()))?;
        let status = resp.status();
        let body = resp
            .text()
            .await
            .map_err(|e| KgError::Unreachable(e.to_string()))?;
        if !status.is_success() {
            return Err(KgError::Unreachable(format!("status {status}: {body}")));
        }
        serde_json::from_str(&body).map_err(|e| KgError::Protocol(e.to_string()))
    }
}

#[async_trait]
impl KnowledgeGraph for SparqlClient {
    async fn fetch_neighborhood(&self, entity_iri: &str, k: usize) -> Result<Vec<Triple>, KgError> {
        if k == 0 {
            return Err(KgError::ZeroLimit);
        }
        if !is_absolute_iri(entity_iri) {
            return Err(KgError::InvalidIri(entity_iri.to_string()));
        }
        let queries = (
            label_query(entity_iri),
            outgoing_query(entity_iri, k),
            incoming_query(entity_iri, k),
        );
        let (label, outgoing, incoming) = futures::try_join!(
            self.select(&queries.0),
            self.select(&queries.1),
            self.select(&queries.2),
        )?;
        let focus_label = bindings(&label)?
            .first()
            .and_then(|b| literal(b, "label"))
            .unwrap_or_else(|| humanize_iri(entity_iri, None));
        let relation_name = |b: &Value, p: &str| {
            literal(b, "pLabel").unwrap_or_else(|| humanize_iri(p, None))
        };

        let mut triples = Vec::new();
        for b in bindings(&outgoing)? {
            let (Some(Bound::Iri(p)), Some(object)) = (bound(b, "p"), bound(b, "o")) else {
                return Err(KgError::Protocol("outgoing binding lacks ?p or ?o".into()));
            };
            let (tail, tail_iri) = match object {
                Bound::Iri(o) => (
                    literal(b, "oLabel").unwrap_or_else(|| humanize_iri(&o, None)),
                    Some(o),
                ),
                Bound::Literal(v) => (truncate_literal(&v), None),
                Bound::Blank => continue,
            };
            triples.push(Triple {
                head_iri: entity_iri.to_string(),
                head_label: focus_label.clone(),
                relation_label: relation_name(b, &p),
                relation_iri: p,
                tail,
                tail_iri,
                direction: Direction::Outgoing,
            });
        }
        for b in bindings(&incoming)? {
            let (Some(Bound::Iri(s)), Some(Bound::Iri(p))) = (bound(b, "s"), bound(b, "p")) else {
                continue;
            };
            triples.push(Triple {
                head_label: literal(b, "sLabel").unwrap_or_else(|| humanize_iri(&s, None)),
                head_iri: s,
                relation_label: relation_name(b, &p),
                relation_iri: p,
                tail: focus_label.clone(),
                tail_iri: Some(entity_iri.to_string()),
                direction: Direction::Incoming,
            });
        }
        triples.sort_by(Triple::neighborhood_order);
        triples.dedup();
        triples.truncate(k);
        Ok(triples)
    }
}
