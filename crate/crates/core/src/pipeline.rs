//! End-to-end linking: extract mentions, retrieve candidates, expand
//! neighborhoods, score facts and re-rank.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::index::{EntityCandidate, LabelIndex, DEFAULT_CANDIDATES};
use crate::kg::{KnowledgeGraph, Triple, DEFAULT_NEIGHBORS};
use crate::llm::{LlmBackend, DEFAULT_SCORING_TOP_K};
use crate::mention::{extract_mentions, Mention};
use crate::scoring::{rank, score_candidate, ScoredCandidate};

/// Default cap on backend calls per linked text.
pub const DEFAULT_CALL_BUDGET: usize = 2000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkMode {
    /// Re-rank candidates by pooled fact scores.
    #[default]
    Full,
    /// Keep the label index's order and skip the LLM re-ranking.
    TextOnly,
}

impl fmt::Display for LinkMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::TextOnly => "text_only",
        })
    }
}

impl std::str::FromStr for LinkMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Self::Full),
            "text_only" | "text-only" => Ok(Self::TextOnly),
            other => Err(format!("unknown mode {other:?} (expected full or text_only)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Received,
    Extracting,
    Extracted,
    Retrieving,
    Retrieved,
    Expanding,
    Scoring,
    Ranked,
    Done,
    Error,
}

impl Stage {
    pub fn is_terminal(self) -> bool {
        matches!(self, Self::Done | Self::Error)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Received => "received",
            Self::Extracting => "extracting",
            Self::Extracted => "extracted",
            Self::Retrieving => "retrieving",
            Self::Retrieved => "retrieved",
            Self::Expanding => "expanding",
            Self::Scoring => "scoring",
            Self::Ranked => "ranked",
            Self::Done => "done",
            Self::Error => "error",
        }
    }
}

/// A process-log entry emitted while linking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEvent {
    pub stage: Stage,
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
}

pub trait ProgressSink: Send + Sync {
    fn emit(&self, event: StageEvent);
}

/// Discards progress events.
pub struct NoProgress;

impl ProgressSink for NoProgress {
    fn emit(&self, _event: StageEvent) {}
}

impl<F: Fn(StageEvent) + Send + Sync> ProgressSink for F {
    fn emit(&self, event: StageEvent) {
        self(event)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span_id: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub extraction_ms: f64,
    pub retrieval_ms: f64,
    pub expansion_ms: f64,
    pub scoring_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkingResult {
    pub input_text: String,
    pub mode: LinkMode,
    pub mentions: Vec<Mention>,
    /// span id -> candidates, best first.
    pub ranked: BTreeMap<usize, Vec<ScoredCandidate>>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub errors: Vec<StageError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<StageTimings>,
}

impl LinkingResult {
    fn new(text: &str, mode: LinkMode) -> Self {
        Self {
            input_text: text.to_string(),
            mode,
            mentions: Vec::new(),
            ranked: BTreeMap::new(),
            warnings: Vec::new(),
            errors: Vec::new(),
            timings: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    /// Top-ranked IRI for a span, if any candidate was found.
    pub fn top1(&self, span_id: usize) -> Option<&str> {
        self.ranked
            .get(&span_id)
            .and_then(|c| c.first())
            .map(|c| c.candidate.entity_iri.as_str())
    }

    /// The result with wall-clock timings removed, for byte-stable output.
    pub fn without_timings(mut self) -> Self {
        self.timings = None;
        self
    }
}

/// One line of the final results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub span_id: usize,
    pub entity_label: String,
    pub dblp_type: String,
    /// `None` when re-ranking was skipped.
    pub logprob_score: Option<f64>,
    pub evidence_sentence: String,
    pub entity_url: String,
}

/// Flattens ranked lists into rows ordered by span id, best first.
pub fn result_rows(result: &LinkingResult) -> Vec<ResultRow> {
    result
        .ranked
        .iter()
        .flat_map(|(span_id, list)| {
            list.iter().map(move |s| ResultRow {
                span_id: *span_id,
                entity_label: s.candidate.label.clone(),
                dblp_type: s.candidate.kg_type.as_str().to_string(),
                logprob_score: s.aggregate_score,
                evidence_sentence: s.evidence_sentence.clone(),
                entity_url: s.candidate.entity_iri.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSettings {
    /// Candidates retrieved per mention.
    pub n: usize,
    /// Neighborhood facts per candidate.
    pub k: usize,
    /// Next-token alternatives requested per scoring prompt.
    pub scoring_top_k: usize,
    /// Maximum backend calls for one text.
    pub call_budget: usize,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            n: DEFAULT_CANDIDATES,
            k: DEFAULT_NEIGHBORS,
            scoring_top_k: DEFAULT_SCORING_TOP_K,
            call_budget: DEFAULT_CALL_BUDGET,
        }
    }
}

/// Anything that turns a text into a [`LinkingResult`].
#[async_trait]
pub trait Linker: Send + Sync {
    async fn link(&self, text: &str, mode: LinkMode) -> LinkingResult;
}

#[derive(Clone)]
pub struct Pipeline {
    pub llm: Arc<dyn LlmBackend>,
    pub index: Arc<LabelIndex>,
    pub kg: Arc<dyn KnowledgeGraph>,
    pub settings: PipelineSettings,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

impl Pipeline {
    pub fn new(
        llm: Arc<dyn LlmBackend>,
        index: Arc<LabelIndex>,
        kg: Arc<dyn KnowledgeGraph>,
        settings: PipelineSettings,
    ) -> Self {
        Self {
            llm,
            index,
            kg,
            settings,
        }
    }

    pub async fn link_with_progress(
        &self,
        text: &str,
        mode: LinkMode,
        sink: &dyn ProgressSink,
    ) -> LinkingResult {
        let started = Instant::now();
        let mut result = LinkingResult::new(text, mode);
        let mut timings = StageTimings::default();
        let emit = |stage: Stage, detail: String, payload: Option<Value>| {
            sink.emit(StageEvent {
                stage,
                detail,
                payload,
            })
        };

        emit(Stage::Extracting, "Extracting typed mentions".into(), None);
        let t = Instant::now();
        let extraction = extract_mentions(text, self.llm.as_ref()).await;
        timings.extraction_ms = ms_since(t);
        match extraction {
            Ok(parsed) => {
                result.mentions = parsed.mentions;
                result.warnings.extend(parsed.warnings);
            }
            Err(e) => {
                result.errors.push(StageError {
                    stage: Stage::Extracting,
                    span_id: None,
                    message: e.to_string(),
                });
                timings.total_ms = ms_since(started);
                result.timings = Some(timings);
                return result;
            }
        }
        emit(
            Stage::Extracted,
            format!("Found {} mention(s)", result.mentions.len()),
            Some(json!({ "mentions": result.mentions })),
        );

        emit(
            Stage::Retrieving,
            format!("Retrieving up to {} candidates per mention", self.settings.n),
            None,
        );
        let t = Instant::now();
        let mut candidates: BTreeMap<usize, Vec<EntityCandidate>> = BTreeMap::new();
        for m in &result.mentions {
            match self.index.search(&m.label, m.mention_type, self.settings.n) {
                Ok(found) => {
                    candidates.insert(m.span_id, found);
                }
                Err(e) => {
                    result.errors.push(StageError {
                        stage: Stage::Retrieving,
                        span_id: Some(m.span_id),
                        message: e.to_string(),
                    });
                    candidates.insert(m.span_id, Vec::new());
                }
            }
        }
        timings.retrieval_ms = ms_since(t);
        let total: usize = candidates.values().map(Vec::len).sum();
        emit(
            Stage::Retrieved,
            format!("Retrieved {total} candidate(s)"),
            Some(json!({
                "candidates": candidates.iter().map(|(span, list)| {
                    (span.to_string(), list.iter().map(|c| json!({
                        "entity_iri": c.entity_iri,
                        "label": c.label,
                        "kg_type": c.kg_type,
                    })).collect::<Vec<_>>().into())
                }).collect::<serde_json::Map<String, Value>>()
            })),
        );

        if mode == LinkMode::TextOnly {
            result.ranked = candidates
                .into_iter()
                .map(|(span, list)| (span, list.into_iter().map(ScoredCandidate::unscored).collect()))
                .collect();
            emit(Stage::Ranked, "Kept retrieval order".into(), Some(top_payload(&result)));
            timings.total_ms = ms_since(started);
            result.timings = Some(timings);
            return result;
        }

        emit(
            Stage::Expanding,
            format!("Fetching up to {} neighbors per candidate", self.settings.k),
            None,
        );
        let t = Instant::now();
        let neighborhoods = self.expand(&candidates).await;
        timings.expansion_ms = ms_since(t);

        let mut failed_spans = Vec::new();
        let mut work: Vec<(usize, EntityCandidate, Vec<Triple>)> = Vec::new();
        for (span, list) in candidates {
            let fetched = &neighborhoods[&span];
            if let Some(err) = fetched.iter().find_map(|r| r.as_ref().err()) {
                result.errors.push(StageError {
                    stage: Stage::Expanding,
                    span_id: Some(span),
                    message: err.to_string(),
                });
                failed_spans.push(span);
                continue;
            }
            for (cand, triples) in list.into_iter().zip(fetched) {
                work.push((span, cand, triples.clone().unwrap_or_default()));
            }
        }

        let facts: usize = work.iter().map(|(_, _, t)| t.len()).sum();
        let calls = 1 + facts;
        if calls > self.settings.call_budget {
            result.errors.push(StageError {
                stage: Stage::Scoring,
                span_id: None,
                message: format!(
                    "call budget exceeded: scoring needs {calls} backend calls, budget is {}",
                    self.settings.call_budget
                ),
            });
            result.ranked = result.mentions.iter().map(|m| (m.span_id, Vec::new())).collect();
            timings.total_ms = ms_since(started);
            result.timings = Some(timings);
            return result;
        }

        emit(
            Stage::Scoring,
            format!("Scoring {facts} fact(s) across {} candidate(s)", work.len()),
            Some(json!({ "facts": facts, "candidates": work.len() })),
        );
        let t = Instant::now();
        let question = text;
        let llm = self.llm.as_ref();
        let top_k = self.settings.scoring_top_k;
        let scored = futures::future::join_all(work.into_iter().map(|(span, cand, triples)| async move {
            let out = score_candidate(question, cand, &triples, llm, top_k).await;
            (span, out)
        }))
        .await;
        timings.scoring_ms = ms_since(t);

        let mut per_span: BTreeMap<usize, Vec<ScoredCandidate>> =
            result.mentions.iter().map(|m| (m.span_id, Vec::new())).collect();
        for (span, out) in scored {
            result.warnings.extend(out.warnings);
            per_span.entry(span).or_default().push(out.scored);
        }
        for span in failed_spans {
            per_span.insert(span, Vec::new());
        }
        result.ranked = per_span.into_iter().map(|(span, list)| (span, rank(list))).collect();
        emit(Stage::Ranked, "Re-ranked candidates".into(), Some(top_payload(&result)));

        timings.total_ms = ms_since(started);
        result.timings = Some(timings);
        result
    }

    async fn expand(
        &self,
        candidates: &BTreeMap<usize, Vec<EntityCandidate>>,
    ) -> BTreeMap<usize, Vec<Result<Vec<Triple>, crate::kg::KgError>>> {
        let k = self.settings.k;
        let kg = self.kg.as_ref();
        let fetches = candidates.iter().map(|(span, list)| async move {
            let per_candidate = futures::future::join_all(
                list.iter().map(|c| kg.fetch_neighborhood(&c.entity_iri, k)),
            )
            .await;
            (*span, per_candidate)
        });
        futures::future::join_all(fetches).await.into_iter().collect()
    }
}

fn top_payload(result: &LinkingResult) -> Value {
    json!({
        "top": result.ranked.iter().map(|(span, list)| {
            (span.to_string(), list.first().map(|s| json!({
                "entity_iri": s.candidate.entity_iri,
                "label": s.candidate.label,
                "score": s.aggregate_score,
            })).unwrap_or(Value::Null))
        }).collect::<serde_json::Map<String, Value>>()
    })
}

#[async_trait]
impl Linker for Pipeline {
    async fn link(&self, text: &str, mode: LinkMode) -> LinkingResult {
        self.link_with_progress(text, mode, &NoProgress).await
    }
}
