//! Candidate scoring by the LLM's belief that a neighborhood fact
//! supports the link, and re-ranking by the pooled score.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::index::EntityCandidate;
use crate::kg::{linearize, Triple};
use crate::llm::{yes_logprob, LlmBackend, LOGPROB_FLOOR};

/// Evidence reported for a candidate with no scored facts.
pub const EMPTY_EVIDENCE: &str = "(no evidence)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleScore {
    pub sentence: String,
    pub logprob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub candidate: EntityCandidate,
    pub triple_scores: Vec<TripleScore>,
    /// Mean of the fact scores; `None` when re-ranking was skipped.
    pub aggregate_score: Option<f64>,
    pub evidence_sentence: String,
}

impl ScoredCandidate {
    /// A candidate kept in retrieval order without any LLM scoring.
    pub fn unscored(candidate: EntityCandidate) -> Self {
        Self {
            candidate,
            triple_scores: Vec::new(),
            aggregate_score: None,
            evidence_sentence: EMPTY_EVIDENCE.to_string(),
        }
    }

    /// Builds a scored candidate from per-fact scores in neighborhood order.
    pub fn from_scores(candidate: EntityCandidate, triple_scores: Vec<TripleScore>) -> Self {
        let aggregate = aggregate(&triple_scores.iter().map(|t| t.logprob).collect::<Vec<_>>());
        // first maximum wins ties
        let evidence = triple_scores
            .iter()
            .fold(None::<&TripleScore>, |best, t| match best {
                Some(b) if b.logprob >= t.logprob => Some(b),
                _ => Some(t),
            })
            .map(|t| t.sentence.clone())
            .unwrap_or_else(|| EMPTY_EVIDENCE.to_string());
        Self {
            candidate,
            triple_scores,
            aggregate_score: Some(aggregate),
            evidence_sentence: evidence,
        }
    }
}

/// The alignment question asked once per (input text, fact) pair.
pub fn build_scoring_prompt(question: &str, context_sentence: &str) -> String {
    format!(
        "Given this input text: \"{question}\"\n\
         And the neighborhood context:\n\
         {context_sentence}\n\
         Is this the correct entity?\n\
         Answer with 'yes' or 'no'."
    )
}

/// Mean pooling; the floor for an empty list.
pub fn aggregate(logprobs: &[f64]) -> f64 {
    if logprobs.is_empty() {
        return LOGPROB_FLOOR;
    }
    // summing in sorted order makes the mean independent of input order
    let mut sorted = logprobs.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum::<f64>() / sorted.len() as f64
}

/// Outcome of scoring one candidate, with the facts that fell back to the
/// floor because the backend failed.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScoring {
    pub scored: ScoredCandidate,
    pub warnings: Vec<String>,
}

/// Scores each fact independently; a failed request scores at the floor.
pub async fn score_candidate(
    question: &str,
    candidate: EntityCandidate,
    triples: &[Triple],
    llm: &dyn LlmBackend,
    top_k: usize,
) -> CandidateScoring {
    let requests = triples.iter().map(|t| {
        let sentence = linearize(t);
        async move {
            let prompt = build_scoring_prompt(question, &sentence);
            let result = llm.next_token_logprobs(&prompt, top_k).await;
            (sentence, result)
        }
    });
    let mut scores = Vec::with_capacity(triples.len());
    let mut warnings = Vec::new();
    for (sentence, result) in futures::future::join_all(requests).await {
        let logprob = match result {
            Ok(alternatives) => yes_logprob(&alternatives),
            Err(e) => {
                warnings.push(format!(
                    "{}: scoring {sentence:?} failed, using floor: {e}",
                    candidate.entity_iri
                ));
                LOGPROB_FLOOR
            }
        };
        scores.push(TripleScore { sentence, logprob });
    }
    CandidateScoring {
        scored: ScoredCandidate::from_scores(candidate, scores),
        warnings,
    }
}

fn rank_order(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    let score = |c: &ScoredCandidate| c.aggregate_score.unwrap_or(f64::NEG_INFINITY);
    score(b)
        .total_cmp(&score(a))
        .then_with(|| a.candidate.retrieval_rank.cmp(&b.candidate.retrieval_rank))
        .then_with(|| a.candidate.entity_iri.cmp(&b.candidate.entity_iri))
}

/// Best first; ties keep retrieval order, then IRI order.
pub fn rank(mut scored: Vec<ScoredCandidate>) -> Vec<ScoredCandidate> {
    scored.sort_by(rank_order);
    scored
}
