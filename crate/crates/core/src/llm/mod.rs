//! Uniform access to language models: free-form generation for mention
//! extraction and next-token log-probabilities for candidate scoring.

mod cassette;
mod http;
mod mock;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

pub use cassette::{Interaction, RecordingLlm, ReplayLlm};
pub use http::{CompletionClient, CompletionClientConfig};
pub use mock::{MockCall, MockLlm, MockRule, RuleTable};

/// Score assigned when no "yes" variant is present, and to anything that
/// could not be scored at all.
pub const LOGPROB_FLOOR: f64 = -100.0;

/// Default number of next-token alternatives requested for scoring.
pub const DEFAULT_SCORING_TOP_K: usize = 20;

/// Output budget for the extraction completion.
pub const EXTRACTION_MAX_TOKENS: u32 = 512;

/// One alternative for the next token, with its natural-log probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

impl TokenLogprob {
    pub fn new(token: impl Into<String>, logprob: f64) -> Self {
        Self {
            token: token.into(),
            logprob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend error{}: {detail}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Backend { status: Option<u16>, detail: String },
    #[error("backend cannot report next-token log-probabilities: {0}")]
    CapabilityMissing(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl LlmError {
    pub(crate) fn backend(detail: impl Into<String>) -> Self {
        Self::Backend {
            status: None,
            detail: detail.into(),
        }
    }
}

/// A language model backend.
///
/// Implementations must pass prompts through unmodified and decode
/// deterministically.
#[async_trait]
pub trait LlmBackend: Send + Sync {
    async fn generate(&self, prompt: &str, max_tokens: u32) -> Result<String, LlmError>;

    /// The `top_k` most probable tokens immediately following `prompt`,
    /// most probable first. Nothing is sampled.
    async fn next_token_logprobs(
        &self,
        prompt: &str,
        top_k: usize,
    ) -> Result<Vec<TokenLogprob>, LlmError>;
}

#[async_trait]
impl<T: LlmBackend + ?Sized> LlmBackend for std::sync::Arc<T> {
    async fn generate(&self, prompt: &str, max_tokens: u32) -> Result<String, LlmError> {
        (**self).generate(prompt, max_tokens).await
    }

    async fn next_token_logprobs(
        &self,
        prompt: &str,
        top_k: usize,
    ) -> Result<Vec<TokenLogprob>, LlmError> {
        (**self).next_token_logprobs(prompt, top_k).await
    }
}

/// Log of the total probability assigned to "yes".
///
/// Token surface forms differ between tokenizers (`yes`, ` yes`, `Yes`,
/// ` Yes`), so every entry that normalizes to `yes` contributes its mass.
/// Returns [`LOGPROB_FLOOR`] when none does.
pub fn yes_logprob(candidates: &[TokenLogprob]) -> f64 {
    let mut matched: Vec<f64> = candidates
        .iter()
        .filter(|t| t.token.trim().to_lowercase() == "yes")
        .map(|t| t.logprob)
        .collect();
    if matched.is_empty() {
        return LOGPROB_FLOOR;
    }
    // Fixed summation order keeps the result independent of input order.
    matched.sort_by(|a, b| b.total_cmp(a));
    let max = matched[0];
    if max == f64::NEG_INFINITY {
        return LOGPROB_FLOOR;
    }
    let sum: f64 = matched.iter().map(|l| (l - max).exp()).sum();
    (max + sum.ln()).min(0.0)
}

/// Checks the invariants of a next-token response: non-positive logprobs,
/// unique tokens, total mass at most one.
pub fn validate_logprobs(entries: &[TokenLogprob]) -> Result<(), String> {
    let mut seen = std::collections::HashSet::new();
    let mut mass = 0.0;
    for e in entries {
        if e.logprob.is_nan() || e.logprob > 0.0 {
            return Err(format!("logprob {} for token {:?} is not <= 0", e.logprob, e.token));
        }
        if !seen.insert(e.token.as_str()) {
            return Err(format!("duplicate token {:?}", e.token));
        }
        mass += e.logprob.exp();
    }
    if mass > 1.0 + 1e-6 {
        return Err(format!("probabilities sum to {mass} > 1"));
    }
    Ok(())
}

pub(crate) fn top_k_sorted(entries: &[TokenLogprob], top_k: usize) -> Vec<TokenLogprob> {
    let mut sorted = entries.to_vec();
    sorted.sort_by(|a, b| b.logprob.total_cmp(&a.logprob));
    sorted.truncate(top_k);
    sorted
}
