//! Deterministic in-process backend driven by a rule table.
//!
//! Rule table schema (JSON):
//!
//! ```json
//! {
//!   "echo": false,
//!   "supports_logprobs": true,
//!   "rules": [
//!     { "contains": ["Sentence: \"neurips\""], "completion": "[{\"label\":\"neurips\",\"type\":\"venue\"}]" },
//!     { "contains": ["authored - attention"], "logprobs": [{"token": "yes", "logprob": -0.2}] }
//!   ],
//!   "default_completion": null,
//!   "default_logprobs": [{"token": "no", "logprob": -0.2}, {"token": "yes", "logprob": -2.0}]
//! }
//! ```
//!
//! A rule matches when every `contains` pattern is a substring of the prompt.
//! Generation consults only rules carrying a `completion`, logprob requests
//! only rules carrying `logprobs`; the first match in file order wins.

use std::path::Path;
use std::sync::Mutex;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{top_k_sorted, validate_logprobs, LlmBackend, LlmError, TokenLogprob};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleTable {
    /// Echo the prompt back when no completion rule matches.
    #[serde(default)]
    pub echo: bool,
    #[serde(default = "default_true")]
    pub supports_logprobs: bool,
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub default_completion: Option<String>,
    #[serde(default)]
    pub default_logprobs: Option<Vec<TokenLogprob>>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    pub contains: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<TokenLogprob>>,
}

impl MockRule {
    fn matches(&self, prompt: &str) -> bool {
        self.contains.iter().all(|p| prompt.contains(p.as_str()))
    }
}

impl RuleTable {
    pub fn from_json(json: &str) -> Result<Self, String> {
        let table: RuleTable = serde_json::from_str(json).map_err(|e| e.to_string())?;
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<(), String> {
        for (i, rule) in self.rules.iter().enumerate() {
            if rule.contains.is_empty() || rule.contains.iter().any(String::is_empty) {
                return Err(format!("rule {i}: `contains` must list non-empty patterns"));
            }
            if rule.completion.is_none() && rule.logprobs.is_none() {
                return Err(format!("rule {i}: needs `completion` or `logprobs`"));
            }
            if let Some(lp) = &rule.logprobs {
                validate_logprobs(lp).map_err(|e| format!("rule {i}: {e}"))?;
            }
        }
        if let Some(lp) = &self.default_logprobs {
            validate_logprobs(lp).map_err(|e| format!("default_logprobs: {e}"))?;
        }
        Ok(())
    }
}

/// A request observed by the mock.
#[derive(Debug, Clone, PartialEq)]
pub enum MockCall {
    Generate { prompt: String, max_tokens: u32 },
    Logprobs { prompt: String, top_k: usize },
}

#[derive(Debug, Default)]
pub struct MockLlm {
    table: RuleTable,
    calls: Mutex<Vec<MockCall>>,
}

impl MockLlm {
    pub fn new(table: RuleTable) -> Self {
        Self {
            table,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn from_json(json: &str) -> Result<Self, String> {
        RuleTable::from_json(json).map(Self::new)
    }

    pub fn from_file(path: &Path) -> Result<Self, String> {
        let json = std::fs::read_to_string(path)
            .map_err(|e| format!("reading {}: {e}", path.display()))?;
        Self::from_json(&json).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// A mock that answers every generation with `completion`.
    pub fn with_completion(completion: impl Into<String>) -> Self {
        Self::new(RuleTable {
            default_completion: Some(completion.into()),
            supports_logprobs: true,
            ..RuleTable::default()
        })
    }

    pub fn table(&self) -> &RuleTable {
        &self.table
    }

    pub fn calls(&self) -> Vec<MockCall> {
        self.calls.lock().unwrap().clone()
    }

    fn record(&self, call: MockCall) {
        self.calls.lock().unwrap().push(call);
    }
}

#[async_trait]
impl LlmBackend for MockLlm {
    async fn generate(&self, prompt: &str, max_tokens: u32) -> Result<String, LlmError> {
        if max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        self.record(MockCall::Generate {
            prompt: prompt.to_string(),
            max_tokens,
        });
        let scripted = self
            .table
            .rules
            .iter()
            .filter(|r| r.matches(prompt))
            .find_map(|r| r.completion.clone());
        match scripted.or_else(|| self.table.default_completion.clone()) {
            Some(text) => Ok(text),
            None if self.table.echo => Ok(prompt.to_string()),
            None => Err(LlmError::backend("mock: no completion rule matched the prompt")),
        }
    }

    async fn next_token_logprobs(
        &self,
        prompt: &str,
        top_k: usize,
    ) -> Result<Vec<TokenLogprob>, LlmError> {
        if top_k == 0 {
            return Err(LlmError::InvalidRequest("top_k must be positive".into()));
        }
        if !self.table.supports_logprobs {
            return Err(LlmError::CapabilityMissing("mock configured without logprobs".into()));
        }
        self.record(MockCall::Logprobs {
            prompt: prompt.to_string(),
            top_k,
        });
        let scripted = self
            .table
            .rules
            .iter()
            .filter(|r| r.matches(prompt))
            .find_map(|r| r.logprobs.as_ref());
        match scripted.or(self.table.default_logprobs.as_ref()) {
            Some(entries) => Ok(top_k_sorted(entries, top_k)),
            None => Err(LlmError::backend("mock: no logprob rule matched the prompt")),
        }
    }
}
