//! Record/replay of backend interactions.
//!
//! A cassette is a JSON array of interactions keyed by the exact prompt
//! bytes and request parameter, so replay doubles as a check that prompts
//! reach the backend unmodified.

use std::path::Path;
use std::sync::Mutex;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{LlmBackend, LlmError, TokenLogprob};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Interaction {
    Generate {
        prompt: String,
        max_tokens: u32,
        text: String,
    },
    Logprobs {
        prompt: String,
        top_k: usize,
        logprobs: Vec<TokenLogprob>,
    },
}

/// Serves responses from a recorded cassette. Unknown requests fail.
#[derive(Debug)]
pub struct ReplayLlm {
    interactions: Vec<Interaction>,
}

impl ReplayLlm {
    pub fn new(interactions: Vec<Interaction>) -> Self {
        Self { interactions }
    }

    pub fn from_file(path: &Path) -> Result<Self, String> {
        let json = std::fs::read_to_string(path)
            .map_err(|e| format!("reading {}: {e}", path.display()))?;
        serde_json::from_str(&json)
            .map(Self::new)
            .map_err(|e| format!("{}: {e}", path.display()))
    }
}

#[async_trait]
impl LlmBackend for ReplayLlm {
    async fn generate(&self, prompt: &str, max_tokens: u32) -> Result<String, LlmError> {
        self.interactions
            .iter()
            .find_map(|i| match i {
                Interaction::Generate {
                    prompt: p,
                    max_tokens: m,
                    text,
                } if p == prompt && *m == max_tokens => Some(text.clone()),
                _ => None,
            })
            .ok_or_else(|| LlmError::backend("replay: no recorded generation for this prompt"))
    }

    async fn next_token_logprobs(
        &self,
        prompt: &str,
        top_k: usize,
    ) -> Result<Vec<TokenLogprob>, LlmError> {
        self.interactions
            .iter()
            .find_map(|i| match i {
                Interaction::Logprobs {
                    prompt: p,
                    top_k: k,
                    logprobs,
                } if p == prompt && *k == top_k => Some(logprobs.clone()),
                _ => None,
            })
            .ok_or_else(|| LlmError::backend("replay: no recorded logprobs for this prompt"))
    }
}

/// Wraps a live backend and records every successful interaction.
pub struct RecordingLlm<B> {
    inner: B,
    tape: Mutex<Vec<Interaction>>,
}

impl<B: LlmBackend> RecordingLlm<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            tape: Mutex::new(Vec::new()),
        }
    }

    pub fn interactions(&self) -> Vec<Interaction> {
        self.tape.lock().unwrap().clone()
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(&self.interactions())?;
        std::fs::write(path, json + "\n")
    }
}

#[async_trait]
impl<B: LlmBackend> LlmBackend for RecordingLlm<B> {
    async fn generate(&self, prompt: &str, max_tokens: u32) -> Result<String, LlmError> {
        let text = self.inner.generate(prompt, max_tokens).await?;
        self.tape.lock().unwrap().push(Interaction::Generate {
            prompt: prompt.to_string(),
            max_tokens,
            text: text.clone(),
        });
        Ok(text)
    }

    async fn next_token_logprobs(
        &self,
        prompt: &str,
        top_k: usize,
    ) -> Result<Vec<TokenLogprob>, LlmError> {
        let logprobs = self.inner.next_token_logprobs(prompt, top_k).await?;
        self.tape.lock().unwrap().push(Interaction::Logprobs {
            prompt: prompt.to_string(),
            top_k,
            logprobs: logprobs.clone(),
        });
        Ok(logprobs)
    }
}
