//! Client for the widely implemented JSON text-completion protocol
//! (`POST /v1/completions` with `prompt`, `max_tokens`, `logprobs`).

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use super::{top_k_sorted, LlmBackend, LlmError, TokenLogprob};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionClientConfig {
    /// Full URL of the completions endpoint.
    pub endpoint: String,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_in_flight() -> usize {
    4
}

fn default_timeout_secs() -> u64 {
    60
}

impl CompletionClientConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: None,
            api_key: None,
            max_in_flight: default_in_flight(),
            timeout_secs: default_timeout_secs(),
        }
    }
}

pub struct CompletionClient {
    http: reqwest::Client,
    config: CompletionClientConfig,
    in_flight: Semaphore,
}

impl CompletionClient {
    pub fn new(config: CompletionClientConfig) -> Result<Self, LlmError> {
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self {
            http,
            in_flight: Semaphore::new(config.max_in_flight.max(1)),
            config,
        })
    }

    fn body(&self, prompt: &str, max_tokens: u32, logprobs: Option<usize>) -> Value {
        let mut body = json!({
            "prompt": prompt,
            "max_tokens": max_tokens,
            "temperature": 0.0,
            "n": 1,
            "stream": false,
        });
        if let Some(model) = &self.config.model {
            body["model"] = json!(model);
        }
        if let Some(k) = logprobs {
            body["logprobs"] = json!(k);
        }
        body
    }

    async fn post(&self, body: Value) -> Result<Value, LlmError> {
        let _permit = self
            .in_flight
            .acquire()
            .await
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let mut req = self.http.post(&self.config.endpoint).json(&body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .await
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .await
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(LlmError::Backend {
                status: Some(status.as_u16()),
                detail: text,
            });
        }
        serde_json::from_str(&text)
            .map_err(|e| LlmError::backend(format!("malformed response body: {e}")))
    }
}

fn first_choice(resp: &Value) -> Result<&Value, LlmError> {
    if let Some(err) = resp.get("error") {
        return Err(LlmError::backend(err.to_string()));
    }
    resp.get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| LlmError::backend("response has no choices"))
}

/// Reads `choices[0].logprobs.top_logprobs[0]`, a token -> logprob map.
pub(crate) fn parse_top_logprobs(resp: &Value) -> Result<Vec<TokenLogprob>, LlmError> {
    let choice = first_choice(resp)?;
    let top = choice
        .get("logprobs")
        .and_then(|l| l.get("top_logprobs"))
        .and_then(|t| t.get(0))
        .and_then(Value::as_object)
        .ok_or_else(|| {
            LlmError::CapabilityMissing("response carries no top_logprobs for the first token".into())
        })?;
    top.iter()
        .map(|(token, lp)| {
            let lp = lp
                .as_f64()
                .ok_or_else(|| LlmError::backend(format!("non-numeric logprob for {token:?}")))?;
            // backends occasionally report tiny positive values for certain tokens
            Ok(TokenLogprob::new(token.clone(), lp.min(0.0)))
        })
        .collect()
}

#[async_trait]
impl LlmBackend for CompletionClient {
    async fn generate(&self, prompt: &str, max_tokens: u32) -> Result<String, LlmError> {
        if max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        let resp = self.post(self.body(prompt, max_tokens, None)).await?;
        first_choice(&resp)?
            .get("text")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| LlmError::backend("choice has no text"))
    }

    async fn next_token_logprobs(
        &self,
        prompt: &str,
        top_k: usize,
    ) -> Result<Vec<TokenLogprob>, LlmError> {
        if top_k == 0 {
            return Err(LlmError::InvalidRequest("top_k must be positive".into()));
        }
        let resp = self.post(self.body(prompt, 1, Some(top_k))).await?;
        Ok(top_k_sorted(&parse_top_logprobs(&resp)?, top_k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_top_logprobs() {
        let resp = json!({"choices": [{"text": " yes", "logprobs": {
            "tokens": [" yes"], "token_logprobs": [-0.3],
            "top_logprobs": [{" yes": -0.3, " no": -1.5, "Yes": 1e-9}]
        }}]});
        let mut got = parse_top_logprobs(&resp).unwrap();
        got.sort_by(|a, b| a.token.cmp(&b.token));
        assert_eq!(
            got,
            vec![
                TokenLogprob::new(" no", -1.5),
                TokenLogprob::new(" yes", -0.3),
                TokenLogprob::new("Yes", 0.0)
            ]
        );
    }

    #[test]
    fn missing_logprobs_is_capability_error() {
        let resp = json!({"choices": [{"text": "yes"}]});
        assert!(matches!(parse_top_logprobs(&resp), Err(LlmError::CapabilityMissing(_))));
        let resp = json!({"error": {"message": "overloaded"}});
        assert!(matches!(parse_top_logprobs(&resp), Err(LlmError::Backend { .. })));
    }
}
