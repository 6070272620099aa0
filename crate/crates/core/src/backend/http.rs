//! Client for servers speaking the completions API (`POST /v1/completions`).
//!
//! Generation requests greedy text with `echo: false`. Scoring requests the
//! echoed prompt log-probabilities for both `prefix` and
//! `prefix + continuation` and keeps the tokens after their longest common
//! token prefix, so a tokenizer that merges characters across the boundary is
//! reported as a misalignment instead of producing skewed scores.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{stream_span, Backend, BackendError, GeneratedSpan, TokenScore};

const MAX_GENERATION_REQUESTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens_per_request: usize,
    #[serde(default = "default_true")]
    pub supports_scoring: bool,
}

fn default_timeout_ms() -> u64 {
    60_000
}

fn default_max_tokens() -> usize {
    32
}

fn default_true() -> bool {
    true
}

impl HttpBackendConfig {
    pub fn new(base_url: &str, model: &str) -> Self {
        HttpBackendConfig {
            base_url: base_url.to_string(),
            model: model.to_string(),
            api_key_env: None,
            timeout_ms: default_timeout_ms(),
            max_tokens_per_request: default_max_tokens(),
            supports_scoring: true,
        }
    }
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    #[serde(default)]
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
    #[serde(default)]
    logprobs: Option<Logprobs>,
}

#[derive(Debug, Deserialize)]
struct Logprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    endpoint: String,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.config.model)
            .finish()
    }
}

impl HttpBackend {
    /// Resolves the API key from the environment; a declared but unset
    /// variable is an error.
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        if config.timeout_ms == 0 {
            return Err(BackendError::Transport("timeout must be positive".into()));
        }
        if config.max_tokens_per_request == 0 {
            return Err(BackendError::Transport(
                "max_tokens_per_request must be positive".into(),
            ));
        }
        let api_key = match &config.api_key_env {
            Some(var) if !var.is_empty() => Some(std::env::var(var).map_err(|_| {
                BackendError::Transport(format!("environment variable {var} is not set"))
            })?),
            _ => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let endpoint = format!("{}/v1/completions", config.base_url.trim_end_matches('/'));
        Ok(HttpBackend {
            config,
            api_key,
            agent,
            endpoint,
        })
    }

    pub fn config(&self) -> &HttpBackendConfig {
        &self.config
    }

    fn complete(
        &self,
        prompt: &str,
        max_tokens: usize,
        echo: bool,
    ) -> Result<Choice, BackendError> {
        let body = json!({
            "model": self.config.model,
            "prompt": prompt,
            "max_tokens": max_tokens,
            "temperature": 0,
            "logprobs": 1,
            "echo": echo,
        });
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| match e {
            ureq::Error::Timeout(t) => {
                BackendError::Timeout(format!("{} after {t}", self.endpoint))
            }
            other => BackendError::Transport(other.to_string()),
        })?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::Transport(format!(
                "HTTP {status}: {}",
                text.trim()
            )));
        }
        let parsed: CompletionResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Malformed(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Malformed("response has no choices".into()))
    }

    /// Echoed prompt tokens, cut where their text covers `prompt` exactly.
    fn echo_tokens(&self, prompt: &str) -> Result<Vec<(String, Option<f64>)>, BackendError> {
        let choice = self.complete(prompt, 0, true)?;
        let lp = choice.logprobs.ok_or(BackendError::UnsupportedScoring)?;
        if lp.tokens.len() != lp.token_logprobs.len() {
            return Err(BackendError::Malformed(format!(
                "{} tokens but {} log-probabilities",
                lp.tokens.len(),
                lp.token_logprobs.len()
            )));
        }
        let mut covered = 0;
        let mut out = Vec::new();
        for (tok, p) in lp.tokens.into_iter().zip(lp.token_logprobs) {
            if covered >= prompt.len() {
                break;
            }
            covered += tok.len();
            out.push((tok, p));
        }
        Ok(out)
    }
}

/// Tokens of `full` after the longest common token prefix with `prefix`.
pub(crate) fn align_suffix(
    prefix: &[(String, Option<f64>)],
    full: &[(String, Option<f64>)],
    continuation: &str,
) -> Result<Vec<TokenScore>, BackendError> {
    let common = prefix
        .iter()
        .zip(full)
        .take_while(|(a, b)| a.0 == b.0)
        .count();
    let suffix = &full[common..];
    let text: String = suffix.iter().map(|(t, _)| t.as_str()).collect();
    if text != continuation {
        return Err(BackendError::Misaligned(format!(
            "expected {continuation:?}, server tokens spell {text:?}"
        )));
    }
    suffix
        .iter()
        .map(|(t, p)| match p {
            Some(lp) if lp.is_finite() => Ok(TokenScore {
                token_text: t.clone(),
                logprob: *lp,
            }),
            _ => Err(BackendError::Malformed(format!(
                "missing log-probability for token {t:?}"
            ))),
        })
        .collect()
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        &self.config.model
    }

    fn supports_scoring(&self) -> bool {
        self.config.supports_scoring
    }

    fn generate_span(
        &self,
        prefix: &str,
        span_words: usize,
    ) -> Result<GeneratedSpan, BackendError> {
        let mut produced = String::new();
        let mut ended = false;
        stream_span(span_words, MAX_GENERATION_REQUESTS, || {
            if ended {
                return Ok(None);
            }
            let prompt = format!("{prefix}{produced}");
            let choice = self.complete(&prompt, self.config.max_tokens_per_request, false)?;
            // anything other than a length cut means the model stopped
            ended = choice.finish_reason.as_deref() != Some("length");
            if choice.text.is_empty() && ended {
                return Ok(None);
            }
            produced.push_str(&choice.text);
            Ok(Some(choice.text))
        })
    }

    fn score(&self, prefix: &str, continuation: &str) -> Result<Vec<TokenScore>, BackendError> {
        if !self.config.supports_scoring {
            return Err(BackendError::UnsupportedScoring);
        }
        if continuation.is_empty() {
            return Ok(Vec::new());
        }
        let before = self.echo_tokens(prefix)?;
        let after = self.echo_tokens(&format!("{prefix}{continuation}"))?;
        align_suffix(&before, &after, continuation)
    }
}
