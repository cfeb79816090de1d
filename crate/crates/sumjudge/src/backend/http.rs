//! OpenAI-compatible completions client with logprob support.
//!
//! Talks to any server exposing the classic `/v1/completions` contract:
//! `model`, `prompt`, `temperature`, `top_p`, `max_tokens`, `logprobs` (an
//! integer k), and `n`. Transient transport failures are retried with
//! exponential backoff; a server that rejects the logprobs parameter is
//! reported as a capability error, never silently degraded.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{BackendError, Completion, DecodingParams, TokenDistribution, TokenUsage};
use crate::prompt::RenderedPrompt;

/// Environment variable holding the bearer token, when the server wants one.
pub const API_KEY_ENV: &str = "SUMJUDGE_API_KEY";

const MAX_RETRIES: u32 = 3;
const BACKOFF_START_MS: u64 = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackend {
    /// Base URL (e.g. `http://localhost:8000`); `/v1/completions` is appended
    /// unless the URL already ends with `/completions`.
    pub endpoint: String,
    pub model: String,
    /// Top-k alternatives requested per generated position. Callers size it
    /// as max(20, K) so every score token on the scale can surface.
    #[serde(default = "default_logprob_k")]
    pub logprob_k: u32,
    /// Use the server's `n` parameter for multi-sample draws instead of
    /// looping client-side.
    #[serde(default)]
    pub server_side_sampling: bool,
}

fn default_logprob_k() -> u32 {
    20
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        HttpBackend {
            endpoint: endpoint.into(),
            model: model.into(),
            logprob_k: default_logprob_k(),
            server_side_sampling: false,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.endpoint.is_empty() {
            return Err(BackendError::InvalidParams("empty endpoint".into()));
        }
        if self.model.is_empty() {
            return Err(BackendError::InvalidParams("empty model".into()));
        }
        Ok(())
    }

    fn url(&self) -> String {
        let trimmed = self.endpoint.trim_end_matches('/');
        if trimmed.ends_with("/completions") {
            trimmed.to_string()
        } else {
            format!("{trimmed}/v1/completions")
        }
    }

    pub(super) fn complete(
        &self,
        prompt: &RenderedPrompt,
        params: &DecodingParams,
        n: u32,
    ) -> Result<Vec<Completion>, BackendError> {
        self.validate()?;
        let body = json!({
            "model": self.model,
            "prompt": prompt.text,
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
            "logprobs": self.logprob_k,
            "n": n,
        });
        let response = self.post_with_retries(&body)?;
        parse_response(&response, n)
    }

    fn post_with_retries(&self, body: &serde_json::Value) -> Result<String, BackendError> {
        let url = self.url();
        let api_key = std::env::var(API_KEY_ENV).ok();
        let mut last_message = String::new();
        for attempt in 0..=MAX_RETRIES {
            if attempt > 0 {
                let backoff = BACKOFF_START_MS * 2u64.pow(attempt - 1);
                log::warn!("retrying {url} in {backoff} ms ({last_message})");
                std::thread::sleep(Duration::from_millis(backoff));
            }
            let mut request = ureq::post(&url).set("content-type", "application/json");
            if let Some(key) = &api_key {
                request = request.set("authorization", &format!("Bearer {key}"));
            }
            match request.send_json(body.clone()) {
                Ok(response) => {
                    return response.into_string().map_err(|e| BackendError::Transport {
                        attempts: attempt + 1,
                        message: format!("reading response body: {e}"),
                    })
                }
                Err(ureq::Error::Status(status, response)) => {
                    let text = response.into_string().unwrap_or_default();
                    if status == 429 || status >= 500 {
                        last_message = format!("HTTP {status}");
                        continue;
                    }
                    if status == 400 && text.to_ascii_lowercase().contains("logprob") {
                        return Err(BackendError::Capability(format!(
                            "server rejected the logprobs parameter: {text}"
                        )));
                    }
                    return Err(BackendError::Http { status, body: text });
                }
                Err(ureq::Error::Transport(t)) => {
                    last_message = t.to_string();
                }
            }
        }
        Err(BackendError::Transport {
            attempts: MAX_RETRIES + 1,
            message: last_message,
        })
    }
}

#[derive(Debug, Deserialize)]
struct CompletionsResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    text: String,
    #[serde(default)]
    logprobs: Option<Logprobs>,
}

#[derive(Debug, Deserialize)]
struct Logprobs {
    #[serde(default)]
    top_logprobs: Vec<BTreeMap<String, f64>>,
}

#[derive(Debug, Default, Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u32,
    #[serde(default)]
    completion_tokens: u32,
}

fn parse_response(raw: &str, expected_n: u32) -> Result<Vec<Completion>, BackendError> {
    let response: CompletionsResponse = serde_json::from_str(raw)
        .map_err(|e| BackendError::MalformedResponse(format!("{e}; body: {raw:.200}")))?;
    if response.choices.is_empty() {
        return Err(BackendError::MalformedResponse("no choices".into()));
    }
    if response.choices.len() != expected_n as usize {
        log::warn!(
            "asked for n={expected_n} completions, server returned {}",
            response.choices.len()
        );
    }
    let usage = response.usage.unwrap_or_default();
    let usage = TokenUsage {
        prompt_tokens: usage.prompt_tokens,
        completion_tokens: usage.completion_tokens,
    };
    Ok(response
        .choices
        .into_iter()
        .map(|choice| Completion {
            first_token_alternatives: choice
                .logprobs
                .as_ref()
                .and_then(|lp| score_position_alternatives(&lp.top_logprobs)),
            text: choice.text,
            usage,
        })
        .collect())
}

/// Pick the first generated position whose candidates include a digit token;
/// leading whitespace or label tokens are skipped. Falls back to position 0.
fn score_position_alternatives(
    top_logprobs: &[BTreeMap<String, f64>],
) -> Option<TokenDistribution> {
    let position = top_logprobs
        .iter()
        .position(|candidates| {
            candidates
                .keys()
                .any(|token| token.trim().chars().all(|c| c.is_ascii_digit()) && !token.trim().is_empty())
        })
        .unwrap_or(0);
    let candidates = top_logprobs.get(position)?;
    let entries = candidates
        .iter()
        .map(|(token, &lp)| (token.clone(), lp.exp().min(1.0)))
        .collect();
    Some(TokenDistribution { entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn url_appends_completions_path() {
        let b = HttpBackend::new("http://localhost:8000", "m");
        assert_eq!(b.url(), "http://localhost:8000/v1/completions");
        let b = HttpBackend::new("http://localhost:8000/", "m");
        assert_eq!(b.url(), "http://localhost:8000/v1/completions");
        let b = HttpBackend::new("http://host/v1/completions", "m");
        assert_eq!(b.url(), "http://host/v1/completions");
    }

    #[test]
    fn parses_text_and_logprobs() {
        let raw = r#"{
            "choices": [{
                "text": " 4",
                "logprobs": {"top_logprobs": [
                    {" 4": -0.2231435513, " 5": -1.6094379124}
                ]}
            }],
            "usage": {"prompt_tokens": 12, "completion_tokens": 1}
        }"#;
        let completions = parse_response(raw, 1).unwrap();
        assert_eq!(completions.len(), 1);
        assert_eq!(completions[0].text, " 4");
        let alts = completions[0].first_token_alternatives.as_ref().unwrap();
        assert!((alts.entries[" 4"] - 0.8).abs() < 1e-9);
        assert!((alts.entries[" 5"] - 0.2).abs() < 1e-9);
        assert_eq!(completions[0].usage.prompt_tokens, 12);
    }

    #[test]
    fn skips_label_tokens_before_the_score_position() {
        let raw = r#"{
            "choices": [{
                "text": "Score: 4",
                "logprobs": {"top_logprobs": [
                    {"Score": -0.01, ":": -5.0},
                    {":": -0.01},
                    {" 4": -0.3, " 3": -2.0}
                ]}
            }]
        }"#;
        let completions = parse_response(raw, 1).unwrap();
        let alts = completions[0].first_token_alternatives.as_ref().unwrap();
        assert!(alts.entries.contains_key(" 4"));
        assert!(!alts.entries.contains_key("Score"));
    }

    #[test]
    fn absent_logprobs_yield_none() {
        let raw = r#"{"choices": [{"text": "4"}]}"#;
        let completions = parse_response(raw, 1).unwrap();
        assert!(completions[0].first_token_alternatives.is_none());
    }

    #[test]
    fn malformed_body_is_an_error() {
        assert!(matches!(
            parse_response("not json", 1),
            Err(BackendError::MalformedResponse(_))
        ));
        assert!(matches!(
            parse_response(r#"{"choices": []}"#, 1),
            Err(BackendError::MalformedResponse(_))
        ));
    }
}
