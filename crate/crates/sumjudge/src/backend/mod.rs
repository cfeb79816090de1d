//! Completion backends: an OpenAI-compatible HTTP client with logprob
//! support and a seeded deterministic mock used for testing and oracles.

mod http;
mod mock;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::RenderedPrompt;
use crate::scoring::ScoreScale;

pub use http::HttpBackend;
pub use mock::{MockProfile, MockRule};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("server returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("backend capability missing: {0}")]
    Capability(String),
    #[error("malformed server response: {0}")]
    MalformedResponse(String),
    #[error("invalid mock profile: {0}")]
    InvalidMockProfile(String),
    #[error("invalid decoding params: {0}")]
    InvalidParams(String),
    #[error("batch draw {index} failed: {source}")]
    BatchDrawFailed {
        index: u32,
        #[source]
        source: Box<BackendError>,
    },
}

/// Sampling configuration forwarded to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub n_samples: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl DecodingParams {
    /// Greedy preset shared by direct and logprob aggregation.
    pub fn direct() -> Self {
        DecodingParams {
            temperature: 0.0,
            top_p: 0.1,
            max_tokens: 256,
            n_samples: 1,
            seed: None,
        }
    }

    /// Sampling preset for approximation aggregation.
    pub fn approximation() -> Self {
        DecodingParams {
            temperature: 1.0,
            top_p: 0.1,
            max_tokens: 256,
            n_samples: 20,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.temperature < 0.0 {
            return Err(BackendError::InvalidParams(format!(
                "temperature {} is negative",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(BackendError::InvalidParams(format!(
                "top_p {} outside (0, 1]",
                self.top_p
            )));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidParams("max_tokens is zero".into()));
        }
        if self.n_samples == 0 {
            return Err(BackendError::InvalidParams("n_samples is zero".into()));
        }
        Ok(())
    }
}

/// Per-position candidate tokens with probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    pub entries: BTreeMap<String, f64>,
}

impl TokenDistribution {
    pub fn validate(&self) -> Result<(), BackendError> {
        let mut sum = 0.0;
        for (token, &p) in &self.entries {
            if !(0.0..=1.0).contains(&p) {
                return Err(BackendError::MalformedResponse(format!(
                    "probability {p} for token {token:?} outside [0, 1]"
                )));
            }
            sum += p;
        }
        if sum > 1.0 + 1e-9 {
            return Err(BackendError::MalformedResponse(format!(
                "token probabilities sum to {sum} > 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

/// One model completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    /// Top-k candidates at the first generated score position, when the
    /// backend supplies logprobs.
    pub first_token_alternatives: Option<TokenDistribution>,
    pub usage: TokenUsage,
}

/// Which backend serves completions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendDescriptor {
    Http(HttpBackend),
    Mock(MockProfile),
}

impl BackendDescriptor {
    pub fn mock(profile: MockProfile) -> Self {
        BackendDescriptor::Mock(profile)
    }

    /// Short identity string recorded in run manifests.
    pub fn identity(&self) -> String {
        match self {
            BackendDescriptor::Http(http) => format!("http:{}:{}", http.endpoint, http.model),
            BackendDescriptor::Mock(profile) => {
                let encoded = serde_json::to_string(profile).expect("profile serializes");
                format!(
                    "mock:{}",
                    crate::stable_hash::to_hex(crate::stable_hash::fnv1a64(encoded.as_bytes()))
                )
            }
        }
    }

    pub fn validate(&self, scale: &ScoreScale) -> Result<(), BackendError> {
        match self {
            BackendDescriptor::Http(http) => http.validate(),
            BackendDescriptor::Mock(profile) => profile.validate(scale),
        }
    }
}

/// Issue one completion (draw index 0).
pub fn complete(
    prompt: &RenderedPrompt,
    params: &DecodingParams,
    backend: &BackendDescriptor,
) -> Result<Completion, BackendError> {
    params.validate()?;
    match backend {
        BackendDescriptor::Mock(profile) => {
            profile.validate(&profile.scale)?;
            mock::complete(profile, prompt, params, 0)
        }
        BackendDescriptor::Http(http) => {
            let mut completions = http.complete(prompt, params, 1)?;
            completions.pop().ok_or_else(|| {
                BackendError::MalformedResponse("server returned no choices".into())
            })
        }
    }
}

/// Issue `params.n_samples` completions; draw indices run 0..n so the
/// sequence is reproducible under a fixed seed. A failed draw aborts the
/// batch, reporting its index.
pub fn sample_n(
    prompt: &RenderedPrompt,
    params: &DecodingParams,
    backend: &BackendDescriptor,
) -> Result<Vec<Completion>, BackendError> {
    params.validate()?;
    let n = params.n_samples;
    match backend {
        BackendDescriptor::Mock(profile) => {
            profile.validate(&profile.scale)?;
            (0..n)
                .map(|i| {
                    mock::complete(profile, prompt, params, i).map_err(|e| {
                        BackendError::BatchDrawFailed {
                            index: i,
                            source: Box::new(e),
                        }
                    })
                })
                .collect()
        }
        BackendDescriptor::Http(http) => {
            if http.server_side_sampling {
                http.complete(prompt, params, n)
            } else {
                let mut out = Vec::with_capacity(n as usize);
                for i in 0..n {
                    let mut one = http.complete(prompt, params, 1).map_err(|e| {
                        BackendError::BatchDrawFailed {
                            index: i,
                            source: Box::new(e),
                        }
                    })?;
                    out.push(one.pop().ok_or_else(|| BackendError::BatchDrawFailed {
                        index: i,
                        source: Box::new(BackendError::MalformedResponse(
                            "server returned no choices".into(),
                        )),
                    })?);
                }
                Ok(out)
            }
        }
    }
}
