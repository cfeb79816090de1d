//! Seeded deterministic mock backend.
//!
//! Every draw is keyed by (prompt fingerprint, seed, draw index) through the
//! stable FNV-1a hash, so identical inputs produce identical completions
//! across processes and platforms.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BackendError, Completion, DecodingParams, TokenDistribution, TokenUsage};
use crate::prompt::{ExpectedOutput, RenderedPrompt};
use crate::scoring::ScoreScale;
use crate::stable_hash::draw_seed;

/// One matcher → score-distribution rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRule {
    /// Applies when the rendered prompt text contains this substring.
    pub matcher: String,
    pub distribution: BTreeMap<i64, f64>,
}

/// Deterministic stand-in for a model: a rule table over score
/// distributions plus an optional canned rationale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockProfile {
    pub scale: ScoreScale,
    #[serde(default)]
    pub rules: Vec<MockRule>,
    pub default: BTreeMap<i64, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale_template: Option<String>,
}

impl MockProfile {
    /// Profile with no rules, answering every prompt from one distribution.
    pub fn uniform_default(scale: ScoreScale, default: BTreeMap<i64, f64>) -> Self {
        MockProfile {
            scale,
            rules: Vec::new(),
            default,
            rationale_template: None,
        }
    }

    pub fn validate(&self, run_scale: &ScoreScale) -> Result<(), BackendError> {
        if self.scale != *run_scale {
            return Err(BackendError::InvalidMockProfile(format!(
                "profile scale {}..{} does not match run scale {}..{}",
                self.scale.min, self.scale.max, run_scale.min, run_scale.max
            )));
        }
        check_distribution(&self.scale, &self.default, "default")?;
        for (i, rule) in self.rules.iter().enumerate() {
            check_distribution(&self.scale, &rule.distribution, &format!("rule {i}"))?;
        }
        Ok(())
    }

    fn rule_for(&self, prompt_text: &str) -> &BTreeMap<i64, f64> {
        self.rules
            .iter()
            .find(|r| prompt_text.contains(&r.matcher))
            .map(|r| &r.distribution)
            .unwrap_or(&self.default)
    }
}

fn check_distribution(
    scale: &ScoreScale,
    dist: &BTreeMap<i64, f64>,
    label: &str,
) -> Result<(), BackendError> {
    let mut sum = 0.0;
    for (&score, &p) in dist {
        if !scale.contains(score) {
            return Err(BackendError::InvalidMockProfile(format!(
                "{label}: score {score} outside the scale"
            )));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(BackendError::InvalidMockProfile(format!(
                "{label}: probability {p} outside [0, 1]"
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(BackendError::InvalidMockProfile(format!(
            "{label}: distribution sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Argmax with ties broken toward the lower score.
fn argmax(dist: &BTreeMap<i64, f64>) -> i64 {
    let mut best_score = i64::MIN;
    let mut best_p = f64::NEG_INFINITY;
    for (&score, &p) in dist {
        if p > best_p {
            best_p = p;
            best_score = score;
        }
    }
    best_score
}

/// One inverse-CDF draw over ascending scores.
fn sample(dist: &BTreeMap<i64, f64>, fingerprint: &str, seed: u64, draw_index: u32) -> i64 {
    let mut rng = ChaCha8Rng::seed_from_u64(draw_seed(fingerprint, seed, draw_index));
    let u: f64 = rng.gen();
    let mut cumulative = 0.0;
    let mut last = i64::MIN;
    for (&score, &p) in dist {
        cumulative += p;
        last = score;
        if u < cumulative {
            return score;
        }
    }
    // Rounding left u above the final cumulative by a hair.
    last
}

/// One draw. The profile must have been validated by the caller; entry
/// points in the parent module do so once per request batch.
pub(super) fn complete(
    profile: &MockProfile,
    prompt: &RenderedPrompt,
    params: &DecodingParams,
    draw_index: u32,
) -> Result<Completion, BackendError> {
    let dist = profile.rule_for(&prompt.text);
    let score = if params.temperature == 0.0 {
        argmax(dist)
    } else {
        sample(
            dist,
            &prompt.fingerprint,
            params.seed.unwrap_or(0),
            draw_index,
        )
    };

    let text = match prompt.expected_output {
        ExpectedOutput::ScoreOnly => score.to_string(),
        ExpectedOutput::ScorePlusRationale => format!(
            "Score: {score}\n{}",
            profile.rationale_template.as_deref().unwrap_or("")
        ),
        // Yes/no prompts map the drawn score onto the verdict: the scale
        // minimum answers "Yes" (redundant), anything else "No".
        ExpectedOutput::YesNoPlusExplanation => {
            if score == profile.scale.min {
                "Yes".to_string()
            } else {
                "No".to_string()
            }
        }
    };

    let entries = dist
        .iter()
        .map(|(score, &p)| (score.to_string(), p))
        .collect();
    Ok(Completion {
        text,
        first_token_alternatives: Some(TokenDistribution { entries }),
        usage: TokenUsage {
            // Rough 4-bytes-per-token estimate; the mock has no tokenizer.
            prompt_tokens: (prompt.text.len() / 4) as u32,
            completion_tokens: 1,
        },
    })
}
