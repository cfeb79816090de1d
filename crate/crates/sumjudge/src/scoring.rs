//! Score parsing, the three aggregation methods, and fine/coarse combination.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aspect::Aspect;
use crate::backend::{self, BackendDescriptor, BackendError, DecodingParams, TokenDistribution};
use crate::dataset::{EvaluationRecord, MethodDescriptor, RawCompletion, Sample};
use crate::prompt::{
    self, Demonstration, PromptError, TemplateFamily, TemplateSet, VariantSelection,
};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("invalid scale: {0}")]
    InvalidScale(String),
    #[error("no in-range score found in completion: {snippet:?}")]
    NoScoreFound { snippet: String },
    #[error("score-token mass too low after restriction ({matched:.3e}); backend did not surface score tokens")]
    MassTooLow { matched: f64 },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("empty sample list")]
    EmptySamples,
    #[error("sample score {value} outside the score set")]
    SampleOutsideScale { value: i64 },
    #[error("expected exactly one score for coarse combination, got {got}")]
    CoarseArity { got: usize },
    #[error("aspect {0} missing from aspect scores")]
    MissingAspect(Aspect),
    #[error("duplicate score for aspect {0}")]
    DuplicateAspect(Aspect),
    #[error("unexpected aspect {0} for the configured granularity")]
    UnexpectedAspect(Aspect),
    #[error("fine granularity requires at least one aspect")]
    NoAspects,
    #[error("score parse failed for sample {sample_id} ({unit}); on-parse-failure policy is fail")]
    ParseFailed { sample_id: String, unit: String },
}

/// Errors surfaced by the end-to-end sample evaluators.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error("backend returned no token alternatives; logprob aggregation needs logprobs support")]
    LogprobsUnavailable,
    #[error("evaluate_with_rationale requires the rationale-generation template family")]
    NotRationaleFamily,
}

/// Discrete score set `S = {min, min+step, …, max}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreScale {
    pub min: i64,
    pub max: i64,
    #[serde(default = "default_step")]
    pub step: i64,
}

fn default_step() -> i64 {
    1
}

impl ScoreScale {
    pub fn new(min: i64, max: i64, step: i64) -> Result<Self, ScoreError> {
        let scale = ScoreScale { min, max, step };
        scale.validate()?;
        Ok(scale)
    }

    /// Development preset: integers 1..=5.
    pub fn one_to_five() -> Self {
        ScoreScale { min: 1, max: 5, step: 1 }
    }

    /// Test / baseline preset: integers 0..=100.
    pub fn zero_to_hundred() -> Self {
        ScoreScale { min: 0, max: 100, step: 1 }
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.min >= self.max {
            return Err(ScoreError::InvalidScale(format!(
                "min {} must be below max {}",
                self.min, self.max
            )));
        }
        if self.step <= 0 {
            return Err(ScoreError::InvalidScale(format!(
                "step {} must be positive",
                self.step
            )));
        }
        if (self.max - self.min) % self.step != 0 {
            return Err(ScoreError::InvalidScale(format!(
                "range {}..{} not divisible by step {}",
                self.min, self.max, self.step
            )));
        }
        Ok(())
    }

    /// The ordered score set.
    pub fn score_set(&self) -> Vec<i64> {
        (0..=self.count() - 1)
            .map(|i| self.min + i as i64 * self.step)
            .collect()
    }

    /// K, the number of discrete scores.
    pub fn count(&self) -> usize {
        ((self.max - self.min) / self.step) as usize + 1
    }

    pub fn contains(&self, value: i64) -> bool {
        value >= self.min && value <= self.max && (value - self.min) % self.step == 0
    }

    /// Whether a real-valued score lies inside the scale range.
    pub fn in_range(&self, value: f64) -> bool {
        value >= self.min as f64 && value <= self.max as f64
    }

    pub fn midpoint(&self) -> f64 {
        (self.min as f64 + self.max as f64) / 2.0
    }
}

/// How per-prompt completions become one aspect score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AggregationMethod {
    /// Parse the score the model generated.
    Direct,
    /// Expectation over score-token probabilities.
    Logprob,
    /// Mean of `n_samples` sampled scores.
    Approximation {
        #[serde(default = "default_n_samples")]
        n_samples: u32,
    },
}

fn default_n_samples() -> u32 {
    20
}

/// Bare method tag used in record descriptors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationKind {
    Direct,
    Logprob,
    Approximation,
}

impl AggregationMethod {
    pub fn kind(&self) -> AggregationKind {
        match self {
            AggregationMethod::Direct => AggregationKind::Direct,
            AggregationMethod::Logprob => AggregationKind::Logprob,
            AggregationMethod::Approximation { .. } => AggregationKind::Approximation,
        }
    }

    pub fn n_samples(&self) -> Option<u32> {
        match self {
            AggregationMethod::Approximation { n_samples } => Some(*n_samples),
            _ => None,
        }
    }
}

/// Probability distribution restricted to a scale's score set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDistribution {
    pub scale: ScoreScale,
    pub probs: BTreeMap<i64, f64>,
}

impl ScoreDistribution {
    pub fn validate(&self) -> Result<(), ScoreError> {
        let mut sum = 0.0;
        for (&score, &p) in &self.probs {
            if !self.scale.contains(score) {
                return Err(ScoreError::InvalidDistribution(format!(
                    "score {score} outside the score set"
                )));
            }
            if !(0.0..=1.0 + 1e-9).contains(&p) {
                return Err(ScoreError::InvalidDistribution(format!(
                    "probability {p} for score {score} outside [0, 1]"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ScoreError::InvalidDistribution(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

/// One aggregated score, possibly for a single aspect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectScore {
    pub aspect: Option<Aspect>,
    pub value: f64,
    pub method: AggregationMethod,
    pub distribution: Option<ScoreDistribution>,
}

/// Coarse (one holistic prompt) vs fine (one prompt per aspect, averaged).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GranularityMode {
    Coarse,
    Fine { aspects: Vec<Aspect> },
}

impl GranularityMode {
    pub fn fine_dev() -> Self {
        GranularityMode::Fine { aspects: Aspect::DEV_SET.to_vec() }
    }

    pub fn fine_test() -> Self {
        GranularityMode::Fine { aspects: Aspect::TEST_SET.to_vec() }
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        if let GranularityMode::Fine { aspects } = self {
            if aspects.is_empty() {
                return Err(ScoreError::NoAspects);
            }
            for (i, a) in aspects.iter().enumerate() {
                if aspects[..i].contains(a) {
                    return Err(ScoreError::DuplicateAspect(*a));
                }
            }
        }
        Ok(())
    }
}

/// What to do when a completion yields no parseable score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseFailurePolicy {
    /// Drop the sample's record entirely.
    Skip,
    /// Substitute the scale midpoint and flag the record.
    Midpoint,
    /// Abort the run.
    Fail,
}

impl Default for ParseFailurePolicy {
    fn default() -> Self {
        ParseFailurePolicy::Midpoint
    }
}

/// Extract a score from completion text: the first maximal digit run that,
/// read as an integer, lies within the scale. Out-of-range runs are skipped
/// and later runs tried, so "7 out of 10, so 4" parses as 4 on a 1–5 scale.
pub fn parse_score(text: &str, scale: &ScoreScale) -> Result<i64, ScoreError> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            // Runs too long for i64 are out of range by definition.
            if let Ok(value) = text[start..i].parse::<i64>() {
                if scale.contains(value) {
                    return Ok(value);
                }
            }
        } else {
            i += 1;
        }
    }
    let snippet: String = text.chars().take(80).collect();
    Err(ScoreError::NoScoreFound { snippet })
}

/// Restrict token alternatives to the score set and renormalize.
///
/// A token matches score `s` when, stripped of surrounding whitespace, it is
/// exactly the decimal rendering of `s`. Duplicates ("4" and " 4") merge by
/// summing. Matched mass below 1e-6 means the backend surfaced no usable
/// score tokens.
pub fn restrict_distribution(
    alts: &TokenDistribution,
    scale: &ScoreScale,
) -> Result<ScoreDistribution, ScoreError> {
    let mut probs: BTreeMap<i64, f64> = BTreeMap::new();
    let mut matched = 0.0;
    for (token, &p) in &alts.entries {
        let trimmed = token.trim();
        if let Ok(value) = trimmed.parse::<i64>() {
            // Reject non-canonical spellings such as "04" or "+4".
            if scale.contains(value) && trimmed == value.to_string() {
                *probs.entry(value).or_insert(0.0) += p;
                matched += p;
            }
        }
    }
    if matched < 1e-6 {
        return Err(ScoreError::MassTooLow { matched });
    }
    for p in probs.values_mut() {
        *p /= matched;
    }
    Ok(ScoreDistribution { scale: *scale, probs })
}

/// Direct aggregation: the parsed generated score, no distribution.
pub fn aggregate_direct(
    completion: &backend::Completion,
    scale: &ScoreScale,
) -> Result<AspectScore, ScoreError> {
    let value = parse_score(&completion.text, scale)?;
    Ok(AspectScore {
        aspect: None,
        value: value as f64,
        method: AggregationMethod::Direct,
        distribution: None,
    })
}

/// Logprob aggregation: `score = Σ p(s) · s` over the score set.
///
/// The dot product is Neumaier-compensated so small probabilities on wide
/// scales do not drift, and the result is clamped into the scale bounds the
/// expectation mathematically respects.
pub fn aggregate_logprob(dist: &ScoreDistribution) -> AspectScore {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for (&score, &p) in &dist.probs {
        let term = p * score as f64;
        let t = sum + term;
        if sum.abs() >= term.abs() {
            comp += (sum - t) + term;
        } else {
            comp += (term - t) + sum;
        }
        sum = t;
    }
    let value = (sum + comp).clamp(dist.scale.min as f64, dist.scale.max as f64);
    AspectScore {
        aspect: None,
        value,
        method: AggregationMethod::Logprob,
        distribution: Some(dist.clone()),
    }
}

/// Approximation aggregation: empirical frequencies `g(s) = count(s)/N` and
/// `score = Σ g(s) · s`, which equals the arithmetic mean of the samples.
pub fn aggregate_approximation(
    scores: &[i64],
    scale: &ScoreScale,
) -> Result<AspectScore, ScoreError> {
    if scores.is_empty() {
        return Err(ScoreError::EmptySamples);
    }
    let mut counts: BTreeMap<i64, u64> = BTreeMap::new();
    let mut total: i64 = 0;
    for &s in scores {
        if !scale.contains(s) {
            return Err(ScoreError::SampleOutsideScale { value: s });
        }
        *counts.entry(s).or_insert(0) += 1;
        total += s;
    }
    let n = scores.len() as f64;
    // Σ count(s)·s is exact in f64 for realistic sizes, so the single
    // division makes Eq. g-weighted-sum and the plain mean bit-identical.
    let value = total as f64 / n;
    let probs = counts
        .into_iter()
        .map(|(s, c)| (s, c as f64 / n))
        .collect();
    Ok(AspectScore {
        aspect: None,
        value,
        method: AggregationMethod::Approximation { n_samples: scores.len() as u32 },
        distribution: Some(ScoreDistribution { scale: *scale, probs }),
    })
}

/// Combine per-aspect scores into the final score: unweighted mean for fine
/// granularity, identity for coarse.
pub fn combine(aspect_scores: &[AspectScore], mode: &GranularityMode) -> Result<f64, ScoreError> {
    match mode {
        GranularityMode::Coarse => {
            if aspect_scores.len() != 1 {
                return Err(ScoreError::CoarseArity { got: aspect_scores.len() });
            }
            Ok(aspect_scores[0].value)
        }
        GranularityMode::Fine { aspects } => {
            mode.validate()?;
            let mut seen: Vec<Aspect> = Vec::new();
            for score in aspect_scores {
                let aspect = match score.aspect {
                    Some(a) => a,
                    None => {
                        return Err(ScoreError::InvalidDistribution(
                            "fine combination requires aspect-tagged scores".into(),
                        ))
                    }
                };
                if !aspects.contains(&aspect) {
                    return Err(ScoreError::UnexpectedAspect(aspect));
                }
                if seen.contains(&aspect) {
                    return Err(ScoreError::DuplicateAspect(aspect));
                }
                seen.push(aspect);
            }
            // Sum in the mode's canonical aspect order so the result does
            // not depend on input permutation.
            let mut sum = 0.0;
            for aspect in aspects {
                let score = aspect_scores
                    .iter()
                    .find(|s| s.aspect == Some(*aspect))
                    .ok_or(ScoreError::MissingAspect(*aspect))?;
                sum += score.value;
            }
            Ok(sum / aspects.len() as f64)
        }
    }
}

/// Everything a sample evaluation needs besides the sample itself.
pub struct EvaluationContext<'a> {
    pub templates: &'a TemplateSet,
    pub family: TemplateFamily,
    pub variants: VariantSelection,
    /// Demonstration per prompt unit; key `None` applies to coarse prompts.
    pub demonstrations: BTreeMap<Option<Aspect>, Demonstration>,
    pub scale: ScoreScale,
    pub method: AggregationMethod,
    pub mode: GranularityMode,
    pub backend: &'a BackendDescriptor,
    pub params: DecodingParams,
    pub on_parse_failure: ParseFailurePolicy,
}

impl<'a> EvaluationContext<'a> {
    fn units(&self) -> Vec<Option<Aspect>> {
        match &self.mode {
            GranularityMode::Coarse => vec![None],
            GranularityMode::Fine { aspects } => aspects.iter().map(|a| Some(*a)).collect(),
        }
    }

    fn spec_for(&self, aspect: Option<Aspect>) -> prompt::PromptSpec {
        prompt::PromptSpec {
            family: self.family,
            aspect,
            variants: self.variants.clone(),
            scale: self.scale,
            demonstration: self.demonstrations.get(&aspect).cloned(),
        }
    }
}

fn unit_label(aspect: Option<Aspect>) -> String {
    aspect.map(|a| a.name().to_string()).unwrap_or_else(|| "overall".to_string())
}

enum UnitOutcome {
    Scored(AspectScore),
    Unparsed,
}

/// Evaluate one sample end-to-end: render one prompt per unit, obtain
/// completions, aggregate, and combine into a record.
///
/// Returns `Ok(None)` when a parse failure occurred and the policy is
/// `skip`.
pub fn evaluate_sample(
    sample: &Sample,
    ctx: &EvaluationContext<'_>,
) -> Result<Option<EvaluationRecord>, EvalError> {
    let mut raw: Vec<RawCompletion> = Vec::new();
    let mut parse_failures: u32 = 0;
    let mut scores: Vec<AspectScore> = Vec::new();

    for aspect in ctx.units() {
        let spec = ctx.spec_for(aspect);
        let rendered = prompt::render_for(&spec, sample, ctx.templates)?;
        let outcome = match ctx.method {
            AggregationMethod::Direct => {
                let completion = backend::complete(&rendered, &ctx.params, ctx.backend)?;
                raw.push(RawCompletion {
                    fingerprint: rendered.fingerprint.clone(),
                    text: completion.text.clone(),
                });
                match parse_score(&completion.text, &ctx.scale) {
                    Ok(v) => UnitOutcome::Scored(AspectScore {
                        aspect,
                        value: v as f64,
                        method: ctx.method,
                        distribution: None,
                    }),
                    Err(ScoreError::NoScoreFound { .. }) => {
                        parse_failures += 1;
                        UnitOutcome::Unparsed
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            AggregationMethod::Logprob => {
                let completion = backend::complete(&rendered, &ctx.params, ctx.backend)?;
                raw.push(RawCompletion {
                    fingerprint: rendered.fingerprint.clone(),
                    text: completion.text.clone(),
                });
                let alts = completion
                    .first_token_alternatives
                    .as_ref()
                    .ok_or(EvalError::LogprobsUnavailable)?;
                let dist = restrict_distribution(alts, &ctx.scale)?;
                let mut score = aggregate_logprob(&dist);
                score.aspect = aspect;
                UnitOutcome::Scored(score)
            }
            AggregationMethod::Approximation { n_samples } => {
                let mut params = ctx.params.clone();
                params.n_samples = n_samples;
                let completions = backend::sample_n(&rendered, &params, ctx.backend)?;
                let mut parsed: Vec<i64> = Vec::new();
                for completion in &completions {
                    raw.push(RawCompletion {
                        fingerprint: rendered.fingerprint.clone(),
                        text: completion.text.clone(),
                    });
                    match parse_score(&completion.text, &ctx.scale) {
                        Ok(v) => parsed.push(v),
                        Err(ScoreError::NoScoreFound { .. }) => parse_failures += 1,
                        Err(e) => return Err(e.into()),
                    }
                }
                if parsed.is_empty() {
                    UnitOutcome::Unparsed
                } else {
                    let mut score = aggregate_approximation(&parsed, &ctx.scale)?;
                    score.aspect = aspect;
                    score.method = ctx.method;
                    UnitOutcome::Scored(score)
                }
            }
        };
        match outcome {
            UnitOutcome::Scored(score) => scores.push(score),
            UnitOutcome::Unparsed => match ctx.on_parse_failure {
                ParseFailurePolicy::Skip => {
                    log::warn!(
                        "sample {}: unparseable completion for {}; skipping record",
                        sample.id,
                        unit_label(aspect)
                    );
                    return Ok(None);
                }
                ParseFailurePolicy::Midpoint => {
                    log::warn!(
                        "sample {}: unparseable completion for {}; substituting scale midpoint",
                        sample.id,
                        unit_label(aspect)
                    );
                    scores.push(AspectScore {
                        aspect,
                        value: ctx.scale.midpoint(),
                        method: ctx.method,
                        distribution: None,
                    });
                }
                ParseFailurePolicy::Fail => {
                    return Err(ScoreError::ParseFailed {
                        sample_id: sample.id.clone(),
                        unit: unit_label(aspect),
                    }
                    .into())
                }
            },
        }
    }

    let final_score = combine(&scores, &ctx.mode)?;
    Ok(Some(build_record(sample, ctx, scores, final_score, None, raw, parse_failures)))
}

/// Evaluate with the rationale-generation family: parse the first in-range
/// score and keep everything after the score line as the rationale.
pub fn evaluate_with_rationale(
    sample: &Sample,
    ctx: &EvaluationContext<'_>,
) -> Result<Option<EvaluationRecord>, EvalError> {
    if ctx.family != TemplateFamily::RationaleGeneration {
        return Err(EvalError::NotRationaleFamily);
    }
    let mut raw: Vec<RawCompletion> = Vec::new();
    let mut parse_failures: u32 = 0;
    let mut scores: Vec<AspectScore> = Vec::new();
    let mut rationales: Vec<(Option<Aspect>, String)> = Vec::new();

    for aspect in ctx.units() {
        let spec = ctx.spec_for(aspect);
        let rendered = prompt::render_rationale(&spec, sample, ctx.templates)?;
        let completion = backend::complete(&rendered, &ctx.params, ctx.backend)?;
        raw.push(RawCompletion {
            fingerprint: rendered.fingerprint.clone(),
            text: completion.text.clone(),
        });
        match split_score_and_rationale(&completion.text, &ctx.scale) {
            Ok((value, rationale)) => {
                scores.push(AspectScore {
                    aspect,
                    value: value as f64,
                    method: ctx.method,
                    distribution: None,
                });
                rationales.push((aspect, rationale));
            }
            Err(ScoreError::NoScoreFound { .. }) => {
                parse_failures += 1;
                match ctx.on_parse_failure {
                    ParseFailurePolicy::Skip => {
                        log::warn!(
                            "sample {}: unparseable rationale completion for {}; skipping record",
                            sample.id,
                            unit_label(aspect)
                        );
                        return Ok(None);
                    }
                    ParseFailurePolicy::Midpoint => {
                        scores.push(AspectScore {
                            aspect,
                            value: ctx.scale.midpoint(),
                            method: ctx.method,
                            distribution: None,
                        });
                        rationales.push((aspect, String::new()));
                    }
                    ParseFailurePolicy::Fail => {
                        return Err(ScoreError::ParseFailed {
                            sample_id: sample.id.clone(),
                            unit: unit_label(aspect),
                        }
                        .into())
                    }
                }
            }
            Err(e) => return Err(e.into()),
        }
    }

    let final_score = combine(&scores, &ctx.mode)?;
    let rationale = join_rationales(&rationales);
    Ok(Some(build_record(
        sample,
        ctx,
        scores,
        final_score,
        Some(rationale),
        raw,
        parse_failures,
    )))
}

/// Split a rationale-prompt completion into (score, rationale text).
///
/// The score is the first in-range digit run; the rationale is all text after
/// that score's line, with one leading "Explanation:" label stripped.
pub fn split_score_and_rationale(
    text: &str,
    scale: &ScoreScale,
) -> Result<(i64, String), ScoreError> {
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if let Ok(value) = parse_score(line, scale) {
            let rest = &text[offset + line.len()..];
            return Ok((value, strip_explanation_label(rest)));
        }
        offset += line.len();
    }
    let snippet: String = text.chars().take(80).collect();
    Err(ScoreError::NoScoreFound { snippet })
}

fn strip_explanation_label(text: &str) -> String {
    let trimmed = text.trim();
    let lower = trimmed.to_ascii_lowercase();
    if let Some(rest) = lower.strip_prefix("explanation:") {
        let start = trimmed.len() - rest.len();
        trimmed[start..].trim().to_string()
    } else {
        trimmed.to_string()
    }
}

fn join_rationales(rationales: &[(Option<Aspect>, String)]) -> String {
    if rationales.len() == 1 && rationales[0].0.is_none() {
        return rationales[0].1.clone();
    }
    rationales
        .iter()
        .map(|(aspect, text)| format!("{}: {}", unit_label(*aspect), text))
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn build_record(
    sample: &Sample,
    ctx: &EvaluationContext<'_>,
    scores: Vec<AspectScore>,
    final_score: f64,
    rationale: Option<String>,
    raw: Vec<RawCompletion>,
    parse_failures: u32,
) -> EvaluationRecord {
    let aspect_scores = scores
        .iter()
        .map(|s| (unit_label(s.aspect), s.value))
        .collect::<BTreeMap<_, _>>();
    EvaluationRecord {
        sample_id: sample.id.clone(),
        aspect_scores,
        final_score,
        method: MethodDescriptor {
            kind: ctx.method.kind(),
            n_samples: ctx.method.n_samples(),
            scale: ctx.scale,
        },
        rationale,
        raw_completions: raw,
        filtered: false,
        binned_score: None,
        parse_failures,
    }
}
