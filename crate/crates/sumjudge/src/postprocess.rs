//! Test-phase transforms: redundancy filtering and score binning.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{self, BackendDescriptor, BackendError, DecodingParams};
use crate::dataset::{EvaluationRecord, Sample};
use crate::prompt::{self, PromptError, TemplateSet};
use crate::scoring::ScoreScale;

#[derive(Debug, Error)]
pub enum PostprocessError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("no filter verdict for record {0:?}")]
    MissingVerdict(String),
    #[error("invalid binning config: {0}")]
    InvalidBinning(String),
}

/// Outcome of the yes/no redundancy prompt for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub sample_id: String,
    pub redundant: bool,
    pub explanation: String,
    /// Set when neither a yes nor a no could be read from the completion;
    /// such verdicts default to non-redundant.
    #[serde(default)]
    pub unparsable: bool,
}

/// Ask the backend whether a summary is redundant.
pub fn filter_verdict(
    sample: &Sample,
    templates: &TemplateSet,
    backend: &BackendDescriptor,
    params: &DecodingParams,
) -> Result<FilterVerdict, PostprocessError> {
    let rendered = prompt::render_filtering(sample, templates)?;
    let completion = backend::complete(&rendered, params, backend)?;
    Ok(parse_verdict_text(&sample.id, &completion.text))
}

/// Read a verdict from completion text: redundant iff the first alphabetic
/// token is "yes" (case-insensitive); everything after the answer token is
/// the explanation.
pub fn parse_verdict_text(sample_id: &str, text: &str) -> FilterVerdict {
    let answer = text
        .char_indices()
        .find(|(_, c)| c.is_alphabetic())
        .map(|(start, _)| {
            let end = text[start..]
                .char_indices()
                .find(|(_, c)| !c.is_alphabetic())
                .map(|(i, _)| start + i)
                .unwrap_or(text.len());
            (start, end)
        });

    if let Some((start, end)) = answer {
        let token = &text[start..end];
        let explanation = text[end..]
            .trim_start_matches(|c: char| c.is_whitespace() || ".,:;!?-".contains(c))
            .trim_end()
            .to_string();
        if token.eq_ignore_ascii_case("yes") {
            return FilterVerdict {
                sample_id: sample_id.to_string(),
                redundant: true,
                explanation,
                unparsable: false,
            };
        }
        if token.eq_ignore_ascii_case("no") {
            return FilterVerdict {
                sample_id: sample_id.to_string(),
                redundant: false,
                explanation,
                unparsable: false,
            };
        }
    }
    log::warn!("sample {sample_id}: filter answer unparsable, treating as non-redundant");
    FilterVerdict {
        sample_id: sample_id.to_string(),
        redundant: false,
        explanation: text.trim().to_string(),
        unparsable: true,
    }
}

/// Assign the scale minimum to records judged redundant; every other record
/// passes through untouched. Every record must have a verdict.
pub fn apply_filter(
    records: &[EvaluationRecord],
    verdicts: &[FilterVerdict],
    scale: &ScoreScale,
) -> Result<Vec<EvaluationRecord>, PostprocessError> {
    let mut out = Vec::with_capacity(records.len());
    for record in records {
        let verdict = verdicts
            .iter()
            .find(|v| v.sample_id == record.sample_id)
            .ok_or_else(|| PostprocessError::MissingVerdict(record.sample_id.clone()))?;
        if verdict.redundant {
            let mut filtered = record.clone();
            filtered.final_score = scale.min as f64;
            filtered.filtered = true;
            out.push(filtered);
        } else {
            out.push(record.clone());
        }
    }
    Ok(out)
}

/// How binned scores are labeled. Midpoint keeps labels inside the scale and
/// centered; rank correlation is invariant to any monotone choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinLabelRule {
    Midpoint,
}

impl Default for BinLabelRule {
    fn default() -> Self {
        BinLabelRule::Midpoint
    }
}

/// Fixed-width binning over `[range_min, range_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinningConfig {
    pub range_min: f64,
    pub range_max: f64,
    pub bin_width: f64,
    #[serde(default)]
    pub label_rule: BinLabelRule,
}

impl BinningConfig {
    pub fn new(range_min: f64, range_max: f64, bin_width: f64) -> Result<Self, PostprocessError> {
        let config = BinningConfig {
            range_min,
            range_max,
            bin_width,
            label_rule: BinLabelRule::Midpoint,
        };
        config.validate()?;
        Ok(config)
    }

    /// Default for a scale: the full scale range split into ten bins.
    pub fn for_scale(scale: &ScoreScale) -> Self {
        let range_min = scale.min as f64;
        let range_max = scale.max as f64;
        BinningConfig {
            range_min,
            range_max,
            bin_width: (range_max - range_min) / 10.0,
            label_rule: BinLabelRule::Midpoint,
        }
    }

    pub fn validate(&self) -> Result<(), PostprocessError> {
        if !self.bin_width.is_finite() || self.bin_width <= 0.0 {
            return Err(PostprocessError::InvalidBinning(format!(
                "bin_width {} must be positive",
                self.bin_width
            )));
        }
        if !(self.range_max > self.range_min) {
            return Err(PostprocessError::InvalidBinning(format!(
                "range {}..{} is empty",
                self.range_min, self.range_max
            )));
        }
        Ok(())
    }

    fn bin_count(&self) -> u64 {
        (((self.range_max - self.range_min) / self.bin_width).ceil() as u64).max(1)
    }

    /// Map a score to its bin midpoint. Scores outside
    /// `[range_min - ε, range_max + ε]` clamp into the edge bins with a
    /// warning rather than failing the run.
    pub fn bin_value(&self, value: f64) -> f64 {
        const EPSILON: f64 = 1e-9;
        if value < self.range_min - EPSILON || value > self.range_max + EPSILON {
            log::warn!(
                "score {value} outside binning range {}..{}; clamping",
                self.range_min,
                self.range_max
            );
        }
        let max_index = (self.bin_count() - 1) as f64;
        let index = ((value - self.range_min) / self.bin_width)
            .floor()
            .clamp(0.0, max_index);
        let label = self.range_min + (index + 0.5) * self.bin_width;
        // A partial final bin can push the midpoint past range_max.
        label.min(self.range_max)
    }
}

/// Unique-score bookkeeping the run report surfaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinningReport {
    pub records: usize,
    pub unique_before: usize,
    pub unique_after: usize,
}

/// Populate `binned_score` on every record, preserving `final_score`, and
/// report the unique-score reduction.
pub fn bin_scores(
    records: &[EvaluationRecord],
    config: &BinningConfig,
) -> Result<(Vec<EvaluationRecord>, BinningReport), PostprocessError> {
    config.validate()?;
    let mut out = Vec::with_capacity(records.len());
    let mut before = std::collections::BTreeSet::new();
    let mut after = std::collections::BTreeSet::new();
    for record in records {
        let binned = config.bin_value(record.final_score);
        before.insert(canonical_bits(record.final_score));
        after.insert(canonical_bits(binned));
        let mut updated = record.clone();
        updated.binned_score = Some(binned);
        out.push(updated);
    }
    let report = BinningReport {
        records: records.len(),
        unique_before: before.len(),
        unique_after: after.len(),
    };
    Ok((out, report))
}

fn canonical_bits(value: f64) -> u64 {
    // Fold -0.0 into 0.0 so it does not double-count.
    if value == 0.0 { 0.0f64 } else { value }.to_bits()
}
