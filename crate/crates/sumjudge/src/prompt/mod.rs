//! Prompt families, variants, demonstrations, and deterministic rendering.
//!
//! Prompt text lives in external template files with `{slot}` placeholders
//! (see the crate-level `templates/` directory); rendering substitutes slots
//! in a single pass with no added trimming, so the template files own every
//! byte of surrounding whitespace and rendering the same inputs twice is
//! byte-identical.

mod templates;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aspect::Aspect;
use crate::dataset::{Corpus, Sample};
use crate::scoring::ScoreScale;
use crate::stable_hash::{fnv1a64, to_hex};

pub use templates::TemplateSet;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {key:?} not found in template set ({origin})")]
    TemplateMissing { key: String, origin: String },
    #[error("no criteria text for aspect {aspect:?} under variant {variant:?} (looked for {key:?}); supply it via --template-dir")]
    CriteriaMissing {
        aspect: String,
        variant: String,
        key: String,
    },
    #[error("criteria variant {criteria:?} is not valid with the {family:?} family")]
    InvalidVariant {
        family: TemplateFamily,
        criteria: CriteriaVariant,
    },
    #[error("the baseline family is coarse-grained on the 0-100 scale; got {0}")]
    BaselineShape(String),
    #[error("operation requires the {expected:?} family, got {got:?}")]
    WrongFamily {
        expected: TemplateFamily,
        got: TemplateFamily,
    },
    #[error("sample {0:?} has an empty source")]
    EmptySource(String),
    #[error("sample {0:?} has an empty summary")]
    EmptySummary(String),
    #[error("invalid demonstration: {0}")]
    InvalidDemonstration(String),
    #[error("no rationale fixture on any score-{score} sample for aspect {aspect}; reason demonstrations need demo_rationales")]
    RationaleFixtureMissing { aspect: Aspect, score: i64 },
    #[error("cannot read template dir {path}: {source}")]
    TemplateDir {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// The five prompt families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateFamily {
    /// Shared-task baseline: brief description plus a 0-100 score guide.
    Baseline,
    /// Annotator-style instructions.
    HumanGuideline,
    /// Model-directed instructions.
    ModelGuideline,
    /// Score plus natural-language justification.
    RationaleGeneration,
    /// Yes/no redundancy check on the summary alone.
    Filtering,
}

impl TemplateFamily {
    fn dir(self) -> &'static str {
        match self {
            TemplateFamily::Baseline => "baseline",
            TemplateFamily::HumanGuideline => "human_guideline",
            TemplateFamily::ModelGuideline => "model_guideline",
            TemplateFamily::RationaleGeneration => "rationale_generation",
            TemplateFamily::Filtering => "filtering",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskDescriptionVariant {
    Base,
    Expert,
    Short,
    Long,
}

impl TaskDescriptionVariant {
    fn file(self) -> &'static str {
        match self {
            TaskDescriptionVariant::Base => "base",
            TaskDescriptionVariant::Expert => "expert",
            TaskDescriptionVariant::Short => "short",
            TaskDescriptionVariant::Long => "long",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriteriaVariant {
    /// Aspect definition: one-line question.
    Ad,
    /// Human-targeted criteria (annotator guideline register).
    Ht,
    /// Model-targeted criteria (instruction register).
    Mt,
    AdGpt,
    HtGpt,
    MtGpt,
}

impl CriteriaVariant {
    fn dir(self) -> &'static str {
        match self {
            CriteriaVariant::Ad => "ad",
            CriteriaVariant::Ht => "ht",
            CriteriaVariant::Mt => "mt",
            CriteriaVariant::AdGpt => "ad_gpt",
            CriteriaVariant::HtGpt => "ht_gpt",
            CriteriaVariant::MtGpt => "mt_gpt",
        }
    }

    fn valid_for(self, family: TemplateFamily) -> bool {
        match self {
            CriteriaVariant::Ad | CriteriaVariant::AdGpt => matches!(
                family,
                TemplateFamily::HumanGuideline | TemplateFamily::ModelGuideline
            ),
            CriteriaVariant::Ht | CriteriaVariant::HtGpt => {
                family == TemplateFamily::HumanGuideline
            }
            CriteriaVariant::Mt | CriteriaVariant::MtGpt => {
                family == TemplateFamily::ModelGuideline
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepsVariant {
    Base,
    Complex,
}

impl StepsVariant {
    fn file(self) -> &'static str {
        match self {
            StepsVariant::Base => "base",
            StepsVariant::Complex => "complex",
        }
    }
}

/// Which text goes into each prompt component.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantSelection {
    pub task_description: TaskDescriptionVariant,
    pub criteria: CriteriaVariant,
    pub steps: StepsVariant,
}

impl Default for VariantSelection {
    fn default() -> Self {
        VariantSelection {
            task_description: TaskDescriptionVariant::Base,
            criteria: CriteriaVariant::Ad,
            steps: StepsVariant::Base,
        }
    }
}

impl VariantSelection {
    /// Canonical human-guideline selection (annotator criteria).
    pub fn human_base() -> Self {
        VariantSelection {
            task_description: TaskDescriptionVariant::Base,
            criteria: CriteriaVariant::Ht,
            steps: StepsVariant::Base,
        }
    }

    /// Canonical model-guideline selection (model-targeted criteria).
    pub fn model_base() -> Self {
        VariantSelection {
            task_description: TaskDescriptionVariant::Base,
            criteria: CriteriaVariant::Mt,
            steps: StepsVariant::Base,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoQuality {
    Worst,
    Best,
}

impl DemoQuality {
    /// The score a demonstration of this quality always carries.
    pub fn score(self) -> i64 {
        match self {
            DemoQuality::Worst => 1,
            DemoQuality::Best => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoKind {
    /// Source, summary, and score only.
    Base,
    /// Adds a rationale for the score.
    Reason,
}

/// One in-context example prepended to a prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub source: String,
    pub summary: String,
    pub score: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    pub quality: DemoQuality,
    pub kind: DemoKind,
}

impl Demonstration {
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.score != self.quality.score() {
            return Err(PromptError::InvalidDemonstration(format!(
                "{:?} demonstrations carry score {}, got {}",
                self.quality,
                self.quality.score(),
                self.score
            )));
        }
        match self.kind {
            DemoKind::Reason if self.rationale.is_none() => Err(PromptError::InvalidDemonstration(
                "reason demonstrations need a rationale".into(),
            )),
            DemoKind::Base if self.rationale.is_some() => Err(PromptError::InvalidDemonstration(
                "base demonstrations carry no rationale".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// A demonstration tagged with the aspect it was selected for, as stored in
/// demo-pack files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoPackEntry {
    pub aspect: Aspect,
    #[serde(flatten)]
    pub demonstration: Demonstration,
}

/// Declarative choice of prompt: family, optional aspect (absent means
/// coarse-grained), component variants, scale, and at most one demonstration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub family: TemplateFamily,
    pub aspect: Option<Aspect>,
    pub variants: VariantSelection,
    pub scale: ScoreScale,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demonstration: Option<Demonstration>,
}

impl PromptSpec {
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.family == TemplateFamily::Baseline {
            if self.aspect.is_some() {
                return Err(PromptError::BaselineShape(format!(
                    "aspect {}",
                    self.aspect.unwrap()
                )));
            }
            if self.scale != ScoreScale::zero_to_hundred() {
                return Err(PromptError::BaselineShape(format!(
                    "scale {}..{}",
                    self.scale.min, self.scale.max
                )));
            }
        }
        if matches!(
            self.family,
            TemplateFamily::HumanGuideline | TemplateFamily::ModelGuideline
        ) && !self.variants.criteria.valid_for(self.family)
        {
            return Err(PromptError::InvalidVariant {
                family: self.family,
                criteria: self.variants.criteria,
            });
        }
        if let Some(demo) = &self.demonstration {
            demo.validate()?;
        }
        Ok(())
    }
}

/// What the completion is expected to contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedOutput {
    ScoreOnly,
    ScorePlusRationale,
    YesNoPlusExplanation,
}

/// Deterministic prompt text plus a stable identity.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPrompt {
    pub text: String,
    /// FNV-1a over the canonical (spec, sample id) encoding; stable across
    /// processes and platforms.
    pub fingerprint: String,
    pub expected_output: ExpectedOutput,
}

/// First line of every demonstration block; counting occurrences of this
/// marker tells how many demonstration blocks a rendered prompt carries.
pub const DEMONSTRATION_MARKER: &str = "Please refer to following example below.";

pub fn demonstration_block_count(text: &str) -> usize {
    text.matches(DEMONSTRATION_MARKER).count()
}

fn aspect_slots(aspect: Option<Aspect>) -> (&'static str, &'static str, &'static str, &'static str)
{
    match aspect {
        Some(a) => (a.name(), a.title(), a.adjective(), a.name()),
        // Coarse-grained prompts score "overall quality".
        None => ("overall quality", "Overall quality", "good", "overall"),
    }
}

fn render_demonstration(
    demo: &Demonstration,
    templates: &TemplateSet,
) -> Result<String, PromptError> {
    demo.validate()?;
    let key = match demo.kind {
        DemoKind::Base => "demonstration/base.txt",
        DemoKind::Reason => "demonstration/reason.txt",
    };
    let template = templates.get(key)?;
    let score = demo.score.to_string();
    let mut slots = vec![
        ("demo_source", demo.source.as_str()),
        ("demo_summary", demo.summary.as_str()),
        ("demo_score", score.as_str()),
    ];
    if let Some(rationale) = &demo.rationale {
        slots.push(("demo_rationale", rationale.as_str()));
    }
    Ok(templates::substitute(template, &slots))
}

fn criteria_text(
    templates: &TemplateSet,
    dir: &str,
    aspect: Option<Aspect>,
    variant_label: &str,
) -> Result<String, PromptError> {
    let (_, _, _, file) = aspect_slots(aspect);
    let key = format!("criteria/{dir}/{file}.txt");
    templates
        .get(&key)
        .map(str::to_string)
        .map_err(|_| PromptError::CriteriaMissing {
            aspect: file.to_string(),
            variant: variant_label.to_string(),
            key,
        })
}

fn fingerprint_for(spec: &PromptSpec, sample_id: &str) -> String {
    let demo = match &spec.demonstration {
        None => "none".to_string(),
        Some(d) => to_hex(fnv1a64(
            format!(
                "{}|{}|{}|{:?}|{:?}|{}",
                d.source,
                d.summary,
                d.score,
                d.quality,
                d.kind,
                d.rationale.as_deref().unwrap_or("")
            )
            .as_bytes(),
        )),
    };
    let canonical = format!(
        "v1|family={:?}|aspect={}|task={:?}|criteria={:?}|steps={:?}|scale={}:{}:{}|demo={}|sample={}",
        spec.family,
        spec.aspect.map(|a| a.name()).unwrap_or("none"),
        spec.variants.task_description,
        spec.variants.criteria,
        spec.variants.steps,
        spec.scale.min,
        spec.scale.max,
        spec.scale.step,
        demo,
        sample_id,
    );
    to_hex(fnv1a64(canonical.as_bytes()))
}

fn check_sample(sample: &Sample) -> Result<(), PromptError> {
    if sample.source.is_empty() {
        return Err(PromptError::EmptySource(sample.id.clone()));
    }
    if sample.summary.is_empty() {
        return Err(PromptError::EmptySummary(sample.id.clone()));
    }
    Ok(())
}

/// Render a baseline, human-guideline, or model-guideline prompt.
pub fn render(
    spec: &PromptSpec,
    sample: &Sample,
    templates: &TemplateSet,
) -> Result<RenderedPrompt, PromptError> {
    match spec.family {
        TemplateFamily::RationaleGeneration => return render_rationale(spec, sample, templates),
        TemplateFamily::Filtering => {
            return Err(PromptError::WrongFamily {
                expected: TemplateFamily::HumanGuideline,
                got: TemplateFamily::Filtering,
            })
        }
        _ => {}
    }
    spec.validate()?;
    check_sample(sample)?;

    let (aspect, aspect_title, aspect_adjective, _) = aspect_slots(spec.aspect);
    let min = spec.scale.min.to_string();
    let max = spec.scale.max.to_string();
    let aspect_scoped = |text: &str| {
        templates::substitute(
            text,
            &[
                ("aspect", aspect),
                ("aspect_title", aspect_title),
                ("aspect_adjective", aspect_adjective),
                ("min", &min),
                ("max", &max),
            ],
        )
    };

    let demonstration = match &spec.demonstration {
        Some(demo) => render_demonstration(demo, templates)?,
        None => String::new(),
    };

    let frame = templates.get(&format!("{}/frame.txt", spec.family.dir()))?;
    let text = match spec.family {
        TemplateFamily::Baseline => templates::substitute(
            frame,
            &[
                ("demonstration", demonstration.as_str()),
                ("source", sample.source.as_str()),
                ("summary", sample.summary.as_str()),
            ],
        ),
        TemplateFamily::HumanGuideline | TemplateFamily::ModelGuideline => {
            let task = aspect_scoped(templates.get(&format!(
                "{}/task_description/{}.txt",
                spec.family.dir(),
                spec.variants.task_description.file()
            ))?);
            let steps = aspect_scoped(templates.get(&format!(
                "{}/steps/{}.txt",
                spec.family.dir(),
                spec.variants.steps.file()
            ))?);
            let criteria = criteria_text(
                templates,
                spec.variants.criteria.dir(),
                spec.aspect,
                spec.variants.criteria.dir(),
            )?;
            let criteria = aspect_scoped(&criteria);
            templates::substitute(
                &aspect_scoped(frame),
                &[
                    ("task_description", task.as_str()),
                    ("steps", steps.as_str()),
                    ("criteria", criteria.as_str()),
                    ("demonstration", demonstration.as_str()),
                    ("source", sample.source.as_str()),
                    ("summary", sample.summary.as_str()),
                ],
            )
        }
        _ => unreachable!("dispatched above"),
    };

    Ok(RenderedPrompt {
        text,
        fingerprint: fingerprint_for(spec, &sample.id),
        expected_output: ExpectedOutput::ScoreOnly,
    })
}

/// Render the redundancy-filtering prompt; it contains only the summary.
pub fn render_filtering(
    sample: &Sample,
    templates: &TemplateSet,
) -> Result<RenderedPrompt, PromptError> {
    if sample.summary.is_empty() {
        return Err(PromptError::EmptySummary(sample.id.clone()));
    }
    let frame = templates.get("filtering/frame.txt")?;
    let text = templates::substitute(frame, &[("summary", sample.summary.as_str())]);
    let fingerprint = to_hex(fnv1a64(
        format!("v1|family=Filtering|sample={}", sample.id).as_bytes(),
    ));
    Ok(RenderedPrompt {
        text,
        fingerprint,
        expected_output: ExpectedOutput::YesNoPlusExplanation,
    })
}

/// Render the rationale-generation prompt: numbered steps ending with the
/// rationale instruction, then the target source and summary.
pub fn render_rationale(
    spec: &PromptSpec,
    sample: &Sample,
    templates: &TemplateSet,
) -> Result<RenderedPrompt, PromptError> {
    if spec.family != TemplateFamily::RationaleGeneration {
        return Err(PromptError::WrongFamily {
            expected: TemplateFamily::RationaleGeneration,
            got: spec.family,
        });
    }
    spec.validate()?;
    check_sample(sample)?;

    let (aspect, aspect_title, aspect_adjective, _) = aspect_slots(spec.aspect);
    let min = spec.scale.min.to_string();
    let max = spec.scale.max.to_string();
    let demonstration = match &spec.demonstration {
        Some(demo) => render_demonstration(demo, templates)?,
        None => String::new(),
    };
    let criteria = criteria_text(templates, "rg", spec.aspect, "rg")?;
    let frame = templates.get("rationale_generation/frame.txt")?;
    let text = templates::substitute(
        frame,
        &[
            ("aspect", aspect),
            ("aspect_title", aspect_title),
            ("aspect_adjective", aspect_adjective),
            ("min", min.as_str()),
            ("max", max.as_str()),
            ("criteria", criteria.as_str()),
            ("demonstration", demonstration.as_str()),
            ("source", sample.source.as_str()),
            ("summary", sample.summary.as_str()),
        ],
    );

    Ok(RenderedPrompt {
        text,
        fingerprint: fingerprint_for(spec, &sample.id),
        expected_output: ExpectedOutput::ScorePlusRationale,
    })
}

/// Dispatch on the spec's family.
pub fn render_for(
    spec: &PromptSpec,
    sample: &Sample,
    templates: &TemplateSet,
) -> Result<RenderedPrompt, PromptError> {
    match spec.family {
        TemplateFamily::Filtering => render_filtering(sample, templates),
        TemplateFamily::RationaleGeneration => render_rationale(spec, sample, templates),
        _ => render(spec, sample, templates),
    }
}

/// Select demonstrations from an annotated corpus: samples whose gold score
/// for `aspect` equals 1 (worst) or 5 (best), ordered by ascending source
/// length then id. Reason demonstrations additionally need a pre-authored
/// rationale on the sample (`demo_rationales`).
pub fn build_demonstrations(
    corpus: &Corpus,
    aspect: Aspect,
    quality: DemoQuality,
    kind: DemoKind,
) -> Result<Vec<Demonstration>, PromptError> {
    let target = quality.score() as f64;
    let mut candidates: Vec<&Sample> = corpus
        .samples
        .iter()
        .filter(|s| {
            s.gold_aspects
                .as_ref()
                .and_then(|m| m.get(&aspect))
                .is_some_and(|&v| (v - target).abs() < 1e-9)
        })
        .collect();

    if kind == DemoKind::Reason {
        let with_rationale: Vec<&Sample> = candidates
            .iter()
            .copied()
            .filter(|s| {
                s.demo_rationales
                    .as_ref()
                    .is_some_and(|m| m.contains_key(&aspect))
            })
            .collect();
        if with_rationale.is_empty() && !candidates.is_empty() {
            return Err(PromptError::RationaleFixtureMissing {
                aspect,
                score: quality.score(),
            });
        }
        if with_rationale.len() < candidates.len() {
            log::warn!(
                "aspect {aspect}: {} candidate(s) lack demo_rationales and were skipped",
                candidates.len() - with_rationale.len()
            );
        }
        candidates = with_rationale;
    }

    if candidates.is_empty() {
        log::warn!(
            "no sample with {aspect} gold score {} in corpus {:?}",
            quality.score(),
            corpus.split_tag
        );
        return Ok(Vec::new());
    }

    candidates.sort_by(|a, b| {
        a.source
            .len()
            .cmp(&b.source.len())
            .then_with(|| a.id.cmp(&b.id))
    });

    Ok(candidates
        .into_iter()
        .map(|s| Demonstration {
            source: s.source.clone(),
            summary: s.summary.clone(),
            score: quality.score(),
            rationale: match kind {
                DemoKind::Reason => s
                    .demo_rationales
                    .as_ref()
                    .and_then(|m| m.get(&aspect))
                    .cloned(),
                DemoKind::Base => None,
            },
            quality,
            kind,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn sample() -> Sample {
        Sample {
            id: "s1".into(),
            source: "The council met on Tuesday to debate the new transit plan.".into(),
            summary: "The council debated a transit plan.".into(),
            gold: None,
            gold_aspects: None,
            demo_rationales: None,
        }
    }

    fn hg_spec(aspect: Option<Aspect>) -> PromptSpec {
        PromptSpec {
            family: TemplateFamily::HumanGuideline,
            aspect,
            variants: VariantSelection::human_base(),
            scale: ScoreScale::one_to_five(),
            demonstration: None,
        }
    }

    #[test]
    fn hg_relevance_contains_criteria_and_scale_wording() {
        let templates = TemplateSet::builtin();
        let rendered = render(&hg_spec(Some(Aspect::Relevance)), &sample(), &templates).unwrap();
        assert!(rendered.text.contains(
            "The rating measures how well the summary captures the key points of the article"
        ));
        assert!(rendered.text.contains("from 1 (worst) to 5 (best)"));
        assert!(rendered.text.contains(&sample().source));
        assert!(rendered.text.contains(&sample().summary));
        assert_eq!(rendered.expected_output, ExpectedOutput::ScoreOnly);
    }

    #[test]
    fn baseline_contains_continuous_scale_wording() {
        let templates = TemplateSet::builtin();
        let spec = PromptSpec {
            family: TemplateFamily::Baseline,
            aspect: None,
            variants: VariantSelection::default(),
            scale: ScoreScale::zero_to_hundred(),
            demonstration: None,
        };
        let rendered = render(&spec, &sample(), &templates).unwrap();
        assert!(rendered.text.contains("continuous scale from 0 to 100"));
    }

    #[test]
    fn baseline_rejects_aspect_and_wrong_scale() {
        let templates = TemplateSet::builtin();
        let mut spec = PromptSpec {
            family: TemplateFamily::Baseline,
            aspect: Some(Aspect::Relevance),
            variants: VariantSelection::default(),
            scale: ScoreScale::zero_to_hundred(),
            demonstration: None,
        };
        assert!(render(&spec, &sample(), &templates).is_err());
        spec.aspect = None;
        spec.scale = ScoreScale::one_to_five();
        assert!(render(&spec, &sample(), &templates).is_err());
    }

    #[test]
    fn rendering_is_deterministic() {
        let templates = TemplateSet::builtin();
        let spec = hg_spec(Some(Aspect::Coherence));
        let a = render(&spec, &sample(), &templates).unwrap();
        let b = render(&spec, &sample(), &templates).unwrap();
        assert_eq!(a.text, b.text);
        assert_eq!(a.fingerprint, b.fingerprint);
    }

    #[test]
    fn aspect_change_is_diff_localized() {
        // Fine-grained prompts for two aspects differ only in the criteria
        // block and aspect-name occurrences.
        let templates = TemplateSet::builtin();
        let rel = render(&hg_spec(Some(Aspect::Relevance)), &sample(), &templates).unwrap();
        let coh = render(&hg_spec(Some(Aspect::Coherence)), &sample(), &templates).unwrap();
        let rel_criteria = templates.get("criteria/ht/relevance.txt").unwrap();
        let coh_criteria = templates.get("criteria/ht/coherence.txt").unwrap();
        let normalize = |text: &str, criteria: &str| {
            text.replace(criteria, "{criteria}")
                .replace("relevance", "{a}")
                .replace("coherence", "{a}")
        };
        assert_eq!(
            normalize(&rel.text, rel_criteria),
            normalize(&coh.text, coh_criteria)
        );
    }

    #[test]
    fn mt_criteria_rejected_for_human_family() {
        let templates = TemplateSet::builtin();
        let mut spec = hg_spec(Some(Aspect::Relevance));
        spec.variants.criteria = CriteriaVariant::Mt;
        assert!(matches!(
            render(&spec, &sample(), &templates),
            Err(PromptError::InvalidVariant { .. })
        ));
    }

    #[test]
    fn missing_criteria_fixture_is_flagged() {
        let templates = TemplateSet::builtin();
        // ht_gpt ships only the relevance text.
        let mut spec = hg_spec(Some(Aspect::Coherence));
        spec.variants.criteria = CriteriaVariant::HtGpt;
        assert!(matches!(
            render(&spec, &sample(), &templates),
            Err(PromptError::CriteriaMissing { .. })
        ));
        // readability ships no criteria at all.
        let spec = hg_spec(Some(Aspect::Readability));
        assert!(matches!(
            render(&spec, &sample(), &templates),
            Err(PromptError::CriteriaMissing { .. })
        ));
    }

    #[test]
    fn filtering_prompt_contains_only_the_summary() {
        let templates = TemplateSet::builtin();
        let s = sample();
        let rendered = render_filtering(&s, &templates).unwrap();
        assert!(rendered.text.contains("redundant or not"));
        assert!(rendered.text.contains("\"Yes\" or \"No\""));
        assert!(rendered.text.contains(&s.summary));
        assert!(!rendered.text.contains(&s.source));
        assert_eq!(rendered.expected_output, ExpectedOutput::YesNoPlusExplanation);
    }

    #[test]
    fn filtering_embeds_repetitive_summary_verbatim() {
        let templates = TemplateSet::builtin();
        let mut s = sample();
        s.summary =
            "A family of four members, including a first member, a second member".to_string();
        let rendered = render_filtering(&s, &templates).unwrap();
        assert!(rendered.text.contains(&s.summary));
    }

    #[test]
    fn filtering_identical_summaries_render_identically() {
        let templates = TemplateSet::builtin();
        let a = sample();
        let mut b = sample();
        b.id = "s2".into();
        let ra = render_filtering(&a, &templates).unwrap();
        let rb = render_filtering(&b, &templates).unwrap();
        assert_eq!(ra.text, rb.text);
        assert_ne!(ra.fingerprint, rb.fingerprint);
    }

    #[test]
    fn rationale_prompt_has_numbered_steps_and_rationale_instruction() {
        let templates = TemplateSet::builtin();
        let spec = PromptSpec {
            family: TemplateFamily::RationaleGeneration,
            aspect: Some(Aspect::Relevance),
            variants: VariantSelection::default(),
            scale: ScoreScale::one_to_five(),
            demonstration: None,
        };
        let rendered = render_rationale(&spec, &sample(), &templates).unwrap();
        for step in 1..=5 {
            assert!(rendered.text.contains(&format!("{step}. ")));
        }
        assert!(rendered.text.contains("Provide a Rationale"));
        assert!(rendered.text.contains("scale of 1 to 5"));
        assert_eq!(rendered.expected_output, ExpectedOutput::ScorePlusRationale);
    }

    #[test]
    fn rationale_demo_block_precedes_target() {
        let templates = TemplateSet::builtin();
        let spec = PromptSpec {
            family: TemplateFamily::RationaleGeneration,
            aspect: Some(Aspect::Relevance),
            variants: VariantSelection::default(),
            scale: ScoreScale::one_to_five(),
            demonstration: Some(Demonstration {
                source: "Demo source.".into(),
                summary: "Demo summary.".into(),
                score: 5,
                rationale: Some("It captures the key points.".into()),
                quality: DemoQuality::Best,
                kind: DemoKind::Reason,
            }),
        };
        let rendered = render_rationale(&spec, &sample(), &templates).unwrap();
        assert_eq!(demonstration_block_count(&rendered.text), 1);
        let demo_pos = rendered.text.find(DEMONSTRATION_MARKER).unwrap();
        let target_pos = rendered.text.find(&sample().source).unwrap();
        assert!(demo_pos < target_pos);
        assert!(rendered.text.contains("Example Score: 5"));
        assert!(rendered.text.contains("Explanation: It captures the key points."));
    }

    #[test]
    fn at_most_one_demonstration_block() {
        let templates = TemplateSet::builtin();
        let mut spec = hg_spec(Some(Aspect::Relevance));
        spec.demonstration = Some(Demonstration {
            source: "Demo source.".into(),
            summary: "Demo summary.".into(),
            score: 1,
            rationale: None,
            quality: DemoQuality::Worst,
            kind: DemoKind::Base,
        });
        let rendered = render(&spec, &sample(), &templates).unwrap();
        assert_eq!(demonstration_block_count(&rendered.text), 1);
        spec.demonstration = None;
        let bare = render(&spec, &sample(), &templates).unwrap();
        assert_eq!(demonstration_block_count(&bare.text), 0);
    }

    #[test]
    fn demonstration_invariants_enforced() {
        let bad_score = Demonstration {
            source: "s".into(),
            summary: "m".into(),
            score: 3,
            rationale: None,
            quality: DemoQuality::Best,
            kind: DemoKind::Base,
        };
        assert!(bad_score.validate().is_err());
        let missing_rationale = Demonstration {
            score: 5,
            rationale: None,
            kind: DemoKind::Reason,
            ..bad_score.clone()
        };
        assert!(missing_rationale.validate().is_err());
    }

    fn corpus_with_scores(entries: &[(&str, &str, f64)]) -> Corpus {
        Corpus {
            samples: entries
                .iter()
                .map(|(id, source, score)| Sample {
                    id: id.to_string(),
                    source: source.to_string(),
                    summary: format!("summary of {id}"),
                    gold: None,
                    gold_aspects: Some(
                        [(Aspect::Relevance, *score)].into_iter().collect::<BTreeMap<_, _>>(),
                    ),
                    demo_rationales: None,
                })
                .collect(),
            split_tag: "train".into(),
        }
    }

    #[test]
    fn demonstrations_pick_matching_scores() {
        let corpus = corpus_with_scores(&[("s7", "aaa", 5.0), ("s2", "bbbb", 3.0)]);
        let best =
            build_demonstrations(&corpus, Aspect::Relevance, DemoQuality::Best, DemoKind::Base)
                .unwrap();
        assert_eq!(best.len(), 1);
        assert_eq!(best[0].summary, "summary of s7");
        assert_eq!(best[0].score, 5);
    }

    #[test]
    fn demonstrations_empty_when_no_match() {
        let corpus = corpus_with_scores(&[("s1", "aaa", 4.0)]);
        let worst =
            build_demonstrations(&corpus, Aspect::Relevance, DemoQuality::Worst, DemoKind::Base)
                .unwrap();
        assert!(worst.is_empty());
    }

    #[test]
    fn demonstration_ties_order_by_source_length_then_id() {
        // Three score-5 samples: lengths 4, 2, 2 — expect (len 2, "a"), (len 2, "b"), (len 4, "z").
        let corpus = corpus_with_scores(&[("z", "wwww", 5.0), ("b", "xx", 5.0), ("a", "yy", 5.0)]);
        let best =
            build_demonstrations(&corpus, Aspect::Relevance, DemoQuality::Best, DemoKind::Base)
                .unwrap();
        let order: Vec<&str> = best.iter().map(|d| d.summary.as_str()).collect();
        assert_eq!(order, vec!["summary of a", "summary of b", "summary of z"]);
    }

    #[test]
    fn reason_demos_require_rationale_fixture() {
        let mut corpus = corpus_with_scores(&[("s1", "aaa", 5.0)]);
        assert!(matches!(
            build_demonstrations(&corpus, Aspect::Relevance, DemoQuality::Best, DemoKind::Reason),
            Err(PromptError::RationaleFixtureMissing { .. })
        ));
        corpus.samples[0].demo_rationales = Some(
            [(Aspect::Relevance, "Covers everything.".to_string())]
                .into_iter()
                .collect(),
        );
        let demos =
            build_demonstrations(&corpus, Aspect::Relevance, DemoQuality::Best, DemoKind::Reason)
                .unwrap();
        assert_eq!(demos[0].rationale.as_deref(), Some("Covers everything."));
    }
}
