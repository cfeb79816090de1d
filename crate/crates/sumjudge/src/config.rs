//! Run configuration, presets, validation, and the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendDescriptor, DecodingParams};
use crate::postprocess::BinningConfig;
use crate::prompt::{DemoKind, DemoQuality, TemplateFamily, VariantSelection};
use crate::scoring::{AggregationMethod, GranularityMode, ParseFailurePolicy, ScoreScale};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("decoding params inconsistent with aggregation: {0} (pass --allow-nonstandard-decoding to override)")]
    DecodingMismatch(String),
    #[error("unknown preset {0:?} (expected dev-summeval or test-eval4nlp)")]
    UnknownPreset(String),
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Component(String),
}

/// Where a run's demonstrations come from: a demo-pack file plus the
/// quality/kind row to select. One demonstration is attached per prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemonstrationConfig {
    pub pack: PathBuf,
    pub quality: DemoQuality,
    pub kind: DemoKind,
}

/// Complete description of one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus: PathBuf,
    #[serde(default = "default_split")]
    pub split_tag: String,
    pub backend: BackendDescriptor,
    pub family: TemplateFamily,
    #[serde(default)]
    pub variants: VariantSelection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demonstration: Option<DemonstrationConfig>,
    pub granularity: GranularityMode,
    pub scale: ScoreScale,
    pub aggregation: AggregationMethod,
    pub decoding: DecodingParams,
    #[serde(default)]
    pub filtering: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binning: Option<BinningConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_dir: Option<PathBuf>,
    /// Global seed; copied into `decoding.seed` when that is unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub on_parse_failure: ParseFailurePolicy,
    #[serde(default)]
    pub allow_nonstandard_decoding: bool,
}

fn default_split() -> String {
    "custom".to_string()
}

fn default_concurrency() -> usize {
    4
}

impl RunConfig {
    /// Named preset skeletons; corpus and backend still need to be supplied.
    ///
    /// - `dev-summeval`: human-guideline prompt, fine-grained over the four
    ///   development aspects, direct aggregation on the 1–5 scale.
    /// - `test-eval4nlp`: human-guideline prompt, fine-grained over
    ///   relevance/factuality/fluency, direct aggregation on the 0–100 scale,
    ///   with filtering and binning enabled.
    pub fn preset(name: &str) -> Result<RunConfig, ConfigError> {
        let base = RunConfig {
            corpus: PathBuf::new(),
            split_tag: default_split(),
            backend: BackendDescriptor::Http(crate::backend::HttpBackend::new("", "")),
            family: TemplateFamily::HumanGuideline,
            variants: VariantSelection::human_base(),
            demonstration: None,
            granularity: GranularityMode::fine_dev(),
            scale: ScoreScale::one_to_five(),
            aggregation: AggregationMethod::Direct,
            decoding: DecodingParams::direct(),
            filtering: false,
            binning: None,
            template_dir: None,
            seed: None,
            concurrency: default_concurrency(),
            on_parse_failure: ParseFailurePolicy::default(),
            allow_nonstandard_decoding: false,
        };
        match name {
            "dev-summeval" => Ok(RunConfig {
                split_tag: "dev".into(),
                ..base
            }),
            "test-eval4nlp" => {
                let scale = ScoreScale::zero_to_hundred();
                Ok(RunConfig {
                    split_tag: "test".into(),
                    granularity: GranularityMode::fine_test(),
                    scale,
                    filtering: true,
                    binning: Some(BinningConfig::for_scale(&scale)),
                    ..base
                })
            }
            other => Err(ConfigError::UnknownPreset(other.to_string())),
        }
    }

    pub fn from_file(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })
    }

    /// Effective decoding params: the global seed fills `decoding.seed` when
    /// the latter is unset.
    pub fn effective_decoding(&self) -> DecodingParams {
        let mut decoding = self.decoding.clone();
        if decoding.seed.is_none() {
            decoding.seed = self.seed;
        }
        decoding
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let component = |e: String| ConfigError::Component(e);
        self.scale.validate().map_err(|e| component(e.to_string()))?;
        self.granularity
            .validate()
            .map_err(|e| component(e.to_string()))?;
        self.decoding
            .validate()
            .map_err(|e| component(e.to_string()))?;
        self.backend
            .validate(&self.scale)
            .map_err(|e| component(e.to_string()))?;

        if self.corpus.as_os_str().is_empty() {
            return Err(ConfigError::Invalid("corpus path is empty".into()));
        }
        if self.concurrency == 0 {
            return Err(ConfigError::Invalid("concurrency must be at least 1".into()));
        }
        match self.family {
            TemplateFamily::Filtering => {
                return Err(ConfigError::Invalid(
                    "the filtering family is a post-processing prompt, not an evaluation family"
                        .into(),
                ))
            }
            TemplateFamily::Baseline => {
                if self.granularity != GranularityMode::Coarse {
                    return Err(ConfigError::Invalid(
                        "the baseline family is coarse-grained only".into(),
                    ));
                }
                if self.scale != ScoreScale::zero_to_hundred() {
                    return Err(ConfigError::Invalid(
                        "the baseline family uses the 0-100 scale".into(),
                    ));
                }
            }
            _ => {}
        }
        if self.demonstration.is_some() && self.granularity == GranularityMode::Coarse {
            return Err(ConfigError::Invalid(
                "demonstrations are selected per aspect and need fine granularity".into(),
            ));
        }

        let mismatch = match self.aggregation {
            AggregationMethod::Direct | AggregationMethod::Logprob => {
                (self.decoding.temperature != 0.0).then(|| {
                    format!(
                        "direct/logprob aggregation expects temperature 0, got {}",
                        self.decoding.temperature
                    )
                })
            }
            AggregationMethod::Approximation { .. } => {
                (self.decoding.temperature != 1.0).then(|| {
                    format!(
                        "approximation aggregation expects temperature 1, got {}",
                        self.decoding.temperature
                    )
                })
            }
        };
        if let Some(message) = mismatch {
            if self.allow_nonstandard_decoding {
                log::warn!("{message} (allowed by config)");
            } else {
                return Err(ConfigError::DecodingMismatch(message));
            }
        }
        Ok(())
    }
}

/// Per-stage counters surfaced by the manifest.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    /// Samples in the corpus.
    pub samples: usize,
    /// Records emitted (post skip policy).
    pub evaluated: usize,
    /// Samples dropped by the skip-on-parse-failure policy.
    pub skipped_parse_policy: usize,
    /// Prompts behind the emitted records (one per sample × unit).
    pub prompts: usize,
    /// Completions behind the emitted records.
    pub completions: usize,
    pub parse_failures: u64,
    /// Records assigned the scale minimum by filtering.
    pub filtered: usize,
    pub filter_verdicts_unparsable: usize,
    pub unique_scores_before_binning: Option<usize>,
    pub unique_scores_after_binning: Option<usize>,
}

/// Everything needed to reproduce a run bit-identically under the mock
/// backend: the resolved config, template hashes, and backend identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub template_fingerprints: BTreeMap<String, String>,
    pub backend_identity: String,
    /// How multi-sample draws were issued: "mock", "client-loop", or
    /// "server-n".
    pub sampling_mode: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub counts: StageCounts,
}

pub fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Write JSON atomically: temp file in the target directory, then rename.
pub fn write_json_atomic<T: Serialize>(value: &T, path: &Path) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)
}
