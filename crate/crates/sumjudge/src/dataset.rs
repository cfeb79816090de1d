//! Corpora and evaluation records, persisted as line-oriented JSON.
//!
//! One JSON object per line; iteration order always equals file order. Text
//! fields are preserved byte-for-byte so prompt snapshots stay stable.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aspect::Aspect;
use crate::scoring::{AggregationKind, ScoreScale};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("duplicate id {id:?} on lines {first_line} and {second_line}")]
    DuplicateId {
        id: String,
        first_line: usize,
        second_line: usize,
    },
    #[error("line {line}: sample {id:?}: {reason}")]
    InvalidSample {
        line: usize,
        id: String,
        reason: String,
    },
    #[error("line {line}: record {id:?}: {reason}")]
    InvalidRecord {
        line: usize,
        id: String,
        reason: String,
    },
    #[error("record {id:?}: {reason}")]
    InvalidRecordValue { id: String, reason: String },
}

/// One (source, summary) pair to evaluate, with optional gold annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub source: String,
    pub summary: String,
    /// Golden human annotation score. When absent and `gold_aspects` is
    /// present, the loader fills it with the unweighted mean of the aspect
    /// scores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<f64>,
    /// Per-aspect human scores on the 1–5 annotation scale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_aspects: Option<BTreeMap<Aspect, f64>>,
    /// Pre-authored per-aspect rationales, used when building reason-style
    /// demonstrations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demo_rationales: Option<BTreeMap<Aspect, String>>,
}

impl Sample {
    fn validate(&self, line: usize) -> Result<(), DataError> {
        let invalid = |reason: String| DataError::InvalidSample {
            line,
            id: self.id.clone(),
            reason,
        };
        if self.id.is_empty() {
            return Err(invalid("id is empty".into()));
        }
        if self.source.is_empty() {
            return Err(invalid("source is empty".into()));
        }
        if self.summary.is_empty() {
            return Err(invalid("summary is empty".into()));
        }
        if let Some(aspects) = &self.gold_aspects {
            for (aspect, &value) in aspects {
                if !(1.0..=5.0).contains(&value) {
                    return Err(invalid(format!(
                        "gold_aspects value {value} for {aspect} outside [1, 5]"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Mean of the per-aspect gold scores, when present.
    pub fn gold_aspect_mean(&self) -> Option<f64> {
        let aspects = self.gold_aspects.as_ref()?;
        if aspects.is_empty() {
            return None;
        }
        Some(aspects.values().sum::<f64>() / aspects.len() as f64)
    }
}

/// Ordered, id-unique collection of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub samples: Vec<Sample>,
    pub split_tag: String,
}

impl Corpus {
    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Method tag stored on each record; carries the scale so records are
/// self-validating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodDescriptor {
    pub kind: AggregationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<u32>,
    pub scale: ScoreScale,
}

/// One prompt/completion pair kept for auditability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCompletion {
    pub fingerprint: String,
    pub text: String,
}

/// Per-sample evaluation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub sample_id: String,
    /// Aspect name (lowercase) → score; coarse runs use the key "overall".
    pub aspect_scores: BTreeMap<String, f64>,
    pub final_score: f64,
    pub method: MethodDescriptor,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
    #[serde(default)]
    pub raw_completions: Vec<RawCompletion>,
    #[serde(default)]
    pub filtered: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binned_score: Option<f64>,
    #[serde(default)]
    pub parse_failures: u32,
}

impl EvaluationRecord {
    pub fn validate(&self) -> Result<(), DataError> {
        let invalid = |reason: String| DataError::InvalidRecordValue {
            id: self.sample_id.clone(),
            reason,
        };
        let scale = self.method.scale;
        scale
            .validate()
            .map_err(|e| invalid(format!("invalid scale: {e}")))?;
        if !scale.in_range(self.final_score) {
            return Err(invalid(format!(
                "final_score {} outside scale {}..{}",
                self.final_score, scale.min, scale.max
            )));
        }
        if self.filtered && self.final_score != scale.min as f64 {
            return Err(invalid(format!(
                "filtered record must carry the scale minimum, got {}",
                self.final_score
            )));
        }
        if let Some(binned) = self.binned_score {
            if !scale.in_range(binned) {
                return Err(invalid(format!(
                    "binned_score {binned} outside scale {}..{}",
                    scale.min, scale.max
                )));
            }
        }
        Ok(())
    }
}

/// Load a corpus from a line-oriented JSON file, validating every sample.
///
/// Blank lines are permitted and skipped; anything else that fails to parse
/// is rejected with its line number. When a sample has `gold_aspects` but no
/// `gold`, the gold score is reconstructed as the unweighted aspect mean.
/// When both are present and disagree by more than 1e-9 the explicit gold
/// wins and a warning is logged.
pub fn load_corpus(path: &Path, split_tag: &str) -> Result<Corpus, DataError> {
    let file = File::open(path).map_err(|source| DataError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut samples: Vec<Sample> = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| DataError::Read {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut sample: Sample =
            serde_json::from_str(&line).map_err(|e| DataError::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
        sample.validate(line_no)?;
        if let Some(&first_line) = seen.get(&sample.id) {
            return Err(DataError::DuplicateId {
                id: sample.id,
                first_line,
                second_line: line_no,
            });
        }
        seen.insert(sample.id.clone(), line_no);

        if let Some(mean) = sample.gold_aspect_mean() {
            match sample.gold {
                None => sample.gold = Some(mean),
                Some(gold) if (gold - mean).abs() > 1e-9 => {
                    log::warn!(
                        "sample {}: explicit gold {gold} disagrees with aspect mean {mean}; keeping gold",
                        sample.id
                    );
                }
                Some(_) => {}
            }
        }
        samples.push(sample);
    }

    Ok(Corpus {
        samples,
        split_tag: split_tag.to_string(),
    })
}

/// Write records as line-oriented JSON; round-trips losslessly through
/// [`read_records`].
pub fn write_records(records: &[EvaluationRecord], path: &Path) -> Result<(), DataError> {
    for record in records {
        record.validate()?;
    }
    let file = File::create(path).map_err(|source| DataError::Write {
        path: path.display().to_string(),
        source,
    })?;
    let mut writer = BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(record).expect("record serialization cannot fail");
        writeln!(writer, "{line}").map_err(|source| DataError::Write {
            path: path.display().to_string(),
            source,
        })?;
    }
    writer.flush().map_err(|source| DataError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// Read records back in file order, validating each against its own scale.
pub fn read_records(path: &Path) -> Result<Vec<EvaluationRecord>, DataError> {
    let file = File::open(path).map_err(|source| DataError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| DataError::Read {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EvaluationRecord =
            serde_json::from_str(&line).map_err(|e| DataError::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })?;
        record.validate().map_err(|e| match e {
            DataError::InvalidRecordValue { id, reason } => DataError::InvalidRecord {
                line: line_no,
                id,
                reason,
            },
            other => other,
        })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::AggregationKind;
    use std::io::Write as _;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(file, "{line}").unwrap();
        }
        file.flush().unwrap();
        file
    }

    fn record(id: &str, final_score: f64) -> EvaluationRecord {
        EvaluationRecord {
            sample_id: id.to_string(),
            aspect_scores: [("relevance".to_string(), final_score)].into_iter().collect(),
            final_score,
            method: MethodDescriptor {
                kind: AggregationKind::Direct,
                n_samples: None,
                scale: ScoreScale::one_to_five(),
            },
            rationale: None,
            raw_completions: vec![RawCompletion {
                fingerprint: "00".into(),
                text: format!("{final_score}"),
            }],
            filtered: false,
            binned_score: None,
            parse_failures: 0,
        }
    }

    #[test]
    fn loads_valid_lines_in_order() {
        let file = write_lines(&[
            r#"{"id":"s1","source":"a","summary":"b"}"#,
            r#"{"id":"s2","source":"c","summary":"d","gold":3.5}"#,
            r#"{"id":"s3","source":"e","summary":"f"}"#,
        ]);
        let corpus = load_corpus(file.path(), "dev").unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.samples[0].id, "s1");
        assert_eq!(corpus.samples[2].id, "s3");
        assert_eq!(corpus.split_tag, "dev");
    }

    #[test]
    fn duplicate_id_names_both_lines() {
        let file = write_lines(&[
            r#"{"id":"s0","source":"a","summary":"b"}"#,
            r#"{"id":"s1","source":"a","summary":"b"}"#,
            r#"{"id":"s2","source":"a","summary":"b"}"#,
            r#"{"id":"s3","source":"a","summary":"b"}"#,
            r#"{"id":"s1","source":"c","summary":"d"}"#,
        ]);
        let err = load_corpus(file.path(), "dev").unwrap_err();
        match err {
            DataError::DuplicateId { id, first_line, second_line } => {
                assert_eq!(id, "s1");
                assert_eq!(first_line, 2);
                assert_eq!(second_line, 5);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn reconstructs_gold_from_aspects() {
        let file = write_lines(&[
            r#"{"id":"s1","source":"a","summary":"b","gold_aspects":{"relevance":4,"consistency":5,"coherence":4,"fluency":5}}"#,
        ]);
        let corpus = load_corpus(file.path(), "dev").unwrap();
        assert_eq!(corpus.samples[0].gold, Some(4.5));
    }

    #[test]
    fn explicit_gold_wins_over_aspect_mean() {
        let file = write_lines(&[
            r#"{"id":"s1","source":"a","summary":"b","gold":2.0,"gold_aspects":{"relevance":4,"fluency":5}}"#,
        ]);
        let corpus = load_corpus(file.path(), "dev").unwrap();
        assert_eq!(corpus.samples[0].gold, Some(2.0));
    }

    #[test]
    fn rejects_out_of_range_gold_aspects() {
        let file = write_lines(&[
            r#"{"id":"s1","source":"a","summary":"b","gold_aspects":{"relevance":6}}"#,
        ]);
        assert!(matches!(
            load_corpus(file.path(), "dev"),
            Err(DataError::InvalidSample { line: 1, .. })
        ));
    }

    #[test]
    fn rejects_missing_fields_with_line_number() {
        let file = write_lines(&[
            r#"{"id":"s1","source":"a","summary":"b"}"#,
            r#"{"id":"s2","summary":"b"}"#,
        ]);
        assert!(matches!(
            load_corpus(file.path(), "dev"),
            Err(DataError::MalformedLine { line: 2, .. })
        ));
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(matches!(
            load_corpus(Path::new("/nonexistent/corpus.jsonl"), "dev"),
            Err(DataError::Read { .. })
        ));
    }

    #[test]
    fn records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let records: Vec<_> = (0..10).map(|i| record(&format!("s{i}"), 3.0)).collect();
        write_records(&records, &path).unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn empty_record_list_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        write_records(&[], &path).unwrap();
        assert!(read_records(&path).unwrap().is_empty());
    }

    #[test]
    fn rationale_newlines_survive_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let mut r = record("s1", 2.0);
        r.rationale = Some("line one\nline two\n\ttabbed".to_string());
        write_records(std::slice::from_ref(&r), &path).unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(back[0].rationale.as_deref(), Some("line one\nline two\n\ttabbed"));
    }

    #[test]
    fn read_rejects_missing_final_score() {
        let file = write_lines(&[
            r#"{"sample_id":"s1","aspect_scores":{},"method":{"kind":"direct","scale":{"min":1,"max":5,"step":1}}}"#,
        ]);
        assert!(matches!(
            read_records(file.path()),
            Err(DataError::MalformedLine { line: 1, .. })
        ));
    }

    #[test]
    fn filtered_at_scale_min_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let mut r = record("s1", 1.0);
        r.filtered = true;
        write_records(std::slice::from_ref(&r), &path).unwrap();
        let back = read_records(&path).unwrap();
        assert!(back[0].filtered);
    }

    #[test]
    fn filtered_off_minimum_is_rejected() {
        let mut r = record("s1", 3.0);
        r.filtered = true;
        assert!(r.validate().is_err());
    }
}
