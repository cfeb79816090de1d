//! Segment-level Kendall tau-b with tie accounting, plus tabulation of the
//! rationale error taxonomy.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aspect::Aspect;
use crate::dataset::{Corpus, EvaluationRecord};

#[derive(Debug, Error)]
pub enum MetaEvalError {
    #[error("pred has {pred} items but gold has {gold}")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("need at least 2 paired items, got {0}")]
    TooShort(usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("record {0:?} has no binned_score but use_binned was requested")]
    MissingBinned(String),
    #[error("fewer than 2 usable (score, gold) pairs after skipping")]
    InsufficientPairs,
    #[error("no taxonomy labels supplied")]
    EmptyLabels,
    #[error("duplicate taxonomy label for record {record_id:?}, aspect {aspect}, condition {condition:?}")]
    DuplicateLabel {
        record_id: String,
        aspect: Aspect,
        condition: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauVariant {
    TauB,
}

/// Kendall correlation with the full pair decomposition.
///
/// `tau = (C - D) / sqrt((C + D + Tp) (C + D + Tg))` where `Tp`/`Tg` count
/// pairs tied only in pred/gold; pairs tied in both sides are excluded from
/// both. `tau` is `None` when every pair is tied on one side (a constant
/// predictor is degenerate, not uncorrelated).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub variant: TauVariant,
    pub n_items: usize,
    pub n_pairs: u64,
    pub concordant: u64,
    pub discordant: u64,
    pub ties_pred: u64,
    pub ties_gold: u64,
    pub ties_both: u64,
    pub tau: Option<f64>,
}

impl CorrelationReport {
    pub fn degenerate(&self) -> bool {
        self.tau.is_none()
    }

    /// The pair decomposition must account for every pair.
    pub fn pairs_accounted(&self) -> bool {
        self.concordant + self.discordant + self.ties_pred + self.ties_gold + self.ties_both
            == self.n_pairs
    }
}

fn check_inputs(pred: &[f64], gold: &[f64]) -> Result<(), MetaEvalError> {
    if pred.len() != gold.len() {
        return Err(MetaEvalError::LengthMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    if pred.len() < 2 {
        return Err(MetaEvalError::TooShort(pred.len()));
    }
    for (i, v) in pred.iter().chain(gold.iter()).enumerate() {
        if !v.is_finite() {
            return Err(MetaEvalError::NonFinite(i % pred.len()));
        }
    }
    Ok(())
}

fn tie_pairs_in_runs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for i in 1..sorted.len() {
        if sorted[i] == sorted[i - 1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Count strict inversions (i < j with values[i] > values[j]) by merge sort.
fn count_inversions(values: &mut [f64]) -> u64 {
    let n = values.len();
    if n < 2 {
        return 0;
    }
    let mut buffer = vec![0.0f64; n];
    let mut inversions = 0u64;
    let mut width = 1;
    while width < n {
        let mut start = 0;
        while start < n {
            let mid = (start + width).min(n);
            let end = (start + 2 * width).min(n);
            if mid < end {
                let (mut i, mut j, mut k) = (start, mid, start);
                while i < mid && j < end {
                    if values[i] <= values[j] {
                        buffer[k] = values[i];
                        i += 1;
                    } else {
                        buffer[k] = values[j];
                        j += 1;
                        inversions += (mid - i) as u64;
                    }
                    k += 1;
                }
                while i < mid {
                    buffer[k] = values[i];
                    i += 1;
                    k += 1;
                }
                while j < end {
                    buffer[k] = values[j];
                    j += 1;
                    k += 1;
                }
                values[start..end].copy_from_slice(&buffer[start..end]);
            }
            start += 2 * width;
        }
        width *= 2;
    }
    inversions
}

/// Kendall tau-b in O(n log n): sort once by (pred, gold), read tie runs,
/// and count discordant pairs as inversions of the gold sequence.
pub fn kendall_tau(pred: &[f64], gold: &[f64]) -> Result<CorrelationReport, MetaEvalError> {
    check_inputs(pred, gold)?;
    let n = pred.len();
    let n_pairs = (n as u64) * (n as u64 - 1) / 2;

    let mut pairs: Vec<(f64, f64)> = pred.iter().copied().zip(gold.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    // Tie mass in pred (all pairs tied in pred, including tied-both).
    let pred_sorted: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let tied_pred_all = tie_pairs_in_runs(&pred_sorted);
    let tied_both = tie_pairs_in_runs(&pairs);

    // Gold sorted alone for its tie mass.
    let mut gold_sorted: Vec<f64> = gold.to_vec();
    gold_sorted.sort_by(f64::total_cmp);
    let tied_gold_all = tie_pairs_in_runs(&gold_sorted);

    // With pred ascending and gold ascending inside pred-ties, a strict gold
    // inversion is exactly a discordant pair.
    let mut gold_seq: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let discordant = count_inversions(&mut gold_seq);

    // Inclusion-exclusion keeps this non-negative when added before the
    // subtractions.
    let concordant = n_pairs + tied_both - tied_pred_all - tied_gold_all - discordant;
    let ties_pred = tied_pred_all - tied_both;
    let ties_gold = tied_gold_all - tied_both;

    let denom_pred = concordant + discordant + ties_pred;
    let denom_gold = concordant + discordant + ties_gold;
    let tau = if denom_pred == 0 || denom_gold == 0 {
        None
    } else {
        Some(
            (concordant as f64 - discordant as f64)
                / ((denom_pred as f64) * (denom_gold as f64)).sqrt(),
        )
    };

    Ok(CorrelationReport {
        variant: TauVariant::TauB,
        n_items: n,
        n_pairs,
        concordant,
        discordant,
        ties_pred,
        ties_gold,
        ties_both: tied_both,
        tau,
    })
}

/// O(n²) reference implementation by exhaustive pair enumeration; exists to
/// cross-check [`kendall_tau`] and shares none of its counting machinery.
pub fn tau_bruteforce_oracle(
    pred: &[f64],
    gold: &[f64],
) -> Result<CorrelationReport, MetaEvalError> {
    check_inputs(pred, gold)?;
    let n = pred.len();
    let (mut c, mut d, mut tp, mut tg, mut tb) = (0u64, 0u64, 0u64, 0u64, 0u64);
    for i in 0..n {
        for j in (i + 1)..n {
            let dp = pred[i].total_cmp(&pred[j]);
            let dg = gold[i].total_cmp(&gold[j]);
            match (dp.is_eq(), dg.is_eq()) {
                (true, true) => tb += 1,
                (true, false) => tp += 1,
                (false, true) => tg += 1,
                (false, false) => {
                    if dp == dg {
                        c += 1;
                    } else {
                        d += 1;
                    }
                }
            }
        }
    }
    let denom_pred = c + d + tp;
    let denom_gold = c + d + tg;
    let tau = if denom_pred == 0 || denom_gold == 0 {
        None
    } else {
        Some((c as f64 - d as f64) / ((denom_pred as f64) * (denom_gold as f64)).sqrt())
    };
    Ok(CorrelationReport {
        variant: TauVariant::TauB,
        n_items: n,
        n_pairs: (n as u64) * (n as u64 - 1) / 2,
        concordant: c,
        discordant: d,
        ties_pred: tp,
        ties_gold: tg,
        ties_both: tb,
        tau,
    })
}

/// Correlation of a run against gold, with skip accounting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunCorrelation {
    pub report: CorrelationReport,
    pub pairs_used: usize,
    pub skipped_no_gold: usize,
    pub skipped_no_record: usize,
    pub used_binned: bool,
}

/// Pair each corpus sample's gold score with the system score of its record
/// (in corpus order) and run [`kendall_tau`]. Samples without gold are
/// skipped with a warning and counted.
pub fn correlate_run(
    records: &[EvaluationRecord],
    corpus: &Corpus,
    use_binned: bool,
) -> Result<RunCorrelation, MetaEvalError> {
    let by_id: BTreeMap<&str, &EvaluationRecord> = records
        .iter()
        .map(|r| (r.sample_id.as_str(), r))
        .collect();
    let mut pred = Vec::new();
    let mut gold = Vec::new();
    let mut skipped_no_gold = 0usize;
    let mut skipped_no_record = 0usize;
    for sample in &corpus.samples {
        let Some(record) = by_id.get(sample.id.as_str()) else {
            skipped_no_record += 1;
            continue;
        };
        let Some(gold_score) = sample.gold else {
            log::warn!("sample {} has no gold score; skipping in correlation", sample.id);
            skipped_no_gold += 1;
            continue;
        };
        let system_score = if use_binned {
            record
                .binned_score
                .ok_or_else(|| MetaEvalError::MissingBinned(record.sample_id.clone()))?
        } else {
            record.final_score
        };
        pred.push(system_score);
        gold.push(gold_score);
    }
    if pred.len() < 2 {
        return Err(MetaEvalError::InsufficientPairs);
    }
    let report = kendall_tau(&pred, &gold)?;
    Ok(RunCorrelation {
        report,
        pairs_used: pred.len(),
        skipped_no_gold,
        skipped_no_record,
        used_binned: use_binned,
    })
}

/// Human label for one generated rationale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum ErrorType {
    /// Rationale is sound.
    Good,
    /// Rationale contradicts the assigned score.
    Inconsistent,
    /// Rationale includes information absent from source and summary.
    Hallucination,
    /// Rationale discusses a different aspect than the designated one.
    DifferentAspect,
}

impl ErrorType {
    pub fn label(self) -> &'static str {
        match self {
            ErrorType::Good => "Good",
            ErrorType::Inconsistent => "Inconsistent",
            ErrorType::Hallucination => "Hallucination",
            ErrorType::DifferentAspect => "Different Aspect",
        }
    }

    pub fn all() -> [ErrorType; 4] {
        [
            ErrorType::Good,
            ErrorType::Inconsistent,
            ErrorType::Hallucination,
            ErrorType::DifferentAspect,
        ]
    }
}

impl TryFrom<u8> for ErrorType {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            0 => Ok(ErrorType::Good),
            1 => Ok(ErrorType::Inconsistent),
            2 => Ok(ErrorType::Hallucination),
            3 => Ok(ErrorType::DifferentAspect),
            other => Err(format!("error_type {other} outside 0..=3")),
        }
    }
}

impl From<ErrorType> for u8 {
    fn from(value: ErrorType) -> u8 {
        match value {
            ErrorType::Good => 0,
            ErrorType::Inconsistent => 1,
            ErrorType::Hallucination => 2,
            ErrorType::DifferentAspect => 3,
        }
    }
}

/// One human judgment: ties (record, aspect, condition) to an error type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTaxonomyLabel {
    pub record_id: String,
    pub aspect: Aspect,
    pub error_type: ErrorType,
    pub condition: String,
}

/// Per-condition error-occurrence ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionTaxonomy {
    /// Distinct labeled instances (record ids) under this condition; the
    /// ratio denominator. An instance labeled on several aspects can carry
    /// more than one error type, so ratios may sum past 100%.
    pub instances: usize,
    pub labels: usize,
    pub counts: BTreeMap<ErrorType, usize>,
    /// Occurrence ratio per error type, rounded to the nearest whole percent.
    pub ratios_percent: BTreeMap<ErrorType, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyReport {
    pub conditions: BTreeMap<String, ConditionTaxonomy>,
}

impl TaxonomyReport {
    /// Fixed-width table with one row per error type, one column per
    /// condition.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<20}", "Error Type"));
        for condition in self.conditions.keys() {
            out.push_str(&format!(" {condition:>14}"));
        }
        out.push('\n');
        for error_type in ErrorType::all() {
            out.push_str(&format!(
                "{:<20}",
                format!("{} {}", u8::from(error_type), error_type.label())
            ));
            for stats in self.conditions.values() {
                let pct = stats.ratios_percent.get(&error_type).copied().unwrap_or(0);
                out.push_str(&format!(" {:>13}%", pct));
            }
            out.push('\n');
        }
        out
    }
}

/// Tabulate labels per condition: each error type's occurrence ratio over
/// the condition's distinct labeled instances.
pub fn taxonomy_report(labels: &[ErrorTaxonomyLabel]) -> Result<TaxonomyReport, MetaEvalError> {
    if labels.is_empty() {
        return Err(MetaEvalError::EmptyLabels);
    }
    let mut seen: BTreeSet<(&str, Aspect, &str)> = BTreeSet::new();
    for label in labels {
        let key = (
            label.record_id.as_str(),
            label.aspect,
            label.condition.as_str(),
        );
        if !seen.insert(key) {
            return Err(MetaEvalError::DuplicateLabel {
                record_id: label.record_id.clone(),
                aspect: label.aspect,
                condition: label.condition.clone(),
            });
        }
    }

    let mut conditions: BTreeMap<String, (BTreeSet<&str>, BTreeMap<ErrorType, usize>, usize)> =
        BTreeMap::new();
    for label in labels {
        let entry = conditions.entry(label.condition.clone()).or_default();
        entry.0.insert(label.record_id.as_str());
        *entry.1.entry(label.error_type).or_insert(0) += 1;
        entry.2 += 1;
    }

    let conditions = conditions
        .into_iter()
        .map(|(condition, (ids, counts, label_count))| {
            let instances = ids.len();
            let ratios_percent = counts
                .iter()
                .map(|(&error_type, &count)| {
                    let pct = (count as f64 / instances as f64 * 100.0).round() as u32;
                    (error_type, pct)
                })
                .collect();
            (
                condition,
                ConditionTaxonomy {
                    instances,
                    labels: label_count,
                    counts,
                    ratios_percent,
                },
            )
        })
        .collect();

    Ok(TaxonomyReport { conditions })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_ranking_is_plus_one() {
        let r = kendall_tau(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(r.tau, Some(1.0));
        assert!(r.pairs_accounted());
    }

    #[test]
    fn reversed_ranking_is_minus_one() {
        let r = kendall_tau(&[4.0, 3.0, 2.0, 1.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(r.tau, Some(-1.0));
    }

    #[test]
    fn tie_decomposition_matches_hand_enumeration() {
        let r = kendall_tau(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(r.concordant, 5);
        assert_eq!(r.discordant, 0);
        assert_eq!(r.ties_pred, 1);
        assert_eq!(r.ties_gold, 0);
        assert_eq!(r.ties_both, 0);
        let expected = 5.0 / 30.0f64.sqrt();
        assert!((r.tau.unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn all_tied_pred_is_degenerate_not_zero() {
        let r = kendall_tau(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(r.degenerate());
        assert!(r.pairs_accounted());
    }

    #[test]
    fn two_item_cases() {
        let concordant = kendall_tau(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(concordant.tau, Some(1.0));
        let tied = kendall_tau(&[1.0, 1.0], &[3.0, 4.0]).unwrap();
        assert!(tied.degenerate());
    }

    #[test]
    fn oracle_agrees_on_small_cases() {
        let cases: &[(&[f64], &[f64])] = &[
            (&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]),
            (&[1.0, 1.0, 2.0, 2.0, 3.0, 3.0], &[1.0, 2.0, 2.0, 3.0, 3.0, 4.0]),
            (&[5.0, 1.0, 4.0, 2.0], &[1.0, 5.0, 2.0, 4.0]),
        ];
        for (pred, gold) in cases {
            let fast = kendall_tau(pred, gold).unwrap();
            let slow = tau_bruteforce_oracle(pred, gold).unwrap();
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            kendall_tau(&[1.0], &[1.0]),
            Err(MetaEvalError::TooShort(1))
        ));
        assert!(matches!(
            kendall_tau(&[1.0, 2.0], &[1.0]),
            Err(MetaEvalError::LengthMismatch { .. })
        ));
        assert!(matches!(
            kendall_tau(&[1.0, f64::NAN], &[1.0, 2.0]),
            Err(MetaEvalError::NonFinite(_))
        ));
    }

    #[test]
    fn taxonomy_all_good() {
        let labels: Vec<_> = (0..5)
            .map(|i| ErrorTaxonomyLabel {
                record_id: format!("r{i}"),
                aspect: Aspect::Relevance,
                error_type: ErrorType::Good,
                condition: "Base".into(),
            })
            .collect();
        let report = taxonomy_report(&labels).unwrap();
        let base = &report.conditions["Base"];
        assert_eq!(base.ratios_percent[&ErrorType::Good], 100);
        assert_eq!(base.ratios_percent.get(&ErrorType::Hallucination), None);
    }

    #[test]
    fn taxonomy_even_split() {
        let mut labels = Vec::new();
        for i in 0..10 {
            labels.push(ErrorTaxonomyLabel {
                record_id: format!("r{i}"),
                aspect: Aspect::Relevance,
                error_type: if i < 5 { ErrorType::Good } else { ErrorType::Hallucination },
                condition: "Base".into(),
            });
        }
        let report = taxonomy_report(&labels).unwrap();
        let base = &report.conditions["Base"];
        assert_eq!(base.ratios_percent[&ErrorType::Good], 50);
        assert_eq!(base.ratios_percent[&ErrorType::Hallucination], 50);
    }

    #[test]
    fn taxonomy_rejects_duplicates() {
        let label = ErrorTaxonomyLabel {
            record_id: "r1".into(),
            aspect: Aspect::Coherence,
            error_type: ErrorType::Good,
            condition: "Base".into(),
        };
        assert!(matches!(
            taxonomy_report(&[label.clone(), label]),
            Err(MetaEvalError::DuplicateLabel { .. })
        ));
    }

    #[test]
    fn taxonomy_counts_instances_not_labels() {
        // One record labeled on two aspects: 2 labels, 1 instance.
        let labels = vec![
            ErrorTaxonomyLabel {
                record_id: "r1".into(),
                aspect: Aspect::Relevance,
                error_type: ErrorType::Good,
                condition: "Base".into(),
            },
            ErrorTaxonomyLabel {
                record_id: "r1".into(),
                aspect: Aspect::Fluency,
                error_type: ErrorType::Hallucination,
                condition: "Base".into(),
            },
        ];
        let report = taxonomy_report(&labels).unwrap();
        let base = &report.conditions["Base"];
        assert_eq!(base.instances, 1);
        assert_eq!(base.labels, 2);
        assert_eq!(base.ratios_percent[&ErrorType::Good], 100);
        assert_eq!(base.ratios_percent[&ErrorType::Hallucination], 100);
    }
}
