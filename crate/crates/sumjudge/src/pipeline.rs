//! End-to-end orchestration: render → complete → aggregate → combine →
//! filter → bin → correlate, plus the grid comparison and prompt dumps.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aspect::Aspect;
use crate::backend::BackendError;
use crate::config::{
    unix_ms, write_json_atomic, ConfigError, RunConfig, RunManifest, StageCounts,
};
use crate::dataset::{self, DataError, EvaluationRecord};
use crate::meta_eval::{correlate_run, MetaEvalError, RunCorrelation};
use crate::postprocess::{self, PostprocessError};
use crate::prompt::{
    self, DemoPackEntry, Demonstration, PromptError, TemplateFamily, TemplateSet,
};
use crate::scoring::{self, EvalError, EvaluationContext, GranularityMode};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Postprocess(#[from] PostprocessError),
    #[error(transparent)]
    MetaEval(#[from] MetaEvalError),
    #[error("unknown sample id {0:?}")]
    UnknownSample(String),
    #[error("grid needs at least one config")]
    EmptyGrid,
    #[error("grid configs must share one corpus: {0:?} vs {1:?}")]
    GridCorpusMismatch(PathBuf, PathBuf),
    #[error("grid run {0:?} produced no correlation (corpus has no gold scores)")]
    GridNeedsGold(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    /// CLI exit code: 1 config, 2 backend, 3 data.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Prompt(_) | RunError::EmptyGrid
            | RunError::GridCorpusMismatch(_, _) | RunError::GridNeedsGold(_) => 1,
            RunError::Backend(_) => 2,
            RunError::Eval(EvalError::Backend(_)) | RunError::Eval(EvalError::LogprobsUnavailable) => 2,
            RunError::Eval(EvalError::Prompt(_)) | RunError::Eval(EvalError::NotRationaleFamily) => 1,
            RunError::Postprocess(PostprocessError::Backend(_)) => 2,
            RunError::Postprocess(PostprocessError::Prompt(_))
            | RunError::Postprocess(PostprocessError::InvalidBinning(_)) => 1,
            _ => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Map items to results on a bounded worker pool, preserving input order in
/// the output regardless of completion order.
fn parallel_map_ordered<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    if items.is_empty() {
        return Vec::new();
    }
    let workers = workers.max(1).min(items.len());
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let result = f(i, &items[i]);
                *slots[i].lock().expect("result slot poisoned") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .expect("result slot poisoned")
                .expect("every slot filled")
        })
        .collect()
}

/// Write demonstration-pack entries as line-oriented JSON.
pub fn write_demo_pack(entries: &[DemoPackEntry], path: &Path) -> Result<(), RunError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut writer = BufWriter::new(file);
    for entry in entries {
        let line = serde_json::to_string(entry).expect("entry serializes");
        writeln!(writer, "{line}").map_err(io_err(path))?;
    }
    writer.flush().map_err(io_err(path))
}

pub fn read_demo_pack(path: &Path) -> Result<Vec<DemoPackEntry>, RunError> {
    let file = File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(file);
    let mut entries = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: DemoPackEntry =
            serde_json::from_str(&line).map_err(|e| DataError::MalformedLine {
                line: idx + 1,
                message: e.to_string(),
            })?;
        entry.demonstration.validate()?;
        entries.push(entry);
    }
    Ok(entries)
}

fn resolve_demonstrations(
    config: &RunConfig,
) -> Result<BTreeMap<Option<Aspect>, Demonstration>, RunError> {
    let Some(demo_config) = &config.demonstration else {
        return Ok(BTreeMap::new());
    };
    let entries = read_demo_pack(&demo_config.pack)?;
    let GranularityMode::Fine { aspects } = &config.granularity else {
        return Err(ConfigError::Invalid("demonstrations need fine granularity".into()).into());
    };
    let mut map = BTreeMap::new();
    for aspect in aspects {
        let entry = entries
            .iter()
            .find(|e| {
                e.aspect == *aspect
                    && e.demonstration.quality == demo_config.quality
                    && e.demonstration.kind == demo_config.kind
            })
            .ok_or_else(|| {
                ConfigError::Invalid(format!(
                    "demo pack {} has no {:?}/{:?} entry for aspect {aspect}",
                    demo_config.pack.display(),
                    demo_config.quality,
                    demo_config.kind
                ))
            })?;
        map.insert(Some(*aspect), entry.demonstration.clone());
    }
    Ok(map)
}

fn load_templates(config: &RunConfig) -> Result<TemplateSet, RunError> {
    match &config.template_dir {
        Some(dir) => Ok(TemplateSet::from_dir(dir)?),
        None => Ok(TemplateSet::builtin()),
    }
}

/// Everything a finished run leaves on disk.
#[derive(Debug)]
pub struct RunOutput {
    pub out_dir: PathBuf,
    pub records_path: PathBuf,
    pub manifest_path: PathBuf,
    pub correlation_path: Option<PathBuf>,
    pub manifest: RunManifest,
    pub records: Vec<EvaluationRecord>,
    pub correlation: Option<RunCorrelation>,
}

/// Execute the full pipeline into `out_dir`: records.jsonl, manifest.json,
/// and correlation.json when the corpus carries gold scores.
pub fn run(config: &RunConfig, out_dir: &Path) -> Result<RunOutput, RunError> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let started_unix_ms = unix_ms();

    let templates = load_templates(config)?;
    let corpus = dataset::load_corpus(&config.corpus, &config.split_tag)?;
    let demonstrations = resolve_demonstrations(config)?;
    let decoding = config.effective_decoding();

    let ctx = EvaluationContext {
        templates: &templates,
        family: config.family,
        variants: config.variants.clone(),
        demonstrations,
        scale: config.scale,
        method: config.aggregation,
        mode: config.granularity.clone(),
        backend: &config.backend,
        params: decoding,
        on_parse_failure: config.on_parse_failure,
    };

    // Fan out per-sample work; assembly is by index so output order never
    // depends on completion order.
    let outcomes = parallel_map_ordered(&corpus.samples, config.concurrency, |_, sample| {
        if config.family == TemplateFamily::RationaleGeneration {
            scoring::evaluate_with_rationale(sample, &ctx)
        } else {
            scoring::evaluate_sample(sample, &ctx)
        }
    });

    let mut records = Vec::with_capacity(corpus.len());
    let mut skipped_parse_policy = 0usize;
    for outcome in outcomes {
        match outcome? {
            Some(record) => records.push(record),
            None => skipped_parse_policy += 1,
        }
    }

    let mut counts = StageCounts {
        samples: corpus.len(),
        evaluated: records.len(),
        skipped_parse_policy,
        prompts: records.iter().map(|r| r.aspect_scores.len()).sum(),
        completions: records.iter().map(|r| r.raw_completions.len()).sum(),
        parse_failures: records.iter().map(|r| u64::from(r.parse_failures)).sum(),
        ..StageCounts::default()
    };

    if config.filtering {
        let with_records: Vec<&crate::dataset::Sample> = corpus
            .samples
            .iter()
            .filter(|s| records.iter().any(|r| r.sample_id == s.id))
            .collect();
        let verdicts = parallel_map_ordered(&with_records, config.concurrency, |_, sample| {
            postprocess::filter_verdict(sample, &templates, &config.backend, &ctx.params)
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
        counts.filter_verdicts_unparsable = verdicts.iter().filter(|v| v.unparsable).count();
        records = postprocess::apply_filter(&records, &verdicts, &config.scale)?;
        counts.filtered = records.iter().filter(|r| r.filtered).count();
    }

    if let Some(binning) = &config.binning {
        let (binned, report) = postprocess::bin_scores(&records, binning)?;
        records = binned;
        counts.unique_scores_before_binning = Some(report.unique_before);
        counts.unique_scores_after_binning = Some(report.unique_after);
    }

    let records_path = out_dir.join("records.jsonl");
    dataset::write_records(&records, &records_path)?;

    let correlation = if corpus.samples.iter().any(|s| s.gold.is_some()) {
        Some(correlate_run(&records, &corpus, config.binning.is_some())?)
    } else {
        None
    };

    let manifest = RunManifest {
        config: config.clone(),
        template_fingerprints: templates.fingerprints(),
        backend_identity: config.backend.identity(),
        sampling_mode: match &config.backend {
            crate::backend::BackendDescriptor::Mock(_) => "mock".to_string(),
            crate::backend::BackendDescriptor::Http(http) => {
                if http.server_side_sampling { "server-n" } else { "client-loop" }.to_string()
            }
        },
        started_unix_ms,
        finished_unix_ms: unix_ms(),
        counts,
    };
    let manifest_path = out_dir.join("manifest.json");
    write_json_atomic(&manifest, &manifest_path).map_err(io_err(&manifest_path))?;

    let correlation_path = match &correlation {
        Some(report) => {
            let path = out_dir.join("correlation.json");
            write_json_atomic(report, &path).map_err(io_err(&path))?;
            Some(path)
        }
        None => None,
    };

    Ok(RunOutput {
        out_dir: out_dir.to_path_buf(),
        records_path,
        manifest_path,
        correlation_path,
        manifest,
        records,
        correlation,
    })
}

/// One grid row: the run's configuration summary plus its correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub name: String,
    pub family: TemplateFamily,
    pub fine_grained: bool,
    pub demonstration: String,
    pub aggregation: String,
    pub tau: Option<f64>,
    pub pairs_used: usize,
    pub concordant: u64,
    pub discordant: u64,
    pub ties_pred: u64,
    pub ties_gold: u64,
    pub ties_both: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTable {
    pub rows: Vec<GridRow>,
}

impl GridTable {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<18} {:<18} {:<6} {:<14} {:<14} {:>8} {:>6} {:>6} {:>6}\n",
            "Run", "Template", "Fine", "Demonstration", "Aggregation", "Tau", "C", "D", "Ties"
        ));
        for row in &self.rows {
            out.push_str(&format!(
                "{:<18} {:<18} {:<6} {:<14} {:<14} {:>8} {:>6} {:>6} {:>6}\n",
                row.name,
                format!("{:?}", row.family),
                if row.fine_grained { "yes" } else { "no" },
                row.demonstration,
                row.aggregation,
                row.tau
                    .map(|t| format!("{t:.4}"))
                    .unwrap_or_else(|| "degen.".to_string()),
                row.concordant,
                row.discordant,
                row.ties_pred + row.ties_gold + row.ties_both,
            ));
        }
        out
    }
}

/// Run every config into its own subdirectory and compare by tau
/// (descending; degenerate results sort last).
pub fn grid(configs: &[(String, RunConfig)], out_dir: &Path) -> Result<GridTable, RunError> {
    if configs.is_empty() {
        return Err(RunError::EmptyGrid);
    }
    let first_corpus = &configs[0].1.corpus;
    for (_, config) in configs {
        if &config.corpus != first_corpus {
            return Err(RunError::GridCorpusMismatch(
                first_corpus.clone(),
                config.corpus.clone(),
            ));
        }
    }

    let mut rows = Vec::with_capacity(configs.len());
    for (name, config) in configs {
        let output = run(config, &out_dir.join(name))?;
        let correlation = output
            .correlation
            .ok_or_else(|| RunError::GridNeedsGold(name.clone()))?;
        let report = correlation.report;
        rows.push(GridRow {
            name: name.clone(),
            family: config.family,
            fine_grained: matches!(config.granularity, GranularityMode::Fine { .. }),
            demonstration: match &config.demonstration {
                None => "x".to_string(),
                Some(d) => format!("{:?}-{:?}", d.kind, d.quality).to_lowercase(),
            },
            aggregation: format!("{:?}", config.aggregation.kind()).to_lowercase(),
            tau: report.tau,
            pairs_used: correlation.pairs_used,
            concordant: report.concordant,
            discordant: report.discordant,
            ties_pred: report.ties_pred,
            ties_gold: report.ties_gold,
            ties_both: report.ties_both,
        });
    }

    rows.sort_by(|a, b| match (a.tau, b.tau) {
        (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.name.cmp(&b.name)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.name.cmp(&b.name),
    });

    let table = GridTable { rows };
    let table_path = out_dir.join("grid.json");
    write_json_atomic(&table, &table_path).map_err(io_err(&table_path))?;
    Ok(table)
}

/// Render prompts without touching any backend; used for auditing and
/// snapshot tests. Empty `sample_ids` means the whole corpus.
pub fn render_only(
    config: &RunConfig,
    sample_ids: &[String],
    out: &mut dyn Write,
) -> Result<(), RunError> {
    config.validate()?;
    let templates = load_templates(config)?;
    let corpus = dataset::load_corpus(&config.corpus, &config.split_tag)?;
    let demonstrations = resolve_demonstrations(config)?;

    let samples: Vec<&crate::dataset::Sample> = if sample_ids.is_empty() {
        corpus.samples.iter().collect()
    } else {
        sample_ids
            .iter()
            .map(|id| {
                corpus
                    .get(id)
                    .ok_or_else(|| RunError::UnknownSample(id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?
    };

    let units: Vec<Option<Aspect>> = match &config.granularity {
        GranularityMode::Coarse => vec![None],
        GranularityMode::Fine { aspects } => aspects.iter().map(|a| Some(*a)).collect(),
    };

    for sample in samples {
        for aspect in &units {
            let spec = prompt::PromptSpec {
                family: config.family,
                aspect: *aspect,
                variants: config.variants.clone(),
                scale: config.scale,
                demonstration: demonstrations.get(aspect).cloned(),
            };
            let rendered = prompt::render_for(&spec, sample, &templates)?;
            let unit = aspect.map(|a| a.name()).unwrap_or("overall");
            writeln!(
                out,
                "=== sample {} [{}] fingerprint={} ===",
                sample.id, unit, rendered.fingerprint
            )
            .map_err(io_err(Path::new("stdout")))?;
            writeln!(out, "{}", rendered.text).map_err(io_err(Path::new("stdout")))?;
        }
    }
    Ok(())
}
