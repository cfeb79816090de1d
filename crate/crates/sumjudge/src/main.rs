//! `sumjudge` — reference-free summarization evaluation from the command
//! line.
//!
//! Exit codes: 0 success, 1 config error, 2 backend error, 3 data error.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use sumjudge::aspect::Aspect;
use sumjudge::backend::{BackendDescriptor, HttpBackend, MockProfile};
use sumjudge::config::{ConfigError, DemonstrationConfig, RunConfig};
use sumjudge::dataset;
use sumjudge::meta_eval::{self, ErrorTaxonomyLabel};
use sumjudge::pipeline::{self, RunError};
use sumjudge::postprocess::{self, BinningConfig};
use sumjudge::prompt::{
    self, CriteriaVariant, DemoKind, DemoQuality, StepsVariant, TaskDescriptionVariant,
    TemplateFamily,
};
use sumjudge::scoring::{AggregationMethod, GranularityMode, ParseFailurePolicy, ScoreScale};

/// Endpoint override honored when no --endpoint flag is given.
const ENDPOINT_ENV: &str = "SUMJUDGE_ENDPOINT";

#[derive(Parser)]
#[command(name = "sumjudge", version, about = "LLM-as-judge summarization evaluation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render prompts without calling any backend.
    Render {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated sample ids (default: whole corpus).
        #[arg(long, value_delimiter = ',')]
        ids: Vec<String>,
        /// Write the dump here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full pipeline: evaluate, post-process, correlate.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory for records.jsonl, manifest.json, correlation.json.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Apply redundancy filtering to an existing record file.
    Filter {
        /// Record file produced by `evaluate`.
        #[arg(long)]
        records: PathBuf,
        /// Corpus the records were evaluated on (for the summaries).
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        seed: Option<u64>,
        /// Transformed record file.
        #[arg(long)]
        out: PathBuf,
        /// Also write the verdicts (one JSON object per line).
        #[arg(long)]
        verdicts_out: Option<PathBuf>,
    },
    /// Bin the final scores of an existing record file.
    Bin {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Bin width (default: a tenth of the range).
        #[arg(long)]
        bin_width: Option<f64>,
        /// Binning range as "min:max" (default: the records' scale).
        #[arg(long)]
        bin_range: Option<String>,
    },
    /// Kendall tau-b of a record file against corpus gold scores.
    Correlate {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Correlate binned_score instead of final_score.
        #[arg(long)]
        use_binned: bool,
        /// Write the machine-readable report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate rationale error-taxonomy labels.
    Taxonomy {
        /// Label file: one JSON object per line with record_id, aspect,
        /// error_type (0-3), condition.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several configs on one corpus and compare by tau.
    Grid {
        /// JSON file: [{"name": ..., "preset": ..., "config": {...}}, ...].
        #[arg(long)]
        configs: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Build demonstration fixtures from an annotated train corpus.
    DemoPack {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_delimiter = ',')]
        aspects: Vec<String>,
        /// worst | best
        #[arg(long)]
        quality: String,
        /// base | reason
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct BackendArgs {
    /// OpenAI-compatible completions base URL (or SUMJUDGE_ENDPOINT).
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// JSON mock-profile file; selects the mock backend.
    #[arg(long)]
    mock_profile: Option<PathBuf>,
}

impl BackendArgs {
    fn resolve(&self) -> Result<Option<BackendDescriptor>, RunError> {
        if let Some(path) = &self.mock_profile {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                path: path.display().to_string(),
                source,
            })?;
            let profile: MockProfile =
                serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
                    path: path.display().to_string(),
                    source,
                })?;
            return Ok(Some(BackendDescriptor::mock(profile)));
        }
        let endpoint = self
            .endpoint
            .clone()
            .or_else(|| std::env::var(ENDPOINT_ENV).ok());
        match (endpoint, &self.model) {
            (Some(endpoint), Some(model)) => Ok(Some(BackendDescriptor::Http(HttpBackend::new(
                endpoint, model,
            )))),
            (None, None) => Ok(None),
            _ => Err(ConfigError::Invalid(
                "an http backend needs both --endpoint (or SUMJUDGE_ENDPOINT) and --model".into(),
            )
            .into()),
        }
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// Preset base layer: dev-summeval | test-eval4nlp.
    #[arg(long)]
    preset: Option<String>,
    /// JSON config file, merged over the preset; flags override both.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    split_tag: Option<String>,
    #[command(flatten)]
    backend: BackendArgs,
    /// baseline | human_guideline | model_guideline | rationale_generation.
    #[arg(long)]
    family: Option<String>,
    /// base | expert | short | long.
    #[arg(long)]
    task_description: Option<String>,
    /// ad | ht | mt | ad_gpt | ht_gpt | mt_gpt.
    #[arg(long)]
    criteria: Option<String>,
    /// base | complex.
    #[arg(long)]
    steps: Option<String>,
    /// direct | logprob | approximation.
    #[arg(long)]
    aggregation: Option<String>,
    #[arg(long)]
    n_samples: Option<u32>,
    /// coarse | fine.
    #[arg(long)]
    granularity: Option<String>,
    /// Comma-separated aspect names for fine granularity.
    #[arg(long, value_delimiter = ',')]
    aspects: Option<Vec<String>>,
    /// "1-5" or "0-100" (any "min-max" works).
    #[arg(long)]
    scale: Option<String>,
    /// skip | midpoint | fail.
    #[arg(long)]
    on_parse_failure: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    top_p: Option<f64>,
    #[arg(long)]
    max_tokens: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    template_dir: Option<PathBuf>,
    /// Demo-pack file built by `demo-pack`.
    #[arg(long)]
    demo_pack: Option<PathBuf>,
    /// worst | best.
    #[arg(long)]
    demo_quality: Option<String>,
    /// base | reason.
    #[arg(long)]
    demo_kind: Option<String>,
    #[arg(long)]
    filtering: Option<bool>,
    #[arg(long)]
    binning: Option<bool>,
    #[arg(long)]
    bin_width: Option<f64>,
    /// "min:max".
    #[arg(long)]
    bin_range: Option<String>,
    #[arg(long)]
    allow_nonstandard_decoding: bool,
}

fn parse_keyword<T>(value: &Option<String>, what: &str, table: &[(&str, T)]) -> Result<Option<T>, RunError>
where
    T: Clone,
{
    match value {
        None => Ok(None),
        Some(s) => {
            let key = s.trim().to_ascii_lowercase().replace('-', "_");
            table
                .iter()
                .find(|(name, _)| *name == key)
                .map(|(_, v)| Some(v.clone()))
                .ok_or_else(|| {
                    let options: Vec<&str> = table.iter().map(|(name, _)| *name).collect();
                    ConfigError::Invalid(format!(
                        "{what}: unknown value {s:?} (expected one of {options:?})"
                    ))
                    .into()
                })
        }
    }
}

fn parse_scale(value: &str) -> Result<ScoreScale, RunError> {
    let parts: Vec<&str> = value.split('-').collect();
    let invalid = || ConfigError::Invalid(format!("scale {value:?}: expected \"min-max\" like 1-5"));
    if parts.len() != 2 {
        return Err(invalid().into());
    }
    let min: i64 = parts[0].trim().parse().map_err(|_| invalid())?;
    let max: i64 = parts[1].trim().parse().map_err(|_| invalid())?;
    ScoreScale::new(min, max, 1).map_err(|e| ConfigError::Component(e.to_string()).into())
}

fn parse_bin_range(value: &str) -> Result<(f64, f64), RunError> {
    let invalid =
        || ConfigError::Invalid(format!("bin range {value:?}: expected \"min:max\" like 0:100"));
    let parts: Vec<&str> = value.split(':').collect();
    if parts.len() != 2 {
        return Err(invalid().into());
    }
    let min: f64 = parts[0].trim().parse().map_err(|_| invalid())?;
    let max: f64 = parts[1].trim().parse().map_err(|_| invalid())?;
    Ok((min, max))
}

/// Deep-merge JSON objects: `overlay` wins, objects merge recursively.
fn merge_json(base: &mut serde_json::Value, overlay: serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(base_map), serde_json::Value::Object(overlay_map)) => {
            for (key, value) in overlay_map {
                match base_map.get_mut(&key) {
                    Some(slot) => merge_json(slot, value),
                    None => {
                        base_map.insert(key, value);
                    }
                }
            }
        }
        (slot, value) => *slot = value,
    }
}

impl ConfigArgs {
    /// Precedence: flags > config file > preset (default dev-summeval).
    fn resolve(&self) -> Result<RunConfig, RunError> {
        let preset_name = self.preset.as_deref().unwrap_or("dev-summeval");
        let preset = RunConfig::preset(preset_name)?;
        let mut value = serde_json::to_value(&preset).expect("config serializes");
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                path: path.display().to_string(),
                source,
            })?;
            let overlay: serde_json::Value =
                serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
                    path: path.display().to_string(),
                    source,
                })?;
            merge_json(&mut value, overlay);
        }
        let mut config: RunConfig = serde_json::from_value(value)
            .map_err(|e| ConfigError::Invalid(format!("merged config does not parse: {e}")))?;

        if let Some(corpus) = &self.corpus {
            config.corpus = corpus.clone();
        }
        if let Some(split) = &self.split_tag {
            config.split_tag = split.clone();
        }
        if let Some(backend) = self.backend.resolve()? {
            config.backend = backend;
        }
        if let Some(family) = parse_keyword(
            &self.family,
            "family",
            &[
                ("baseline", TemplateFamily::Baseline),
                ("human_guideline", TemplateFamily::HumanGuideline),
                ("model_guideline", TemplateFamily::ModelGuideline),
                ("rationale_generation", TemplateFamily::RationaleGeneration),
            ],
        )? {
            config.family = family;
            // Follow the family's canonical criteria register unless the
            // user picks one explicitly.
            if self.criteria.is_none() {
                config.variants.criteria = match family {
                    TemplateFamily::ModelGuideline => CriteriaVariant::Mt,
                    TemplateFamily::HumanGuideline => CriteriaVariant::Ht,
                    _ => config.variants.criteria,
                };
            }
            if family == TemplateFamily::Baseline {
                config.granularity = GranularityMode::Coarse;
                config.scale = ScoreScale::zero_to_hundred();
            }
        }
        if let Some(task) = parse_keyword(
            &self.task_description,
            "task description",
            &[
                ("base", TaskDescriptionVariant::Base),
                ("expert", TaskDescriptionVariant::Expert),
                ("short", TaskDescriptionVariant::Short),
                ("long", TaskDescriptionVariant::Long),
            ],
        )? {
            config.variants.task_description = task;
        }
        if let Some(criteria) = parse_keyword(
            &self.criteria,
            "criteria",
            &[
                ("ad", CriteriaVariant::Ad),
                ("ht", CriteriaVariant::Ht),
                ("mt", CriteriaVariant::Mt),
                ("ad_gpt", CriteriaVariant::AdGpt),
                ("ht_gpt", CriteriaVariant::HtGpt),
                ("mt_gpt", CriteriaVariant::MtGpt),
            ],
        )? {
            config.variants.criteria = criteria;
        }
        if let Some(steps) = parse_keyword(
            &self.steps,
            "steps",
            &[("base", StepsVariant::Base), ("complex", StepsVariant::Complex)],
        )? {
            config.variants.steps = steps;
        }
        if let Some(kind) = self.aggregation.as_deref() {
            let n_samples = self.n_samples.unwrap_or(20);
            config.aggregation = match kind.to_ascii_lowercase().as_str() {
                "direct" => AggregationMethod::Direct,
                "logprob" => AggregationMethod::Logprob,
                "approximation" => AggregationMethod::Approximation { n_samples },
                other => {
                    return Err(ConfigError::Invalid(format!(
                        "aggregation: unknown value {other:?}"
                    ))
                    .into())
                }
            };
            // Switching aggregation implies its decoding preset unless the
            // user pins temperature explicitly.
            if self.temperature.is_none() {
                let seed = config.decoding.seed;
                config.decoding = match config.aggregation {
                    AggregationMethod::Approximation { .. } => {
                        sumjudge::backend::DecodingParams::approximation()
                    }
                    _ => sumjudge::backend::DecodingParams::direct(),
                };
                config.decoding.seed = seed;
            }
        } else if let Some(n) = self.n_samples {
            if let AggregationMethod::Approximation { n_samples } = &mut config.aggregation {
                *n_samples = n;
            }
        }
        match self.granularity.as_deref() {
            Some("coarse") => config.granularity = GranularityMode::Coarse,
            Some("fine") => {
                let aspects = match &self.aspects {
                    Some(names) => parse_aspects(names)?,
                    None => match config.granularity.clone() {
                        GranularityMode::Fine { aspects } => aspects,
                        GranularityMode::Coarse => Aspect::DEV_SET.to_vec(),
                    },
                };
                config.granularity = GranularityMode::Fine { aspects };
            }
            Some(other) => {
                return Err(ConfigError::Invalid(format!(
                    "granularity: unknown value {other:?} (expected coarse or fine)"
                ))
                .into())
            }
            None => {
                if let Some(names) = &self.aspects {
                    config.granularity = GranularityMode::Fine {
                        aspects: parse_aspects(names)?,
                    };
                }
            }
        }
        if let Some(scale) = &self.scale {
            config.scale = parse_scale(scale)?;
        }
        if let Some(policy) = parse_keyword(
            &self.on_parse_failure,
            "on-parse-failure",
            &[
                ("skip", ParseFailurePolicy::Skip),
                ("midpoint", ParseFailurePolicy::Midpoint),
                ("fail", ParseFailurePolicy::Fail),
            ],
        )? {
            config.on_parse_failure = policy;
        }
        if let Some(t) = self.temperature {
            config.decoding.temperature = t;
        }
        if let Some(p) = self.top_p {
            config.decoding.top_p = p;
        }
        if let Some(m) = self.max_tokens {
            config.decoding.max_tokens = m;
        }
        if let Some(seed) = self.seed {
            config.seed = Some(seed);
        }
        if let Some(c) = self.concurrency {
            config.concurrency = c;
        }
        if let Some(dir) = &self.template_dir {
            config.template_dir = Some(dir.clone());
        }
        if let Some(pack) = &self.demo_pack {
            let quality = parse_keyword(
                &self.demo_quality,
                "demo quality",
                &[("worst", DemoQuality::Worst), ("best", DemoQuality::Best)],
            )?
            .unwrap_or(DemoQuality::Best);
            let kind = parse_keyword(
                &self.demo_kind,
                "demo kind",
                &[("base", DemoKind::Base), ("reason", DemoKind::Reason)],
            )?
            .unwrap_or(DemoKind::Base);
            config.demonstration = Some(DemonstrationConfig {
                pack: pack.clone(),
                quality,
                kind,
            });
        }
        if let Some(on) = self.filtering {
            config.filtering = on;
        }
        match self.binning {
            Some(true) => {
                let mut binning = config
                    .binning
                    .unwrap_or_else(|| BinningConfig::for_scale(&config.scale));
                if let Some(width) = self.bin_width {
                    binning.bin_width = width;
                }
                if let Some(range) = &self.bin_range {
                    let (min, max) = parse_bin_range(range)?;
                    binning.range_min = min;
                    binning.range_max = max;
                }
                config.binning = Some(binning);
            }
            Some(false) => config.binning = None,
            None => {
                if self.bin_width.is_some() || self.bin_range.is_some() {
                    let mut binning = config
                        .binning
                        .unwrap_or_else(|| BinningConfig::for_scale(&config.scale));
                    if let Some(width) = self.bin_width {
                        binning.bin_width = width;
                    }
                    if let Some(range) = &self.bin_range {
                        let (min, max) = parse_bin_range(range)?;
                        binning.range_min = min;
                        binning.range_max = max;
                    }
                    config.binning = Some(binning);
                }
            }
        }
        if self.allow_nonstandard_decoding {
            config.allow_nonstandard_decoding = true;
        }
        Ok(config)
    }
}

fn parse_aspects(names: &[String]) -> Result<Vec<Aspect>, RunError> {
    names
        .iter()
        .map(|name| {
            Aspect::from_str(name).map_err(|e| ConfigError::Invalid(format!("aspects: {e}")).into())
        })
        .collect()
}

fn print_correlation(correlation: &meta_eval::RunCorrelation) {
    let report = &correlation.report;
    match report.tau {
        Some(tau) => println!(
            "tau-b = {tau:.4} over {} pairs (C={}, D={}, ties pred/gold/both = {}/{}/{})",
            correlation.pairs_used,
            report.concordant,
            report.discordant,
            report.ties_pred,
            report.ties_gold,
            report.ties_both
        ),
        None => println!(
            "tau-b degenerate: every pair tied on one side over {} items (C={}, D={})",
            report.n_items, report.concordant, report.discordant
        ),
    }
    if correlation.skipped_no_gold > 0 {
        println!("  skipped {} sample(s) without gold", correlation.skipped_no_gold);
    }
    if correlation.skipped_no_record > 0 {
        println!("  skipped {} sample(s) without records", correlation.skipped_no_record);
    }
}

fn run_command(command: Command) -> Result<(), RunError> {
    match command {
        Command::Render { config, ids, out } => {
            let config = config.resolve()?;
            match out {
                Some(path) => {
                    let mut file = std::fs::File::create(&path).map_err(|source| RunError::Io {
                        path: path.display().to_string(),
                        source,
                    })?;
                    pipeline::render_only(&config, &ids, &mut file)?;
                    println!("wrote prompt dump to {}", path.display());
                }
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    pipeline::render_only(&config, &ids, &mut lock)?;
                }
            }
            Ok(())
        }
        Command::Evaluate { config, out_dir } => {
            let config = config.resolve()?;
            let output = pipeline::run(&config, &out_dir)?;
            let counts = &output.manifest.counts;
            println!(
                "evaluated {}/{} sample(s), {} prompt(s), {} completion(s), {} parse failure(s)",
                counts.evaluated, counts.samples, counts.prompts, counts.completions,
                counts.parse_failures
            );
            if config.filtering {
                println!("filtering marked {} record(s) redundant", counts.filtered);
            }
            if let (Some(before), Some(after)) = (
                counts.unique_scores_before_binning,
                counts.unique_scores_after_binning,
            ) {
                println!("binning reduced unique scores from {before} to {after}");
            }
            if let Some(correlation) = &output.correlation {
                print_correlation(correlation);
            }
            println!("records: {}", output.records_path.display());
            println!("manifest: {}", output.manifest_path.display());
            Ok(())
        }
        Command::Filter {
            records,
            corpus,
            backend,
            seed,
            out,
            verdicts_out,
        } => {
            let records_in = dataset::read_records(&records)?;
            let corpus = dataset::load_corpus(&corpus, "custom")?;
            let backend = backend.resolve()?.ok_or_else(|| {
                ConfigError::Invalid("filter needs --mock-profile or --endpoint/--model".into())
            })?;
            let scale = records_in
                .first()
                .map(|r| r.method.scale)
                .ok_or_else(|| ConfigError::Invalid("record file is empty".into()))?;
            backend
                .validate(&scale)
                .map_err(|e| ConfigError::Component(e.to_string()))?;
            let templates = prompt::TemplateSet::builtin();
            let mut params = sumjudge::backend::DecodingParams::direct();
            params.seed = seed;
            let mut verdicts = Vec::with_capacity(records_in.len());
            for record in &records_in {
                let sample = corpus.get(&record.sample_id).ok_or_else(|| {
                    RunError::UnknownSample(record.sample_id.clone())
                })?;
                verdicts.push(postprocess::filter_verdict(
                    sample, &templates, &backend, &params,
                )?);
            }
            let filtered = postprocess::apply_filter(&records_in, &verdicts, &scale)?;
            dataset::write_records(&filtered, &out)?;
            let marked = filtered.iter().filter(|r| r.filtered).count();
            println!(
                "filtered {marked}/{} record(s) to the scale minimum; wrote {}",
                filtered.len(),
                out.display()
            );
            if let Some(path) = verdicts_out {
                let mut file = std::fs::File::create(&path).map_err(|source| RunError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                for verdict in &verdicts {
                    writeln!(file, "{}", serde_json::to_string(verdict).expect("serializes"))
                        .map_err(|source| RunError::Io {
                            path: path.display().to_string(),
                            source,
                        })?;
                }
                println!("verdicts: {}", path.display());
            }
            Ok(())
        }
        Command::Bin {
            records,
            out,
            bin_width,
            bin_range,
        } => {
            let records_in = dataset::read_records(&records)?;
            let scale = records_in
                .first()
                .map(|r| r.method.scale)
                .ok_or_else(|| ConfigError::Invalid("record file is empty".into()))?;
            let mut config = BinningConfig::for_scale(&scale);
            if let Some(width) = bin_width {
                config.bin_width = width;
            }
            if let Some(range) = &bin_range {
                let (min, max) = parse_bin_range(range)?;
                config.range_min = min;
                config.range_max = max;
            }
            let (binned, report) = postprocess::bin_scores(&records_in, &config)?;
            dataset::write_records(&binned, &out)?;
            println!(
                "binned {} record(s): unique scores {} -> {}; wrote {}",
                report.records,
                report.unique_before,
                report.unique_after,
                out.display()
            );
            Ok(())
        }
        Command::Correlate {
            records,
            corpus,
            use_binned,
            out,
        } => {
            let records = dataset::read_records(&records)?;
            let corpus = dataset::load_corpus(&corpus, "custom")?;
            let correlation = meta_eval::correlate_run(&records, &corpus, use_binned)?;
            print_correlation(&correlation);
            if let Some(path) = out {
                sumjudge::config::write_json_atomic(&correlation, &path).map_err(|source| {
                    RunError::Io {
                        path: path.display().to_string(),
                        source,
                    }
                })?;
                println!("report: {}", path.display());
            }
            Ok(())
        }
        Command::Taxonomy { labels, out } => {
            let file = std::fs::File::open(&labels).map_err(|source| RunError::Io {
                path: labels.display().to_string(),
                source,
            })?;
            let reader = std::io::BufReader::new(file);
            let mut parsed: Vec<ErrorTaxonomyLabel> = Vec::new();
            for (idx, line) in std::io::BufRead::lines(reader).enumerate() {
                let line = line.map_err(|source| RunError::Io {
                    path: labels.display().to_string(),
                    source,
                })?;
                if line.trim().is_empty() {
                    continue;
                }
                parsed.push(serde_json::from_str(&line).map_err(|e| {
                    dataset::DataError::MalformedLine {
                        line: idx + 1,
                        message: e.to_string(),
                    }
                })?);
            }
            let report = meta_eval::taxonomy_report(&parsed)?;
            print!("{}", report.render_table());
            if let Some(path) = out {
                sumjudge::config::write_json_atomic(&report, &path).map_err(|source| {
                    RunError::Io {
                        path: path.display().to_string(),
                        source,
                    }
                })?;
                println!("report: {}", path.display());
            }
            Ok(())
        }
        Command::Grid { configs, out_dir } => {
            let text = std::fs::read_to_string(&configs).map_err(|source| ConfigError::Read {
                path: configs.display().to_string(),
                source,
            })?;
            let entries: Vec<GridEntry> =
                serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
                    path: configs.display().to_string(),
                    source,
                })?;
            let mut resolved = Vec::with_capacity(entries.len());
            for entry in entries {
                resolved.push((entry.name.clone(), entry.resolve()?));
            }
            let table = pipeline::grid(&resolved, &out_dir)?;
            print!("{}", table.render_table());
            println!("grid table: {}", out_dir.join("grid.json").display());
            Ok(())
        }
        Command::DemoPack {
            corpus,
            aspects,
            quality,
            kind,
            out,
        } => {
            let corpus = dataset::load_corpus(&corpus, "train")?;
            let quality = parse_keyword(
                &Some(quality),
                "quality",
                &[("worst", DemoQuality::Worst), ("best", DemoQuality::Best)],
            )?
            .expect("value present");
            let kind = parse_keyword(
                &Some(kind),
                "kind",
                &[("base", DemoKind::Base), ("reason", DemoKind::Reason)],
            )?
            .expect("value present");
            let aspect_list = if aspects.is_empty() {
                Aspect::DEV_SET.to_vec()
            } else {
                parse_aspects(&aspects)?
            };
            let mut entries = Vec::new();
            for aspect in aspect_list {
                for demonstration in
                    prompt::build_demonstrations(&corpus, aspect, quality, kind)?
                {
                    entries.push(prompt::DemoPackEntry {
                        aspect,
                        demonstration,
                    });
                }
            }
            if entries.is_empty() {
                return Err(ConfigError::Invalid(
                    "no qualifying demonstrations found in the corpus".into(),
                )
                .into());
            }
            pipeline::write_demo_pack(&entries, &out)?;
            println!("wrote {} demonstration(s) to {}", entries.len(), out.display());
            Ok(())
        }
    }
}

#[derive(serde::Deserialize)]
struct GridEntry {
    name: String,
    #[serde(default)]
    preset: Option<String>,
    #[serde(default)]
    config: Option<serde_json::Value>,
}

impl GridEntry {
    fn resolve(&self) -> Result<RunConfig, RunError> {
        let preset_name = self.preset.as_deref().unwrap_or("dev-summeval");
        let preset = RunConfig::preset(preset_name)?;
        let mut value = serde_json::to_value(&preset).expect("config serializes");
        if let Some(overlay) = &self.config {
            merge_json(&mut value, overlay.clone());
        }
        serde_json::from_value(value)
            .map_err(|e| ConfigError::Invalid(format!("grid entry {:?}: {e}", self.name)).into())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run_command(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            let mut source = std::error::Error::source(&error);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(error.exit_code() as u8)
        }
    }
}
