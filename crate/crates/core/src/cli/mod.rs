//! Command-line front end: `evaluate`, `run`, `ablate`, `report`, `params`
//! and `fixtures`.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;
use thiserror::Error;

pub use config::{DatasetSource, ResolvedConfig, RunConfig};

use crate::dataset::{self, DatasetError, RunArtifact};
use crate::metrics::{self, MetricReport};
use crate::model_math::{self, DEFAULT_BLOCK_SIZE};
use crate::pipeline::{self, PipelineError};
use crate::report;

#[derive(Debug, Parser)]
#[command(
    name = "riro",
    version,
    about = "Reformulate/generate/reshape pipeline runner and text-similarity evaluator"
)]
pub struct Cli {
    /// Run configuration (JSON)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file (evaluate, report, fixtures) or parent run directory (run, ablate)
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Worker count, overrides the config
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// Seed, overrides the config
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Md,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score candidate lines against reference lines
    Evaluate {
        candidates: PathBuf,
        references: PathBuf,
    },
    /// Run the configured variants over the dataset and persist a run directory
    Run {
        #[arg(long)]
        story_id: Option<String>,
    },
    /// Run at least two variants and emit the comparison report
    Ablate,
    /// Re-render a run's report from its item files
    Report { run_dir: PathBuf },
    /// Trainable-parameter and storage accounting for a low-rank adapted weight
    Params {
        m: u64,
        n: u64,
        rank: u64,
        #[arg(default_value_t = model_math::DEFAULT_BITS)]
        bits: u32,
        #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE as u64)]
        block_size: u64,
    },
    /// Write synthetic user stories with reference outputs as JSONL
    Fixtures {
        #[arg(long, default_value_t = 20)]
        count: usize,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Corruption(String),
}

impl CliError {
    fn config(msg: impl Into<String>) -> Self {
        CliError::Config(vec![msg.into()])
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Corruption(_) => 4,
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Corruption(_) | DatasetError::AggregateMismatch { .. } => {
                CliError::Corruption(e.to_string())
            }
            DatasetError::Layout(_) => CliError::Corruption(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) | PipelineError::Template(_) => {
                CliError::config(e.to_string())
            }
            PipelineError::Stage { .. } => CliError::Runtime(e.to_string()),
        }
    }
}

fn io_runtime(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Writes `body` to `--output` when given, otherwise to `out`.
fn emit(out: &mut dyn Write, target: Option<&Path>, body: &str) -> Result<(), CliError> {
    match target {
        Some(path) => std::fs::write(path, body).map_err(io_runtime(path)),
        None => out
            .write_all(body.as_bytes())
            .map_err(|e| CliError::Runtime(format!("stdout: {e}"))),
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Evaluate {
            candidates,
            references,
        } => cmd_evaluate(
            candidates,
            references,
            cli.format.unwrap_or(Format::Json),
            cli.output.as_deref(),
            out,
        ),
        Command::Run { story_id } => {
            let resolved = load_config(&cli)?;
            let dir = cmd_run(&resolved, story_id.as_deref())?;
            writeln!(out, "{}", dir.display()).map_err(|e| CliError::Runtime(e.to_string()))
        }
        Command::Ablate => {
            let resolved = load_config(&cli)?;
            let dir = cmd_ablate(&resolved)?;
            let artifact = dataset::load_run(&dir)?;
            writeln!(out, "run directory: {}\n", dir.display())
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            emit(
                out,
                None,
                &render(&artifact, cli.format.unwrap_or(Format::Md)),
            )
        }
        Command::Report { run_dir } => {
            let body = cmd_report(run_dir, cli.format.unwrap_or(Format::Md))?;
            emit(out, cli.output.as_deref(), &body)
        }
        Command::Params {
            m,
            n,
            rank,
            bits,
            block_size,
        } => emit(
            out,
            cli.output.as_deref(),
            &cmd_params(*m, *n, *rank, *bits, *block_size)?,
        ),
        Command::Fixtures { count } => {
            if *count == 0 {
                return Err(CliError::config("--count must be >= 1"));
            }
            let ds = dataset::synthesize_fixtures(*count, cli.seed.unwrap_or(0));
            emit(out, cli.output.as_deref(), &dataset::to_jsonl(&ds.records))
        }
    }
}

fn load_config(cli: &Cli) -> Result<ResolvedConfig, CliError> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::config("--config is required for this command"))?;
    let mut config = RunConfig::load(path).map_err(CliError::Config)?;
    if let Some(p) = cli.parallelism {
        config.parallelism = p;
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut resolved = config.resolve(base).map_err(CliError::Config)?;
    if let Some(o) = &cli.output {
        resolved.output_dir = o.clone();
    }
    Ok(resolved)
}

#[derive(Serialize)]
struct EvaluationOutput {
    pairs: usize,
    aggregate: MetricReport,
    per_line: Vec<MetricReport>,
}

fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    Ok(text.lines().map(str::to_string).collect())
}

pub fn evaluate_files(
    candidates: &Path,
    references: &Path,
) -> Result<(MetricReport, Vec<MetricReport>), CliError> {
    let cands = read_lines(candidates)?;
    let refs = read_lines(references)?;
    if cands.len() != refs.len() {
        return Err(CliError::config(format!(
            "line count mismatch: {} ≠ {} ({} vs {})",
            cands.len(),
            refs.len(),
            candidates.display(),
            references.display()
        )));
    }
    let per_line: Vec<MetricReport> = cands
        .iter()
        .zip(&refs)
        .map(|(c, r)| metrics::evaluate_pair(c, r))
        .collect();
    let aggregate = metrics::aggregate(&per_line)
        .map_err(|_| CliError::config("input files contain no lines"))?;
    Ok((aggregate, per_line))
}

pub fn cmd_evaluate(
    candidates: &Path,
    references: &Path,
    format: Format,
    output: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let (aggregate, per_line) = evaluate_files(candidates, references)?;
    let body = match format {
        Format::Md => report::render_metric_markdown("Mean", &aggregate, per_line.len()),
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&EvaluationOutput {
                pairs: per_line.len(),
                aggregate,
                per_line,
            })
            .expect("evaluation serializes");
            s.push('\n');
            s
        }
    };
    emit(out, output, &body)
}

fn execute(
    resolved: &ResolvedConfig,
    stories: &[pipeline::UserStory],
    require_references: bool,
) -> Result<PathBuf, CliError> {
    let report = if require_references {
        pipeline::run_ablation(
            stories,
            &resolved.variants,
            &resolved.backends,
            &resolved.templates,
            resolved.config.parallelism,
        )?
    } else {
        pipeline::run_items(
            stories,
            &resolved.variants,
            &resolved.backends,
            &resolved.templates,
            resolved.config.parallelism,
        )?
    };
    let run_id = dataset::new_run_id();
    let dir = resolved.output_dir.join(&run_id);
    let artifact = RunArtifact {
        run_id,
        config: serde_json::to_value(&resolved.config).expect("config serializes"),
        results: report.results,
        failures: report.failures,
        summary: report.summary,
    };
    dataset::persist_run(&dir, &artifact)?;
    info!("wrote {}", dir.display());
    Ok(dir)
}

/// Runs the configured variants (optionally a single story) and returns the run directory.
pub fn cmd_run(resolved: &ResolvedConfig, story_id: Option<&str>) -> Result<PathBuf, CliError> {
    let stories: Vec<_> = match story_id {
        Some(id) => {
            let s: Vec<_> = resolved
                .dataset
                .records
                .iter()
                .filter(|s| s.id == id)
                .cloned()
                .collect();
            if s.is_empty() {
                return Err(CliError::config(format!(
                    "story {id:?} not found in dataset"
                )));
            }
            s
        }
        None => resolved.dataset.records.clone(),
    };
    execute(resolved, &stories, false)
}

pub fn cmd_ablate(resolved: &ResolvedConfig) -> Result<PathBuf, CliError> {
    if resolved.variants.len() < 2 {
        return Err(CliError::config(
            "ablate needs at least two variants to compare",
        ));
    }
    execute(resolved, &resolved.dataset.records, true)
}

fn render(artifact: &RunArtifact, format: Format) -> String {
    match format {
        Format::Md => report::render_summary_markdown(&artifact.summary),
        Format::Json => report::render_summary_json(&artifact.summary),
    }
}

/// Renders from the item files; the cached aggregate is only used as a check.
pub fn cmd_report(run_dir: &Path, format: Format) -> Result<String, CliError> {
    let artifact = dataset::load_run(run_dir)?;
    Ok(render(&artifact, format))
}

pub fn cmd_params(
    m: u64,
    n: u64,
    rank: u64,
    bits: u32,
    block_size: u64,
) -> Result<String, CliError> {
    let count = model_math::trainable_param_count(m, n, rank)
        .map_err(|e| CliError::config(e.to_string()))?;
    let storage = model_math::quantized_storage(m, n, bits, block_size)
        .map_err(|e| CliError::config(e.to_string()))?;
    Ok(format!(
        "weight shape = {m} x {n}\n\
         rank = {rank}\n\
         full parameters = {}\n\
         trainable = {}\n\
         ratio = {}\n\
         quantized storage ({bits}-bit, block {block_size}) = {} bytes \
         ({} code bytes + {} scale bytes for {} blocks)\n\
         fp32 storage = {} bytes\n",
        count.full,
        count.trainable,
        report::format_value(count.ratio),
        storage.total_bytes,
        storage.code_bytes,
        storage.scale_bytes,
        storage.blocks,
        storage.full_precision_bytes,
    ))
}
