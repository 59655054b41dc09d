//! Reformulate → generate → reshape orchestration over completion backends.

mod template;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, Stage, StageBackend};
use crate::metrics::{self, MetricReport};

pub use template::{
    PromptTemplate, TemplateError, TemplateSet, DEFAULT_GENERATE, DEFAULT_REFORMULATE,
    DEFAULT_RESHAPE, USER_SEPARATOR,
};

/// Raw pipeline input. Field names follow the JSONL dataset schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserStory {
    pub id: String,
    pub title: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub story_points: Option<f64>,
    #[serde(default, rename = "reference", skip_serializing_if = "Option::is_none")]
    pub reference_test_cases: Option<String>,
    /// Fields not part of the schema, carried through untouched.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl UserStory {
    pub fn new(
        id: impl Into<String>,
        title: impl Into<String>,
        description: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            description: description.into(),
            story_points: None,
            reference_test_cases: None,
            extra: BTreeMap::new(),
        }
    }

    pub fn with_reference(mut self, reference: impl Into<String>) -> Self {
        self.reference_test_cases = Some(reference.into());
        self
    }
}

/// Story text in the "Action: …; Condition: …; Result: …" layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedStory {
    pub origin_id: String,
    pub text: String,
}

/// Which optional stages run around generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PipelineVariant {
    #[serde(rename = "BASELINE")]
    Baseline,
    #[serde(rename = "RF")]
    ReformulateGenerate,
    #[serde(rename = "FR")]
    GenerateReshape,
    #[serde(rename = "RFR")]
    ReformulateGenerateReshape,
}

impl PipelineVariant {
    pub const ALL: [PipelineVariant; 4] = [
        PipelineVariant::Baseline,
        PipelineVariant::ReformulateGenerate,
        PipelineVariant::GenerateReshape,
        PipelineVariant::ReformulateGenerateReshape,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "BASELINE",
            Self::ReformulateGenerate => "RF",
            Self::GenerateReshape => "FR",
            Self::ReformulateGenerateReshape => "RFR",
        }
    }

    /// Column heading used in rendered reports.
    pub fn label(self) -> &'static str {
        match self {
            Self::Baseline => "Baseline",
            Self::ReformulateGenerate => "Reshaping (input-focused)",
            Self::GenerateReshape => "Refining (output-focused)",
            Self::ReformulateGenerateReshape => "Stacked",
        }
    }

    pub fn reformulate_enabled(self) -> bool {
        matches!(
            self,
            Self::ReformulateGenerate | Self::ReformulateGenerateReshape
        )
    }

    pub fn reshape_enabled(self) -> bool {
        matches!(
            self,
            Self::GenerateReshape | Self::ReformulateGenerateReshape
        )
    }

    pub fn stages(self) -> Vec<Stage> {
        let mut stages = Vec::with_capacity(3);
        if self.reformulate_enabled() {
            stages.push(Stage::Reformulate);
        }
        stages.push(Stage::Generate);
        if self.reshape_enabled() {
            stages.push(Stage::Reshape);
        }
        stages
    }
}

impl fmt::Display for PipelineVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PipelineVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown variant {s:?} (expected BASELINE, RF, FR or RFR)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub stage: Stage,
    pub system_prompt: String,
    pub prompt_sent: String,
    pub response_received: String,
    pub wall_time_ms: f64,
    pub backend_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub story_id: String,
    pub entries: Vec<TraceEntry>,
}

impl StageTrace {
    fn new(story_id: &str) -> Self {
        Self {
            story_id: story_id.to_string(),
            entries: Vec::new(),
        }
    }

    pub fn last_response(&self) -> Option<&str> {
        self.entries.last().map(|e| e.response_received.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub story_id: String,
    pub variant: PipelineVariant,
    pub final_output: String,
    pub trace: StageTrace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricReport>,
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("{0} stage received empty input")]
    EmptyInput(Stage),
    #[error("{stage} stage failed: {source}")]
    Backend {
        stage: Stage,
        #[source]
        source: BackendError,
    },
}

impl StageError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            StageError::Template(_) => None,
            StageError::EmptyInput(s) => Some(*s),
            StageError::Backend { stage, .. } => Some(*stage),
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("story {story_id}: {error}")]
    Stage {
        story_id: String,
        error: StageError,
        partial_trace: Box<StageTrace>,
    },
}

fn call_stage(
    stage: Stage,
    backend: &StageBackend,
    template: &PromptTemplate,
    vars: &[(&str, &str)],
) -> Result<(String, TraceEntry), StageError> {
    template.check_for(stage)?;
    let (system, user) = template.render(vars);
    let request = backend.request(system, user);
    let start = Instant::now();
    let response = backend
        .backend
        .complete(&request)
        .map_err(|source| StageError::Backend { stage, source })?;
    let entry = TraceEntry {
        stage,
        system_prompt: request.system_prompt,
        prompt_sent: request.user_prompt,
        response_received: response.text.clone(),
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        backend_id: backend.backend.id(),
    };
    Ok((response.text, entry))
}

/// Rewrites a raw story into the normalized Action/Condition/Result form.
pub fn reformulate(
    story: &UserStory,
    backend: &StageBackend,
    template: &PromptTemplate,
) -> Result<(NormalizedStory, TraceEntry), StageError> {
    template.check_for(Stage::Reformulate)?;
    if story.description.trim().is_empty() {
        return Err(StageError::EmptyInput(Stage::Reformulate));
    }
    let (text, entry) = call_stage(
        Stage::Reformulate,
        backend,
        template,
        &[("title", &story.title), ("description", &story.description)],
    )?;
    Ok((
        NormalizedStory {
            origin_id: story.id.clone(),
            text,
        },
        entry,
    ))
}

/// Produces raw test-case text from a (possibly normalized) story.
pub fn generate(
    input_text: &str,
    backend: &StageBackend,
    template: &PromptTemplate,
) -> Result<(String, TraceEntry), StageError> {
    single_input_stage(Stage::Generate, input_text, backend, template)
}

/// Normalizes generated test-case text into the canonical layout.
pub fn reshape(
    raw_output: &str,
    backend: &StageBackend,
    template: &PromptTemplate,
) -> Result<(String, TraceEntry), StageError> {
    single_input_stage(Stage::Reshape, raw_output, backend, template)
}

fn single_input_stage(
    stage: Stage,
    input: &str,
    backend: &StageBackend,
    template: &PromptTemplate,
) -> Result<(String, TraceEntry), StageError> {
    template.check_for(stage)?;
    if input.trim().is_empty() {
        return Err(StageError::EmptyInput(stage));
    }
    call_stage(stage, backend, template, &[("input", input)])
}

/// Backend handle per stage. Stages may share one handle.
#[derive(Debug, Clone, Default)]
pub struct BackendSet {
    pub reformulate: Option<StageBackend>,
    pub generate: Option<StageBackend>,
    pub reshape: Option<StageBackend>,
}

impl BackendSet {
    pub fn uniform(backend: StageBackend) -> Self {
        Self {
            reformulate: Some(backend.clone()),
            generate: Some(backend.clone()),
            reshape: Some(backend),
        }
    }

    pub fn stub() -> Self {
        Self::uniform(StageBackend::stub())
    }

    pub fn get(&self, stage: Stage) -> Option<&StageBackend> {
        match stage {
            Stage::Reformulate => self.reformulate.as_ref(),
            Stage::Generate => self.generate.as_ref(),
            Stage::Reshape => self.reshape.as_ref(),
        }
    }

    fn require(&self, variant: PipelineVariant) -> Result<(), PipelineError> {
        let missing: Vec<&str> = variant
            .stages()
            .into_iter()
            .filter(|s| self.get(*s).is_none())
            .map(Stage::as_str)
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Config(format!(
                "variant {variant} needs a backend for stage(s): {}",
                missing.join(", ")
            )))
        }
    }
}

/// Runs the stages enabled by `variant` on one story, in pipeline order.
pub fn run_variant(
    story: &UserStory,
    variant: PipelineVariant,
    backends: &BackendSet,
    templates: &TemplateSet,
) -> Result<PipelineResult, PipelineError> {
    backends.require(variant)?;
    let mut trace = StageTrace::new(&story.id);
    let fail = |error: StageError, trace: &StageTrace| PipelineError::Stage {
        story_id: story.id.clone(),
        error,
        partial_trace: Box::new(trace.clone()),
    };
    let backend = |s: Stage| backends.get(s).expect("checked by require");

    let input = if variant.reformulate_enabled() {
        let (normalized, entry) =
            reformulate(story, backend(Stage::Reformulate), &templates.reformulate)
                .map_err(|e| fail(e, &trace))?;
        trace.entries.push(entry);
        normalized.text
    } else {
        story.description.clone()
    };

    let (mut output, entry) = generate(&input, backend(Stage::Generate), &templates.generate)
        .map_err(|e| fail(e, &trace))?;
    trace.entries.push(entry);

    if variant.reshape_enabled() {
        let (reshaped, entry) = reshape(&output, backend(Stage::Reshape), &templates.reshape)
            .map_err(|e| fail(e, &trace))?;
        trace.entries.push(entry);
        output = reshaped;
    }

    let metrics = story
        .reference_test_cases
        .as_deref()
        .map(|reference| metrics::evaluate_pair(&output, reference));
    Ok(PipelineResult {
        story_id: story.id.clone(),
        variant,
        final_output: output,
        trace,
        metrics,
    })
}

/// A (story, variant) pair that did not complete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub story_id: String,
    pub variant: PipelineVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    pub message: String,
    pub partial_trace: StageTrace,
}

/// One report column: the aggregate of every completed item for a variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: PipelineVariant,
    pub label: String,
    /// Completed story ids, in dataset order.
    pub items: Vec<String>,
    /// Story ids that failed, in dataset order.
    pub failed: Vec<String>,
    pub aggregate: Option<MetricReport>,
}

impl VariantSummary {
    pub fn is_complete(&self) -> bool {
        self.failed.is_empty()
    }
}

/// Content of `report.json`: deterministic for a given dataset, variant list
/// and backend behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub variants: Vec<VariantSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub summary: AblationSummary,
    /// Completed items, variant-major then dataset order.
    pub results: Vec<PipelineResult>,
    pub failures: Vec<ItemFailure>,
}

/// Builds the per-variant summary from item results. Aggregates cover the
/// items that carry metrics.
pub fn summarize(
    variants: &[PipelineVariant],
    results: &[PipelineResult],
    failures: &[ItemFailure],
) -> AblationSummary {
    let variants = variants
        .iter()
        .map(|&variant| {
            let done: Vec<&PipelineResult> =
                results.iter().filter(|r| r.variant == variant).collect();
            let reports: Vec<MetricReport> = done.iter().filter_map(|r| r.metrics).collect();
            VariantSummary {
                variant,
                label: variant.label().to_string(),
                items: done.iter().map(|r| r.story_id.clone()).collect(),
                failed: failures
                    .iter()
                    .filter(|f| f.variant == variant)
                    .map(|f| f.story_id.clone())
                    .collect(),
                aggregate: metrics::aggregate(&reports).ok(),
            }
        })
        .collect();
    AblationSummary { variants }
}

/// Runs every (variant, story) pair on a pool of `parallelism` workers.
/// Item failures are recorded, not propagated.
pub fn run_ablation(
    dataset: &[UserStory],
    variants: &[PipelineVariant],
    backends: &BackendSet,
    templates: &TemplateSet,
    parallelism: usize,
) -> Result<AblationReport, PipelineError> {
    if dataset.is_empty() {
        return Err(PipelineError::Config("dataset is empty".into()));
    }
    if variants.is_empty() {
        return Err(PipelineError::Config("no variants selected".into()));
    }
    if parallelism == 0 {
        return Err(PipelineError::Config("parallelism must be >= 1".into()));
    }
    let unreferenced: Vec<&str> = dataset
        .iter()
        .filter(|s| s.reference_test_cases.is_none())
        .map(|s| s.id.as_str())
        .collect();
    if !unreferenced.is_empty() {
        return Err(PipelineError::Config(format!(
            "stories without a reference: {}",
            unreferenced.join(", ")
        )));
    }
    let mut seen = Vec::new();
    for v in variants {
        if seen.contains(v) {
            return Err(PipelineError::Config(format!("variant {v} listed twice")));
        }
        seen.push(*v);
        backends.require(*v)?;
    }
    run_items(dataset, variants, backends, templates, parallelism)
}

/// Shared worker loop for ablations and plain runs; references are optional.
pub fn run_items(
    dataset: &[UserStory],
    variants: &[PipelineVariant],
    backends: &BackendSet,
    templates: &TemplateSet,
    parallelism: usize,
) -> Result<AblationReport, PipelineError> {
    let jobs: Vec<(PipelineVariant, &UserStory)> = variants
        .iter()
        .flat_map(|&v| dataset.iter().map(move |s| (v, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| PipelineError::Config(format!("cannot start worker pool: {e}")))?;
    info!("running {} item(s) on {parallelism} worker(s)", jobs.len());
    let outcomes: Vec<Result<PipelineResult, PipelineError>> = pool.install(|| {
        jobs.par_iter()
            .map(|(variant, story)| {
                debug!("item {} / {variant}", story.id);
                run_variant(story, *variant, backends, templates)
            })
            .collect()
    });

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for ((variant, story), outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok(r) => results.push(r),
            Err(PipelineError::Stage {
                story_id,
                error,
                partial_trace,
            }) => {
                warn!("item {story_id} / {variant} failed: {error}");
                failures.push(ItemFailure {
                    story_id,
                    variant: *variant,
                    stage: error.stage(),
                    message: error.to_string(),
                    partial_trace: *partial_trace,
                });
            }
            Err(other) => {
                warn!("item {} / {variant} failed: {other}", story.id);
                failures.push(ItemFailure {
                    story_id: story.id.clone(),
                    variant: *variant,
                    stage: None,
                    message: other.to_string(),
                    partial_trace: StageTrace::new(&story.id),
                });
            }
        }
    }
    Ok(AblationReport {
        summary: summarize(variants, &results, &failures),
        results,
        failures,
    })
}
