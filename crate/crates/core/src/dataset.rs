//! User-story corpora and run artifacts on disk.
//!
//! Datasets are JSON Lines: one object per line with `id`, `title`,
//! `description`, optional `story_points` and optional `reference`. A run
//! directory holds:
//!
//! ```text
//! run.json                        run id and configuration snapshot
//! items/<story_id>.<variant>.json one PipelineResult per completed item
//! failures/<story_id>.<variant>.json  failed items with partial traces
//! report.json                     per-variant aggregates
//! report.md                       the same aggregates as a Markdown table
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::stub;
use crate::metrics::MetricReport;
use crate::pipeline::{
    summarize, AblationSummary, ItemFailure, PipelineResult, PipelineVariant, UserStory,
};
use crate::report;

pub const FORMAT_VERSION: &str = "1";

/// Relative tolerance used when checking a stored aggregate against one
/// recomputed from item files.
pub const AGGREGATE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: invalid JSON: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: duplicate id {id:?} (first seen on line {first_line})")]
    DuplicateId {
        line: usize,
        id: String,
        first_line: usize,
    },
    #[error("line {line}: {}", join_violations(.violations))]
    InvalidRecord {
        line: usize,
        violations: Vec<Violation>,
    },
    #[error("dataset is empty")]
    Empty,
    #[error("invalid split fractions: {0}")]
    Fractions(String),
    #[error("run directory layout: {0}")]
    Layout(String),
    #[error("run directory is corrupt: {0}")]
    Corruption(String),
    #[error(
        "run directory is corrupt: aggregate for {variant} does not match item files ({detail})"
    )]
    AggregateMismatch { variant: String, detail: String },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: &'static str,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

pub fn validate_record(record: &UserStory) -> Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    if record.id.trim().is_empty() {
        v.push(Violation {
            field: "id",
            message: "must not be empty".into(),
        });
    }
    if record.description.trim().is_empty() {
        v.push(Violation {
            field: "description",
            message: "must not be empty".into(),
        });
    }
    if let Some(p) = record.story_points {
        if !(p.is_finite() && p >= 0.0) {
            v.push(Violation {
                field: "story_points",
                message: format!("must be a non-negative number, got {p}"),
            });
        }
    }
    if let Some(r) = &record.reference_test_cases {
        if r.trim().is_empty() {
            v.push(Violation {
                field: "reference",
                message: "must not be empty when present".into(),
            });
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub path: Option<PathBuf>,
    pub records: Vec<UserStory>,
    pub format_version: String,
}

impl DatasetFile {
    pub fn new(records: Vec<UserStory>) -> Self {
        Self {
            path: None,
            records,
            format_version: FORMAT_VERSION.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

const REQUIRED_FIELDS: [&str; 3] = ["id", "title", "description"];

pub fn parse_jsonl(reader: impl BufRead) -> Result<Vec<UserStory>, DatasetError> {
    let mut records = Vec::new();
    let mut first_seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| DatasetError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        let obj = value.as_object().ok_or_else(|| DatasetError::Parse {
            line: line_no,
            message: "expected a JSON object".into(),
        })?;
        if let Some(field) = REQUIRED_FIELDS.iter().find(|f| !obj.contains_key(**f)) {
            return Err(DatasetError::MissingField {
                line: line_no,
                field,
            });
        }
        let record: UserStory = serde_json::from_value(value).map_err(|e| DatasetError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        validate_record(&record).map_err(|violations| DatasetError::InvalidRecord {
            line: line_no,
            violations,
        })?;
        if let Some(&first_line) = first_seen.get(&record.id) {
            return Err(DatasetError::DuplicateId {
                line: line_no,
                id: record.id,
                first_line,
            });
        }
        first_seen.insert(record.id.clone(), line_no);
        records.push(record);
    }
    Ok(records)
}

pub fn load_jsonl(path: &Path) -> Result<DatasetFile, DatasetError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let records = parse_jsonl(BufReader::new(file))?;
    Ok(DatasetFile {
        path: Some(path.to_path_buf()),
        records,
        format_version: FORMAT_VERSION.into(),
    })
}

pub fn to_jsonl(records: &[UserStory]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("story serializes"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl(path: &Path, records: &[UserStory]) -> Result<(), DatasetError> {
    fs::write(path, to_jsonl(records)).map_err(io_err(path))
}

/// Seeded shuffle, then the first ⌊n·train⌋ records go to the train side.
pub fn split(
    dataset: &DatasetFile,
    seed: u64,
    fractions: (f64, f64),
) -> Result<(DatasetFile, DatasetFile), DatasetError> {
    let (train, eval) = fractions;
    if !(train > 0.0 && eval > 0.0) {
        return Err(DatasetError::Fractions(format!(
            "both fractions must be positive, got ({train}, {eval})"
        )));
    }
    if ((train + eval) - 1.0).abs() > 1e-9 {
        return Err(DatasetError::Fractions(format!(
            "fractions must sum to 1, got {}",
            train + eval
        )));
    }
    if dataset.is_empty() {
        return Err(DatasetError::Empty);
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((dataset.len() as f64) * train + 1e-9).floor() as usize;
    let pick =
        |idx: &[usize]| DatasetFile::new(idx.iter().map(|&i| dataset.records[i].clone()).collect());
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

const ACTIONS: [&str; 12] = [
    "user logs in",
    "admin deletes a project",
    "customer adds an item to the cart",
    "editor publishes an article",
    "user uploads a profile photo",
    "manager approves a leave request",
    "guest searches the catalogue",
    "user resets the password",
    "operator exports the audit log",
    "subscriber cancels the plan",
    "user changes the display language",
    "analyst filters the dashboard",
];

const CONDITIONS: [&str; 10] = [
    "the password is wrong",
    "the session has expired",
    "the network is offline",
    "the form has missing fields",
    "the account is locked",
    "the file exceeds the size limit",
    "the user lacks permission",
    "the cart is empty",
    "two users edit the same record",
    "the request times out",
];

const RESULTS: [&str; 8] = [
    "sees an error message",
    "is redirected to the login page",
    "receives a confirmation email",
    "sees a retry button",
    "gets a validation warning",
    "the change is saved as a draft",
    "sees an access denied notice",
    "the previous data is kept unchanged",
];

const STORY_POINTS: [f64; 6] = [1.0, 2.0, 3.0, 5.0, 8.0, 13.0];

/// Gold output for a fixture description: the stub's reformulate, generate
/// and reshape rules applied in sequence.
pub fn canonical_reference(description: &str) -> String {
    stub::reshape_text(&stub::generate_text(&stub::reformulate_text(description)))
}

/// Synthetic stories from a small action/condition/result grammar.
pub fn synthesize_fixtures(n: usize, seed: u64) -> DatasetFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (1..=n)
        .map(|i| {
            let action = *ACTIONS.choose(&mut rng).expect("non-empty");
            let condition = *CONDITIONS.choose(&mut rng).expect("non-empty");
            let result = *RESULTS.choose(&mut rng).expect("non-empty");
            let keyword = if rng.gen_bool(0.5) { "when" } else { "if" };
            let description = format!("{action} {keyword} {condition} and {result}.");
            let mut story = UserStory::new(format!("US-{i:04}"), capitalize(action), &description)
                .with_reference(canonical_reference(&description));
            if rng.gen_range(0..5) != 0 {
                story.story_points = STORY_POINTS.choose(&mut rng).copied();
            }
            story
        })
        .collect();
    DatasetFile::new(records)
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Everything persisted for one execution.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifact {
    pub run_id: String,
    pub config: serde_json::Value,
    pub results: Vec<PipelineResult>,
    pub failures: Vec<ItemFailure>,
    pub summary: AblationSummary,
}

#[derive(Serialize, Deserialize)]
struct RunManifest {
    run_id: String,
    format_version: String,
    config: serde_json::Value,
}

pub const RUN_FILE: &str = "run.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_MD: &str = "report.md";
pub const ITEMS_DIR: &str = "items";
pub const FAILURES_DIR: &str = "failures";

pub fn item_file_name(story_id: &str, variant: PipelineVariant) -> String {
    format!("{story_id}.{}.json", variant.name())
}

fn check_file_safe(id: &str) -> Result<(), DatasetError> {
    if id.is_empty() || id.starts_with('.') || id.contains(['/', '\\', '\0']) {
        return Err(DatasetError::Layout(format!(
            "story id {id:?} cannot be used as a file name"
        )));
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let mut body = serde_json::to_string_pretty(value).expect("value serializes");
    body.push('\n');
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(body.as_bytes()).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text)
        .map_err(|e| DatasetError::Layout(format!("{}: {e}", path.display())))
}

pub fn persist_run(run_dir: &Path, artifact: &RunArtifact) -> Result<(), DatasetError> {
    let items = run_dir.join(ITEMS_DIR);
    if items.exists()
        && fs::read_dir(&items)
            .map_err(io_err(&items))?
            .next()
            .is_some()
    {
        return Err(DatasetError::Layout(format!(
            "{} already contains items",
            items.display()
        )));
    }
    fs::create_dir_all(&items).map_err(io_err(&items))?;
    write_json(
        &run_dir.join(RUN_FILE),
        &RunManifest {
            run_id: artifact.run_id.clone(),
            format_version: FORMAT_VERSION.into(),
            config: artifact.config.clone(),
        },
    )?;
    for r in &artifact.results {
        check_file_safe(&r.story_id)?;
        write_json(&items.join(item_file_name(&r.story_id, r.variant)), r)?;
    }
    if !artifact.failures.is_empty() {
        let dir = run_dir.join(FAILURES_DIR);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for f in &artifact.failures {
            check_file_safe(&f.story_id)?;
            write_json(&dir.join(item_file_name(&f.story_id, f.variant)), f)?;
        }
    }
    let report_json = run_dir.join(REPORT_JSON);
    fs::write(&report_json, report::render_summary_json(&artifact.summary))
        .map_err(io_err(&report_json))?;
    let report_md = run_dir.join(REPORT_MD);
    fs::write(
        &report_md,
        report::render_summary_markdown(&artifact.summary),
    )
    .map_err(io_err(&report_md))
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<_, _>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "json"));
    files.sort();
    Ok(files)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= AGGREGATE_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

fn reports_close(a: &MetricReport, b: &MetricReport) -> bool {
    let prf = |x: &crate::metrics::PRF, y: &crate::metrics::PRF| {
        close(x.precision, y.precision) && close(x.recall, y.recall) && close(x.f1, y.f1)
    };
    close(a.bleu, b.bleu)
        && prf(&a.rouge1, &b.rouge1)
        && prf(&a.rouge2, &b.rouge2)
        && prf(&a.rouge_l, &b.rouge_l)
        && close(a.levenshtein, b.levenshtein)
        && close(a.cosine, b.cosine)
}

/// Loads a run directory, recomputing every aggregate from the item files and
/// checking it against `report.json`. The returned summary is the recomputed one.
pub fn load_run(run_dir: &Path) -> Result<RunArtifact, DatasetError> {
    let manifest: RunManifest = read_json(&run_dir.join(RUN_FILE))?;
    let stored: AblationSummary = read_json(&run_dir.join(REPORT_JSON))?;

    let items_dir = run_dir.join(ITEMS_DIR);
    if !items_dir.is_dir() {
        return Err(DatasetError::Layout(format!(
            "{} is missing",
            items_dir.display()
        )));
    }
    let item_files = json_files(&items_dir)?;
    if item_files.is_empty() {
        return Err(DatasetError::Layout(format!(
            "{} is empty",
            items_dir.display()
        )));
    }
    let mut by_key: BTreeMap<(String, PipelineVariant), PipelineResult> = BTreeMap::new();
    for path in &item_files {
        let r: PipelineResult = read_json(path)?;
        let expected = item_file_name(&r.story_id, r.variant);
        if path.file_name().and_then(|n| n.to_str()) != Some(expected.as_str()) {
            return Err(DatasetError::Corruption(format!(
                "{} holds item {expected}",
                path.display()
            )));
        }
        if r.trace.last_response() != Some(r.final_output.as_str()) {
            return Err(DatasetError::Corruption(format!(
                "{}: final output differs from the last trace response",
                path.display()
            )));
        }
        by_key.insert((r.story_id.clone(), r.variant), r);
    }

    let mut failures_by_key: BTreeMap<(String, PipelineVariant), ItemFailure> = BTreeMap::new();
    let failures_dir = run_dir.join(FAILURES_DIR);
    if failures_dir.is_dir() {
        for path in json_files(&failures_dir)? {
            let f: ItemFailure = read_json(&path)?;
            failures_by_key.insert((f.story_id.clone(), f.variant), f);
        }
    }

    let mut results = Vec::new();
    let mut failures = Vec::new();
    let mut variants = Vec::new();
    for v in &stored.variants {
        variants.push(v.variant);
        for id in &v.items {
            let r = by_key.remove(&(id.clone(), v.variant)).ok_or_else(|| {
                DatasetError::Corruption(format!(
                    "missing item file {}",
                    item_file_name(id, v.variant)
                ))
            })?;
            results.push(r);
        }
        for id in &v.failed {
            if let Some(f) = failures_by_key.remove(&(id.clone(), v.variant)) {
                failures.push(f);
            } else {
                return Err(DatasetError::Corruption(format!(
                    "missing failure record {}",
                    item_file_name(id, v.variant)
                )));
            }
        }
    }
    if let Some((id, variant)) = by_key.keys().next() {
        return Err(DatasetError::Corruption(format!(
            "item file {} is not listed in {REPORT_JSON}",
            item_file_name(id, *variant)
        )));
    }

    let recomputed = summarize(&variants, &results, &failures);
    for (old, new) in stored.variants.iter().zip(&recomputed.variants) {
        let ok = match (&old.aggregate, &new.aggregate) {
            (Some(a), Some(b)) => reports_close(a, b),
            (None, None) => true,
            _ => false,
        };
        if !ok || old.label != new.label {
            return Err(DatasetError::AggregateMismatch {
                variant: old.variant.to_string(),
                detail: format!(
                    "stored {:?}, recomputed {:?}",
                    old.aggregate.map(|a| report::metric_values(&a)),
                    new.aggregate.map(|a| report::metric_values(&a))
                ),
            });
        }
    }

    Ok(RunArtifact {
        run_id: manifest.run_id,
        config: manifest.config,
        results,
        failures,
        summary: recomputed,
    })
}

/// Timestamp plus a random hex suffix, e.g. `20260101T120000Z-3fa9c2`.
pub fn new_run_id() -> String {
    format!(
        "{}-{:06x}",
        chrono::Utc::now().format("%Y%m%dT%H%M%SZ"),
        rand::random::<u32>() & 0xff_ffff
    )
}
