use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{BackendConfig, Stage};
use crate::dataset::{self, DatasetFile};
use crate::pipeline::{BackendSet, PipelineVariant, PromptTemplate, TemplateSet};

/// Where stories come from: a JSONL file or the fixture generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetSource {
    Path(PathBuf),
    Synthetic { synthetic: usize },
}

/// Run configuration file. Relative paths resolve against the directory that
/// contains the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub variants: Vec<String>,
    /// Keyed by stage name or `default`; stages without an entry use `default`.
    pub backends: BTreeMap<String, BackendConfig>,
    #[serde(default)]
    pub templates: BTreeMap<String, PathBuf>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_parallelism() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// A validated configuration with every resource loaded.
#[derive(Debug)]
pub struct ResolvedConfig {
    pub config: RunConfig,
    pub dataset: DatasetFile,
    pub variants: Vec<PipelineVariant>,
    pub backends: BackendSet,
    pub templates: TemplateSet,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, Vec<String>> {
        serde_json::from_str(text).map_err(|e| vec![format!("invalid config: {e}")])
    }

    pub fn load(path: &Path) -> Result<Self, Vec<String>> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| vec![format!("cannot read config {}: {e}", path.display())])?;
        Self::from_json(&text)
    }

    fn backend_for(&self, stage: Stage) -> Option<&BackendConfig> {
        self.backends
            .get(stage.as_str())
            .or_else(|| self.backends.get("default"))
    }

    /// Loads and checks every referenced resource, reporting all problems together.
    pub fn resolve(self, base_dir: &Path) -> Result<ResolvedConfig, Vec<String>> {
        let mut errors = Vec::new();
        let resolve_path = |p: &Path| {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base_dir.join(p)
            }
        };

        let mut variants = Vec::new();
        if self.variants.is_empty() {
            errors.push("variants: at least one variant is required".to_string());
        }
        for name in &self.variants {
            match name.parse::<PipelineVariant>() {
                Ok(v) if variants.contains(&v) => {
                    errors.push(format!("variants: {v} listed twice"))
                }
                Ok(v) => variants.push(v),
                Err(e) => errors.push(format!("variants: {e}")),
            }
        }
        if self.parallelism == 0 {
            errors.push("parallelism must be >= 1".into());
        }

        for key in self.backends.keys() {
            if key != "default" && Stage::parse(key).is_none() {
                errors.push(format!(
                    "backends: unknown key {key:?} (expected default, reformulate, generate or reshape)"
                ));
            }
        }
        let mut backends = BackendSet::default();
        for stage in Stage::ALL {
            let needed = variants.iter().any(|v| v.stages().contains(&stage));
            match self.backend_for(stage) {
                Some(cfg) => match cfg.build() {
                    Ok(b) => match stage {
                        Stage::Reformulate => backends.reformulate = Some(b),
                        Stage::Generate => backends.generate = Some(b),
                        Stage::Reshape => backends.reshape = Some(b),
                    },
                    Err(problems) => errors.extend(
                        problems
                            .into_iter()
                            .map(|p| format!("backends.{stage}: {p}")),
                    ),
                },
                None if needed => errors.push(format!("backends: no backend for stage {stage}")),
                None => {}
            }
        }

        for key in self.templates.keys() {
            if Stage::parse(key).is_none() {
                errors.push(format!("templates: unknown stage {key:?}"));
            }
        }
        let defaults = TemplateSet::default();
        let mut loaded = Vec::new();
        for stage in Stage::ALL {
            let template = match self.templates.get(stage.as_str()) {
                Some(p) => {
                    let path = resolve_path(p);
                    if !path.is_file() {
                        errors.push(format!("template file not found: {}", path.display()));
                        None
                    } else {
                        match PromptTemplate::load(&path)
                            .and_then(|t| t.check_for(stage).map(|_| t))
                        {
                            Ok(t) => Some(t),
                            Err(e) => {
                                errors.push(e.to_string());
                                None
                            }
                        }
                    }
                }
                None => Some(defaults.get(stage).clone()),
            };
            loaded.extend(template);
        }

        let dataset = match &self.dataset {
            DatasetSource::Synthetic { synthetic: 0 } => {
                errors.push("dataset.synthetic must be >= 1".into());
                None
            }
            DatasetSource::Synthetic { synthetic } => {
                Some(dataset::synthesize_fixtures(*synthetic, self.seed))
            }
            DatasetSource::Path(p) => {
                let path = resolve_path(p);
                if !path.is_file() {
                    errors.push(format!("dataset file not found: {}", path.display()));
                    None
                } else {
                    match dataset::load_jsonl(&path) {
                        Ok(d) if d.is_empty() => {
                            errors.push(format!("dataset {} has no records", path.display()));
                            None
                        }
                        Ok(d) => Some(d),
                        Err(e) => {
                            errors.push(format!("dataset {}: {e}", path.display()));
                            None
                        }
                    }
                }
            }
        };

        if !errors.is_empty() {
            return Err(errors);
        }
        let mut loaded = loaded.into_iter();
        let templates = TemplateSet {
            reformulate: loaded.next().expect("three templates"),
            generate: loaded.next().expect("three templates"),
            reshape: loaded.next().expect("three templates"),
        };
        Ok(ResolvedConfig {
            output_dir: resolve_path(&self.output_dir),
            dataset: dataset.expect("checked above"),
            variants,
            backends,
            templates,
            config: self,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collects_all_errors() {
        let cfg = RunConfig::from_json(
            r#"{
                "dataset": "missing.jsonl",
                "variants": ["RFR", "XX", "RFR"],
                "backends": {"generate": {"kind": "http"}, "bogus": {"kind": "stub"}},
                "templates": {"reshape": "nope.txt"},
                "parallelism": 0
            }"#,
        )
        .unwrap();
        let errors = cfg.resolve(Path::new("/nonexistent")).unwrap_err();
        let joined = errors.join("\n");
        for needle in [
            "unknown variant \"XX\"",
            "RFR listed twice",
            "parallelism",
            "backends.generate: http backend requires base_url",
            "bogus",
            "no backend for stage reformulate",
            "template file not found: /nonexistent/nope.txt",
            "dataset file not found: /nonexistent/missing.jsonl",
        ] {
            assert!(joined.contains(needle), "missing {needle:?} in:\n{joined}");
        }
    }

    #[test]
    fn synthetic_dataset_and_default_backend() {
        let cfg = RunConfig::from_json(
            r#"{"dataset": {"synthetic": 4}, "variants": ["RF", "FR"],
                "backends": {"default": {"kind": "stub"}}, "seed": 3}"#,
        )
        .unwrap();
        let resolved = cfg.resolve(Path::new(".")).unwrap();
        assert_eq!(resolved.dataset.len(), 4);
        assert!(resolved.backends.reshape.is_some());
        assert_eq!(resolved.templates, TemplateSet::default());
    }

    #[test]
    fn rejects_inline_secrets() {
        assert!(RunConfig::from_json(
            r#"{"dataset": "d", "variants": ["RF"], "backends": {}, "api_key": "sk-1"}"#
        )
        .is_err());
    }
}
