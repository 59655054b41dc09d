//! Prompt templates.
//!
//! A template file holds the system prompt, a separator line `=== user ===`,
//! and the user prompt. Both parts may contain `{placeholder}` fields; `{{`
//! and `}}` produce literal braces.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::backend::Stage;

pub const USER_SEPARATOR: &str = "=== user ===";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TemplateError {
    #[error("cannot read template {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("template {name}: missing separator line `{USER_SEPARATOR}`")]
    MissingSeparator { name: String },
    #[error("template {name}: unbalanced brace at byte {offset}")]
    Syntax { name: String, offset: usize },
    #[error("template {name} for stage {stage}: missing placeholder {{{placeholder}}}")]
    MissingPlaceholder {
        name: String,
        stage: Stage,
        placeholder: &'static str,
    },
    #[error("template {name} for stage {stage}: unknown placeholder {{{placeholder}}}")]
    UnknownPlaceholder {
        name: String,
        stage: Stage,
        placeholder: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Field(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    system: Vec<Piece>,
    user: Vec<Piece>,
}

fn parse_pieces(name: &str, src: &str, base_offset: usize) -> Result<Vec<Piece>, TemplateError> {
    let mut pieces = Vec::new();
    let mut text = String::new();
    let mut chars = src.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        match c {
            '{' if chars.peek().map(|&(_, n)| n) == Some('{') => {
                chars.next();
                text.push('{');
            }
            '}' if chars.peek().map(|&(_, n)| n) == Some('}') => {
                chars.next();
                text.push('}');
            }
            '{' => {
                let mut field = String::new();
                loop {
                    match chars.next() {
                        Some((_, '}')) => break,
                        Some((_, ch)) if ch.is_alphanumeric() || ch == '_' => field.push(ch),
                        _ => {
                            return Err(TemplateError::Syntax {
                                name: name.into(),
                                offset: base_offset + i,
                            })
                        }
                    }
                }
                if field.is_empty() {
                    return Err(TemplateError::Syntax {
                        name: name.into(),
                        offset: base_offset + i,
                    });
                }
                if !text.is_empty() {
                    pieces.push(Piece::Text(std::mem::take(&mut text)));
                }
                pieces.push(Piece::Field(field));
            }
            '}' => {
                return Err(TemplateError::Syntax {
                    name: name.into(),
                    offset: base_offset + i,
                })
            }
            _ => text.push(c),
        }
    }
    if !text.is_empty() {
        pieces.push(Piece::Text(text));
    }
    Ok(pieces)
}

fn required_fields(stage: Stage) -> &'static [&'static str] {
    match stage {
        Stage::Reformulate => &["title", "description"],
        Stage::Generate | Stage::Reshape => &["input"],
    }
}

impl PromptTemplate {
    pub fn parse(name: impl Into<String>, src: &str) -> Result<Self, TemplateError> {
        let name = name.into();
        let mut offset = 0;
        let mut split = None;
        for line in src.split_inclusive('\n') {
            if line.trim() == USER_SEPARATOR {
                split = Some((offset, offset + line.len()));
                break;
            }
            offset += line.len();
        }
        let (sys_end, user_start) =
            split.ok_or_else(|| TemplateError::MissingSeparator { name: name.clone() })?;
        let system = src[..sys_end].trim_end_matches(['\n', '\r']);
        let user = src[user_start..].trim_end_matches(['\n', '\r']);
        Ok(Self {
            system: parse_pieces(&name, system, 0)?,
            user: parse_pieces(&name, user, user_start)?,
            name,
        })
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let src = std::fs::read_to_string(path).map_err(|e| TemplateError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(path.display().to_string(), &src)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn fields(&self) -> BTreeSet<&str> {
        self.system
            .iter()
            .chain(&self.user)
            .filter_map(|p| match p {
                Piece::Field(f) => Some(f.as_str()),
                Piece::Text(_) => None,
            })
            .collect()
    }

    /// Every required placeholder for `stage` is present and no others are used.
    pub fn check_for(&self, stage: Stage) -> Result<(), TemplateError> {
        let fields = self.fields();
        let required = required_fields(stage);
        if let Some(missing) = required.iter().find(|r| !fields.contains(*r)) {
            return Err(TemplateError::MissingPlaceholder {
                name: self.name.clone(),
                stage,
                placeholder: missing,
            });
        }
        if let Some(unknown) = fields.iter().find(|f| !required.contains(f)) {
            return Err(TemplateError::UnknownPlaceholder {
                name: self.name.clone(),
                stage,
                placeholder: unknown.to_string(),
            });
        }
        Ok(())
    }

    /// Returns (system prompt, user prompt). Fields absent from `vars` render empty.
    pub fn render(&self, vars: &[(&str, &str)]) -> (String, String) {
        let fill = |pieces: &[Piece]| {
            let mut out = String::new();
            for p in pieces {
                match p {
                    Piece::Text(t) => out.push_str(t),
                    Piece::Field(f) => {
                        if let Some((_, v)) = vars.iter().find(|(k, _)| k == f) {
                            out.push_str(v);
                        }
                    }
                }
            }
            out
        };
        (fill(&self.system), fill(&self.user))
    }
}

/// One template per stage.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    pub reformulate: PromptTemplate,
    pub generate: PromptTemplate,
    pub reshape: PromptTemplate,
}

pub const DEFAULT_REFORMULATE: &str = include_str!("../../templates/reformulate.txt");
pub const DEFAULT_GENERATE: &str = include_str!("../../templates/generate.txt");
pub const DEFAULT_RESHAPE: &str = include_str!("../../templates/reshape.txt");

impl TemplateSet {
    pub fn new(
        reformulate: PromptTemplate,
        generate: PromptTemplate,
        reshape: PromptTemplate,
    ) -> Result<Self, TemplateError> {
        let set = Self {
            reformulate,
            generate,
            reshape,
        };
        for stage in Stage::ALL {
            set.get(stage).check_for(stage)?;
        }
        Ok(set)
    }

    pub fn get(&self, stage: Stage) -> &PromptTemplate {
        match stage {
            Stage::Reformulate => &self.reformulate,
            Stage::Generate => &self.generate,
            Stage::Reshape => &self.reshape,
        }
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        let parse = |name, src| PromptTemplate::parse(name, src).expect("shipped template parses");
        Self::new(
            parse("reformulate.txt", DEFAULT_REFORMULATE),
            parse("generate.txt", DEFAULT_GENERATE),
            parse("reshape.txt", DEFAULT_RESHAPE),
        )
        .expect("shipped templates are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_render() {
        let t = PromptTemplate::parse(
            "t",
            "#stage:generate\nsys {{x}}\n=== user ===\nin: {input}\n",
        )
        .unwrap();
        assert_eq!(
            t.render(&[("input", "abc")]),
            ("#stage:generate\nsys {x}".into(), "in: abc".into())
        );
        assert!(t.check_for(Stage::Generate).is_ok());
        assert!(matches!(
            t.check_for(Stage::Reformulate),
            Err(TemplateError::MissingPlaceholder {
                placeholder: "title",
                ..
            })
        ));
    }

    #[test]
    fn rejects_malformed_templates() {
        assert!(matches!(
            PromptTemplate::parse("t", "no separator {input}"),
            Err(TemplateError::MissingSeparator { .. })
        ));
        assert!(matches!(
            PromptTemplate::parse("t", "=== user ===\n{unclosed"),
            Err(TemplateError::Syntax { .. })
        ));
        assert!(matches!(
            PromptTemplate::parse("t", "=== user ===\nstray }"),
            Err(TemplateError::Syntax { .. })
        ));
        let extra = PromptTemplate::parse("t", "=== user ===\n{input} {extra}").unwrap();
        assert!(matches!(
            extra.check_for(Stage::Reshape),
            Err(TemplateError::UnknownPlaceholder { .. })
        ));
    }

    #[test]
    fn shipped_templates_carry_stage_markers() {
        let set = TemplateSet::default();
        for stage in Stage::ALL {
            let (system, _) = set.get(stage).render(&[]);
            assert_eq!(system.lines().next(), Some(stage.marker().as_str()));
        }
    }
}
