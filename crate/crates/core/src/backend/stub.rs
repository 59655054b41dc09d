//! Deterministic rule-based backend.
//!
//! The stub reads a `#stage:<name>` marker line from the system prompt and
//! applies a fixed text rewrite to the payload of the user prompt. The payload
//! is everything after the last line consisting solely of `---`, or the whole
//! user prompt when no such line exists.
//!
//! * `reformulate`: splits the story at the first conditional keyword
//!   (`when`, `if`, `while`) into an action and a remainder, then splits the
//!   remainder at the first `and`/`then` into condition and result. Stories
//!   without a conditional get condition `always`, and the action/result split
//!   happens on `and`/`then` instead. Output:
//!   `Action: <a>; Condition: <c>; Result: <r>`. Input already in that form is
//!   re-emitted canonically.
//! * `generate`: expands an Action/Condition/Result triple into three loosely
//!   formatted steps (`step N - ...` / `expected result: ...`). Anything else
//!   becomes a single free-form test description.
//! * `reshape`: renumbers steps into the canonical layout
//!   `N. <step>` followed by `   Expected: <result>`. Unstructured lines are
//!   split into sentences, one step each. Idempotent.
//! * no or unknown marker: echoes the user prompt.

use std::sync::LazyLock;
use std::time::Instant;

use regex::Regex;

use super::{
    BackendError, CompletionBackend, CompletionRequest, CompletionResponse, Stage,
    STAGE_MARKER_PREFIX,
};

#[derive(Debug, Clone, Copy, Default)]
pub struct StubBackend;

impl CompletionBackend for StubBackend {
    fn id(&self) -> String {
        "stub".into()
    }

    fn send(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        let start = Instant::now();
        let text = stub_complete(request);
        Ok(CompletionResponse {
            prompt_tokens: word_count(&request.system_prompt) + word_count(&request.user_prompt),
            completion_tokens: word_count(&text),
            text,
            latency: start.elapsed(),
        })
    }
}

fn word_count(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

/// The stub's response text for a request.
pub fn stub_complete(request: &CompletionRequest) -> String {
    let Some(stage) = stage_marker(&request.system_prompt) else {
        return request.user_prompt.clone();
    };
    let input = payload(&request.user_prompt);
    match stage {
        Stage::Reformulate => reformulate_text(input),
        Stage::Generate => generate_text(input),
        Stage::Reshape => reshape_text(input),
    }
}

pub fn stage_marker(system_prompt: &str) -> Option<Stage> {
    system_prompt
        .lines()
        .find_map(|l| l.trim().strip_prefix(STAGE_MARKER_PREFIX))
        .and_then(|name| Stage::parse(name.trim()))
}

pub fn payload(user_prompt: &str) -> &str {
    let mut start = 0;
    let mut offset = 0;
    for line in user_prompt.split_inclusive('\n') {
        offset += line.len();
        if line.trim_end_matches(['\r', '\n']).trim() == "---" {
            start = offset;
        }
    }
    let rest = &user_prompt[start..];
    if rest.trim().is_empty() {
        user_prompt
    } else {
        rest
    }
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

const CONDITIONALS: [&str; 3] = ["when", "if", "while"];
const CONJUNCTIONS: [&str; 2] = ["and", "then"];
const DEFAULT_ACTION: &str = "perform the described action";
const DEFAULT_CONDITION: &str = "always";
const DEFAULT_RESULT: &str = "the described behaviour occurs";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    pub action: String,
    pub condition: String,
    pub result: String,
}

impl Triple {
    fn new(action: &str, condition: &str, result: &str) -> Self {
        let clean = |s: &str, default: &str| {
            let s = s.trim().trim_matches([',', ';', ':']).trim();
            if s.is_empty() {
                default.to_string()
            } else {
                s.to_string()
            }
        };
        Self {
            action: clean(action, DEFAULT_ACTION),
            condition: clean(condition, DEFAULT_CONDITION),
            result: clean(result, DEFAULT_RESULT),
        }
    }

    pub fn render(&self) -> String {
        format!(
            "Action: {}; Condition: {}; Result: {}",
            self.action, self.condition, self.result
        )
    }
}

static TRIPLE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?is)^action:\s*(.*?);\s*condition:\s*(.*?);\s*result:\s*(.*)$").unwrap()
});

pub fn parse_triple(text: &str) -> Option<Triple> {
    let text = normalize_ws(text);
    let text = text.trim_end_matches(['.', '!', '?']);
    TRIPLE_RE
        .captures(text)
        .map(|c| Triple::new(&c[1], &c[2], &c[3]))
}

fn is_word(word: &str, set: &[&str]) -> bool {
    let w = word.trim_matches(|c: char| !c.is_alphanumeric());
    set.iter().any(|k| w.eq_ignore_ascii_case(k))
}

fn split_at_word<'a>(words: &'a [&'a str], set: &[&str]) -> Option<(&'a [&'a str], &'a [&'a str])> {
    words
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, w)| is_word(w, set))
        .map(|(i, _)| (&words[..i], &words[i + 1..]))
}

/// Keyword split of a free-text user story into an Action/Condition/Result triple.
pub fn split_story(text: &str) -> Triple {
    if let Some(t) = parse_triple(text) {
        return t;
    }
    let text = normalize_ws(text);
    let text = text.trim_end_matches(['.', '!', '?']);
    let words: Vec<&str> = text.split(' ').filter(|w| !w.is_empty()).collect();
    let join = |ws: &[&str]| ws.join(" ");
    match split_at_word(&words, &CONDITIONALS) {
        Some((action, rest)) => match split_at_word(rest, &CONJUNCTIONS) {
            Some((cond, result)) => Triple::new(&join(action), &join(cond), &join(result)),
            None => Triple::new(&join(action), &join(rest), ""),
        },
        None => match split_at_word(&words, &CONJUNCTIONS) {
            Some((action, result)) => Triple::new(&join(action), "", &join(result)),
            None => Triple::new(&join(&words), "", ""),
        },
    }
}

pub fn reformulate_text(input: &str) -> String {
    split_story(input).render()
}

pub fn generate_text(input: &str) -> String {
    match parse_triple(input) {
        Some(t) => format!(
            "step 1 - establish the precondition: {c}\n\
             expected result: the system reflects that {c}\n\
             step 2 - perform the action: {a}\n\
             expected result: the action is accepted\n\
             step 3 - check the outcome\n\
             expected result: {r}",
            a = t.action,
            c = t.condition,
            r = t.result
        ),
        None => format!(
            "test the following behaviour: {}\nexpected result: the behaviour works as described",
            normalize_ws(input)
        ),
    }
}

static STEP_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^(?:step\s*)?\d+\s*[.):\-]\s*(.*)$").unwrap());
static EXPECTED_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^expected(?:\s+result)?\s*:\s*(.*)$").unwrap());

const DEFAULT_STEP: &str = "perform the step";
const DEFAULT_EXPECTED: &str = "the step completes without error";
const EMPTY_STEP: &str = "(no content)";

pub fn reshape_text(input: &str) -> String {
    let mut steps: Vec<(String, Option<String>)> = Vec::new();
    for line in input.lines() {
        let line = normalize_ws(line);
        if line.is_empty() {
            continue;
        }
        if let Some(c) = EXPECTED_RE.captures(&line) {
            let expected = c[1].trim().to_string();
            match steps.last_mut() {
                Some((_, slot @ None)) => *slot = Some(expected),
                _ => steps.push(("check the result".into(), Some(expected))),
            }
        } else if let Some(c) = STEP_RE.captures(&line) {
            let text = c[1].trim();
            steps.push((
                if text.is_empty() { DEFAULT_STEP } else { text }.to_string(),
                None,
            ));
        } else {
            steps.extend(
                line.split(['.', ';', '!', '?'])
                    .map(str::trim)
                    .filter(|s| s.chars().any(char::is_alphanumeric))
                    .map(|s| (s.to_string(), None)),
            );
        }
    }
    if steps.is_empty() {
        steps.push((EMPTY_STEP.into(), None));
    }
    steps
        .iter()
        .enumerate()
        .map(|(i, (step, expected))| {
            let expected = expected
                .as_deref()
                .filter(|e| !e.is_empty())
                .unwrap_or(DEFAULT_EXPECTED);
            format!("{}. {}\n   Expected: {}", i + 1, step, expected)
        })
        .collect::<Vec<_>>()
        .join("\n")
}
