//! Text-similarity metrics: BLEU, ROUGE-1/2/L, Levenshtein distance and
//! term-frequency cosine similarity, plus corpus aggregation.
//!
//! Every metric consumes a [`TokenSequence`] produced by [`tokenize`], except
//! Levenshtein, which operates on raw unicode scalar values.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("n-gram order must be at least 1")]
    ZeroOrder,
    #[error("cannot aggregate an empty list of reports")]
    EmptyAggregate,
    #[error("token {0:?} is empty or contains whitespace")]
    InvalidToken(String),
}

/// Canonical tokenized view of a text.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    tokens: Vec<String>,
    source_length_chars: usize,
}

impl TokenSequence {
    /// Builds a sequence from pre-split tokens, used verbatim.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self, MetricError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        if let Some(bad) = tokens
            .iter()
            .find(|t| t.is_empty() || t.chars().any(char::is_whitespace))
        {
            return Err(MetricError::InvalidToken(bad.clone()));
        }
        let source_length_chars = tokens.iter().map(|t| t.chars().count()).sum::<usize>()
            + tokens.len().saturating_sub(1);
        Ok(Self {
            tokens,
            source_length_chars,
        })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn source_length_chars(&self) -> usize {
        self.source_length_chars
    }
}

/// Lowercases, splits on unicode whitespace and strips leading/trailing
/// non-alphanumeric characters from every token. Tokens left empty are dropped.
pub fn tokenize(text: &str) -> TokenSequence {
    let tokens = text
        .split_whitespace()
        .filter_map(|raw| {
            let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
            (!trimmed.is_empty()).then(|| trimmed.to_lowercase())
        })
        .collect();
    TokenSequence {
        tokens,
        source_length_chars: text.chars().count(),
    }
}

/// Multiset of n-grams of a fixed order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramCounts {
    n: usize,
    counts: BTreeMap<Vec<String>, usize>,
}

impl NGramCounts {
    pub fn order(&self) -> usize {
        self.n
    }

    pub fn get(&self, gram: &[&str]) -> usize {
        let key: Vec<String> = gram.iter().map(|s| s.to_string()).collect();
        self.counts.get(&key).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[String], usize)> {
        self.counts.iter().map(|(k, v)| (k.as_slice(), *v))
    }

    /// Σ min(count_self, count_other) over shared n-grams.
    pub fn overlap(&self, other: &NGramCounts) -> usize {
        self.counts
            .iter()
            .filter_map(|(gram, &c)| other.counts.get(gram).map(|&o| c.min(o)))
            .sum()
    }
}

pub fn ngram_counts(seq: &TokenSequence, n: usize) -> Result<NGramCounts, MetricError> {
    if n == 0 {
        return Err(MetricError::ZeroOrder);
    }
    let mut counts = BTreeMap::new();
    for window in seq.tokens.windows(n) {
        *counts.entry(window.to_vec()).or_insert(0) += 1;
    }
    Ok(NGramCounts { n, counts })
}

/// Precision, recall and their harmonic mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PRF {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PRF {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }

    fn from_counts(overlap: usize, candidate_total: usize, reference_total: usize) -> Self {
        Self::new(
            ratio(overlap, candidate_total),
            ratio(overlap, reference_total),
        )
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Default maximum n-gram order for [`bleu`].
pub const BLEU_MAX_ORDER: usize = 4;

/// Sentence-level BLEU with brevity penalty. A zero precision at order n >= 2
/// is replaced by 1/(2c) where c is the candidate length; a zero unigram
/// precision yields 0.
pub fn bleu(candidate: &TokenSequence, reference: &TokenSequence, max_order: usize) -> f64 {
    let c = candidate.len();
    if c == 0 || max_order == 0 {
        return 0.0;
    }
    let r = reference.len();
    let mut log_sum = 0.0;
    for n in 1..=max_order {
        let cand = ngram_counts(candidate, n).expect("order >= 1");
        let refs = ngram_counts(reference, n).expect("order >= 1");
        let matches = cand.overlap(&refs);
        let total = cand.total();
        let p = if matches == 0 || total == 0 {
            if n == 1 {
                return 0.0;
            }
            1.0 / (2.0 * c as f64)
        } else {
            matches as f64 / total as f64
        };
        log_sum += p.ln();
    }
    let brevity = if c >= r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    (brevity * (log_sum / max_order as f64).exp()).clamp(0.0, 1.0)
}

pub fn rouge_n(
    candidate: &TokenSequence,
    reference: &TokenSequence,
    n: usize,
) -> Result<PRF, MetricError> {
    let cand = ngram_counts(candidate, n)?;
    let refs = ngram_counts(reference, n)?;
    Ok(PRF::from_counts(
        cand.overlap(&refs),
        cand.total(),
        refs.total(),
    ))
}

pub fn lcs_length(a: &TokenSequence, b: &TokenSequence) -> usize {
    let (a, b) = (&a.tokens, &b.tokens);
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            curr[j + 1] = if x == y {
                prev[j] + 1
            } else {
                curr[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

pub fn rouge_l(candidate: &TokenSequence, reference: &TokenSequence) -> PRF {
    PRF::from_counts(
        lcs_length(candidate, reference),
        candidate.len(),
        reference.len(),
    )
}

/// Unit-cost edit distance over unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let above = row[j + 1];
            let cost = usize::from(ca != cb);
            row[j + 1] = (diag + cost).min(above + 1).min(row[j] + 1);
            diag = above;
        }
    }
    row[b.len()]
}

fn term_frequencies(seq: &TokenSequence) -> BTreeMap<&str, f64> {
    let mut m = BTreeMap::new();
    for t in &seq.tokens {
        *m.entry(t.as_str()).or_insert(0.0) += 1.0;
    }
    m
}

/// Cosine of the raw term-frequency vectors of both sequences.
pub fn cosine_similarity(a: &TokenSequence, b: &TokenSequence) -> f64 {
    let (va, vb) = (term_frequencies(a), term_frequencies(b));
    // Squared norms under a single sqrt: identical inputs give exactly 1.
    let sq = |v: &BTreeMap<&str, f64>| v.values().map(|x| x * x).sum::<f64>();
    let (na, nb) = (sq(&va), sq(&vb));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = va
        .iter()
        .filter_map(|(k, x)| vb.get(k).map(|y| x * y))
        .sum();
    (dot / (na * nb).sqrt()).clamp(0.0, 1.0)
}

/// The six scores for one candidate/reference pair, or their corpus mean.
///
/// `levenshtein` is an integer character count for a single pair and the
/// arithmetic mean of those counts once aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu: f64,
    pub rouge1: PRF,
    pub rouge2: PRF,
    #[serde(rename = "rougeL")]
    pub rouge_l: PRF,
    pub levenshtein: f64,
    pub cosine: f64,
}

pub fn evaluate_pair(candidate: &str, reference: &str) -> MetricReport {
    let cand = tokenize(candidate);
    let refs = tokenize(reference);
    MetricReport {
        bleu: bleu(&cand, &refs, BLEU_MAX_ORDER),
        rouge1: rouge_n(&cand, &refs, 1).expect("order 1"),
        rouge2: rouge_n(&cand, &refs, 2).expect("order 2"),
        rouge_l: rouge_l(&cand, &refs),
        levenshtein: levenshtein(candidate, reference) as f64,
        cosine: cosine_similarity(&cand, &refs),
    }
}

/// Field-wise arithmetic mean. Precision, recall and F1 are averaged
/// independently, so the aggregated F1 is not the harmonic mean of the
/// aggregated precision and recall.
pub fn aggregate(reports: &[MetricReport]) -> Result<MetricReport, MetricError> {
    if reports.is_empty() {
        return Err(MetricError::EmptyAggregate);
    }
    let n = reports.len() as f64;
    let mean = |f: &dyn Fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let mean_prf = |f: &dyn Fn(&MetricReport) -> PRF| PRF {
        precision: mean(&|r| f(r).precision),
        recall: mean(&|r| f(r).recall),
        f1: mean(&|r| f(r).f1),
    };
    Ok(MetricReport {
        bleu: mean(&|r| r.bleu),
        rouge1: mean_prf(&|r| r.rouge1),
        rouge2: mean_prf(&|r| r.rouge2),
        rouge_l: mean_prf(&|r| r.rouge_l),
        levenshtein: mean(&|r| r.levenshtein),
        cosine: mean(&|r| r.cosine),
    })
}
