//! Markdown and JSON rendering of metric tables. Rows are metrics, columns are
//! variants; every number is printed with three decimals.

use crate::metrics::MetricReport;
use crate::pipeline::AblationSummary;

/// Row labels in display order.
pub const METRIC_ROWS: [&str; 6] = [
    "BLEU Score",
    "ROUGE1 (F1)",
    "ROUGE2 (F1)",
    "ROUGE L (F1)",
    "Levenshtein Distance",
    "Cosine Similarity",
];

pub fn metric_values(r: &MetricReport) -> [f64; 6] {
    [
        r.bleu,
        r.rouge1.f1,
        r.rouge2.f1,
        r.rouge_l.f1,
        r.levenshtein,
        r.cosine,
    ]
}

pub fn format_value(v: f64) -> String {
    format!("{v:.3}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub label: String,
    pub values: Option<MetricReport>,
    /// Marks every cell of the column with `*`.
    pub incomplete: bool,
}

impl Column {
    pub fn new(label: impl Into<String>, values: MetricReport) -> Self {
        Self {
            label: label.into(),
            values: Some(values),
            incomplete: false,
        }
    }
}

pub fn render_table(columns: &[Column]) -> String {
    let mut out = String::from("| Metric |");
    for c in columns {
        out.push_str(&format!(" {} |", c.label));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(columns.len()));
    out.push('\n');
    for (row, name) in METRIC_ROWS.iter().enumerate() {
        out.push_str(&format!("| {name} |"));
        for c in columns {
            let mark = if c.incomplete { "*" } else { "" };
            let cell = match &c.values {
                Some(r) => format_value(metric_values(r)[row]),
                None => "n/a".to_string(),
            };
            out.push_str(&format!(" {cell}{mark} |"));
        }
        out.push('\n');
    }
    out
}

pub fn summary_columns(summary: &AblationSummary) -> Vec<Column> {
    summary
        .variants
        .iter()
        .map(|v| Column {
            label: v.label.clone(),
            values: v.aggregate,
            incomplete: !v.is_complete(),
        })
        .collect()
}

pub fn render_summary_markdown(summary: &AblationSummary) -> String {
    let mut out = String::from("# Ablation report\n\n");
    out.push_str(&render_table(&summary_columns(summary)));
    let items: Vec<String> = summary
        .variants
        .iter()
        .map(|v| format!("{} ({}): {} item(s)", v.label, v.variant, v.items.len()))
        .collect();
    out.push_str(&format!("\nColumns: {}.\n", items.join("; ")));
    let incomplete: Vec<_> = summary
        .variants
        .iter()
        .filter(|v| !v.is_complete())
        .collect();
    if !incomplete.is_empty() {
        out.push('\n');
        for v in incomplete {
            out.push_str(&format!(
                "\\* {}: {} of {} item(s) failed ({})\n",
                v.label,
                v.failed.len(),
                v.failed.len() + v.items.len(),
                v.failed.join(", ")
            ));
        }
    }
    out
}

pub fn render_summary_json(summary: &AblationSummary) -> String {
    let mut s = serde_json::to_string_pretty(summary).expect("summary serializes");
    s.push('\n');
    s
}

/// Single-column report for corpus evaluation.
pub fn render_metric_markdown(label: &str, report: &MetricReport, pairs: usize) -> String {
    let mut out = render_table(&[Column::new(label, *report)]);
    out.push_str(&format!("\n{pairs} pair(s) evaluated.\n"));
    out
}
