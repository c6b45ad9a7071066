use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Scores of one metric over repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub metric: String,
    pub runs: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); 0 for a single run.
    pub std: f64,
    pub run_count: usize,
    /// Per-run auxiliary series, e.g. per-class F1 for LDS.
    #[serde(default)]
    pub aux: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub notes: Vec<String>,
    pub config_digest: String,
    pub seed: u64,
}

pub fn mean_std(runs: &[f64]) -> (f64, f64) {
    let n = runs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = runs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = runs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

impl MetricReport {
    pub fn from_runs(metric: &str, runs: Vec<f64>, config_digest: String, seed: u64) -> Self {
        let (mean, std) = mean_std(&runs);
        MetricReport {
            metric: metric.to_string(),
            run_count: runs.len(),
            runs,
            mean,
            std,
            aux: BTreeMap::new(),
            notes: Vec::new(),
            config_digest,
            seed,
        }
    }

    pub fn with_aux(mut self, key: &str, values: Vec<f64>) -> Self {
        self.aux.insert(key.to_string(), values);
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    /// True when `mean`/`std` agree with `runs` to within 1e-12.
    pub fn is_consistent(&self) -> bool {
        let (m, s) = mean_std(&self.runs);
        self.run_count == self.runs.len() && (m - self.mean).abs() <= 1e-12 && (s - self.std).abs() <= 1e-12
    }
}

/// One model's row in the summary table.
#[derive(Debug, Clone)]
pub struct TableRow {
    pub label: String,
    pub reports: Vec<MetricReport>,
}

const COLUMNS: [(&str, &str); 7] = [
    ("lds", "LDS (↓)"),
    ("lps", "LPS (↓)"),
    ("jsd", "JSD (↓)"),
    ("alpha_precision", "α-precision (↑)"),
    ("beta_recall", "β-recall (↑)"),
    ("coverage", "Coverage (↑)"),
    ("plus_five_steps", "+5 Steps (↓)"),
];

fn cell(reports: &[MetricReport], metric: &str) -> String {
    match reports.iter().find(|r| r.metric == metric) {
        Some(r) => format!("{:.3} ± {:.3}", r.mean, r.std),
        None => "-".to_string(),
    }
}

/// Aligned plain-text table: one row per model, one column per metric.
pub fn render_table(rows: &[TableRow]) -> String {
    let mut grid: Vec<Vec<String>> = Vec::with_capacity(rows.len() + 1);
    let mut header = vec!["Model".to_string()];
    header.extend(COLUMNS.iter().map(|(_, h)| h.to_string()));
    grid.push(header);
    for row in rows {
        let mut line = vec![row.label.clone()];
        line.extend(COLUMNS.iter().map(|(key, _)| cell(&row.reports, key)));
        grid.push(line);
    }
    let widths: Vec<usize> = (0..grid[0].len())
        .map(|c| grid.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, line) in grid.iter().enumerate() {
        let cells: Vec<String> = line
            .iter()
            .zip(&widths)
            .map(|(text, w)| format!("{text}{}", " ".repeat(w - text.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        if i == 0 {
            let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            let _ = writeln!(out, "{}", "-".repeat(total));
        }
    }
    out
}
