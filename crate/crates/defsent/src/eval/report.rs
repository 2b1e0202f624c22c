//! Aggregation and presentation of metric values.
//!
//! Multi-seed runs produce one value per seed for each metric. This module
//! condenses those into mean and population standard deviation, serializes
//! them as JSON (`{metric: {mean, std, per_seed}}`), and renders aligned
//! plain-text tables with the compact `.3200 ± .0020` style used for
//! correlation and ranking summaries.

use std::collections::BTreeMap;

use serde::Serialize;

/// Mean, population standard deviation, and the raw per-seed values of one
/// metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<f64>,
}

impl MetricSummary {
    pub fn from_values(values: &[f64]) -> MetricSummary {
        let (mean, std) = mean_and_std(values);
        MetricSummary {
            mean,
            std,
            per_seed: values.to_vec(),
        }
    }
}

/// Arithmetic mean and population standard deviation (divisor n, not n-1:
/// the seeds enumerate the runs being reported, they do not sample a larger
/// population).
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    assert!(!values.is_empty(), "no values to summarize");
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Summarizes each metric's per-seed values.
pub fn summarize_metrics(per_metric: &BTreeMap<String, Vec<f64>>) -> BTreeMap<String, MetricSummary> {
    per_metric
        .iter()
        .map(|(name, values)| (name.clone(), MetricSummary::from_values(values)))
        .collect()
}

/// Formats a value to four decimals with the leading zero of a sub-one
/// magnitude dropped: 0.3200 prints as `.3200`, -0.002 as `-.0020`.
pub fn compact4(value: f64) -> String {
    let s = format!("{value:.4}");
    if let Some(rest) = s.strip_prefix("0.") {
        format!(".{rest}")
    } else if let Some(rest) = s.strip_prefix("-0.") {
        format!("-.{rest}")
    } else {
        s
    }
}

/// `mean ± std` with both sides in [`compact4`] form.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{} ± {}", compact4(mean), compact4(std))
}

/// Renders rows under a header as a plain-text table: every column padded
/// to its widest cell, the first column left-aligned, the rest
/// right-aligned.
pub fn text_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let columns = header.len();
    debug_assert!(rows.iter().all(|r| r.len() == columns));
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let render = |cells: Vec<&str>| -> String {
        let mut line = String::new();
        for (i, (cell, &w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            if i == 0 {
                line.push_str(&format!("{cell:<w$}"));
            } else {
                line.push_str(&format!("{cell:>w$}"));
            }
        }
        line.trim_end().to_string()
    };
    let mut out = render(header.to_vec());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (columns - 1)));
    for row in rows {
        out.push('\n');
        out.push_str(&render(row.iter().map(String::as_str).collect()));
    }
    out.push('\n');
    out
}
