//! JSON-lines run records and their per-method summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no run records to summarize")]
    Empty,
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
}

/// One finished run of one method on one split or seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub kind: String,
    pub method: String,
    pub dataset: String,
    pub seed: u64,
    pub split: usize,
    pub test_acc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_acc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_auc: Option<f64>,
}

impl RunRecord {
    pub fn new(method: &str, dataset: &str, seed: u64, split: usize, test_acc: f64) -> Self {
        Self {
            kind: "run".into(),
            method: method.into(),
            dataset: dataset.into(),
            seed,
            split,
            test_acc,
            valid_acc: None,
            test_auc: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub kind: String,
    pub method: String,
    pub dataset: String,
    pub metric: String,
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub std: f64,
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Summaries of every run record in `text`, one per method and dataset, in
/// sorted order. Summary records and blank lines are skipped, so reporting a
/// report reproduces it.
pub fn summarize(text: &str) -> Result<Vec<Summary>, ReportError> {
    let mut groups: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| ReportError::Record { line: k + 1, message };
        let value: Value = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if value.get("kind").and_then(Value::as_str) != Some("run") {
            continue;
        }
        let record: RunRecord = serde_json::from_value(value.clone()).map_err(|e| bad(e.to_string()))?;
        groups
            .entry((record.dataset.clone(), record.method.clone(), "test_acc".into()))
            .or_default()
            .push(record.test_acc);
        if let Some(auc) = record.test_auc {
            groups.entry((record.dataset, record.method, "test_auc".into())).or_default().push(auc);
        }
    }
    if groups.is_empty() {
        return Err(ReportError::Empty);
    }
    Ok(groups
        .into_iter()
        .map(|((dataset, method, metric), values)| {
            let (mean, std) = mean_std(&values);
            Summary {
                kind: "summary".into(),
                method,
                dataset,
                metric,
                count: values.len(),
                mean,
                std,
            }
        })
        .collect())
}

/// Human-readable table, scores in percent.
pub fn format_table(summaries: &[Summary]) -> String {
    let dw = summaries.iter().map(|s| s.dataset.len()).max().unwrap_or(0).max(7);
    let mw = summaries.iter().map(|s| s.method.len()).max().unwrap_or(0).max(6);
    let mut out = format!("{:<dw$}  {:<mw$}  {:<8}  {:>4}  score\n", "dataset", "method", "metric", "runs");
    for s in summaries {
        out.push_str(&format!(
            "{:<dw$}  {:<mw$}  {:<8}  {:>4}  {:.2} ± {:.2}\n",
            s.dataset,
            s.method,
            s.metric,
            s.count,
            100.0 * s.mean,
            100.0 * s.std
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lines(records: &[RunRecord]) -> String {
        records.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect()
    }

    #[test]
    fn two_runs_give_sample_std() {
        let text = lines(&[RunRecord::new("lp", "d", 0, 0, 0.5), RunRecord::new("lp", "d", 1, 1, 0.7)]);
        let s = summarize(&text).unwrap();
        assert_eq!(s.len(), 1);
        assert!((s[0].mean - 0.6).abs() < 1e-12);
        assert!((s[0].std - 0.1414213562373095).abs() < 1e-12);
    }

    #[test]
    fn ten_splits_collapse_to_one_row() {
        let recs: Vec<_> = (0..10).map(|k| RunRecord::new("lp-1hop", "squirrel", 0, k, 0.3 + 0.01 * k as f64)).collect();
        let s = summarize(&lines(&recs)).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].count, 10);
        assert!(format_table(&s).contains('±'));
    }

    #[test]
    fn reporting_a_report_is_idempotent() {
        let text = lines(&[
            RunRecord::new("a", "d", 0, 0, 0.5),
            RunRecord::new("a", "d", 1, 0, 0.9),
            RunRecord::new("b", "d", 0, 0, 0.4),
        ]);
        let first = summarize(&text).unwrap();
        let mut combined = text.clone();
        for s in &first {
            combined.push_str(&serde_json::to_string(s).unwrap());
            combined.push('\n');
        }
        assert_eq!(summarize(&combined).unwrap(), first);
    }

    #[test]
    fn empty_logs_are_an_error() {
        assert!(matches!(summarize(""), Err(ReportError::Empty)));
        let only_summary = r#"{"kind":"summary","method":"a","dataset":"d","metric":"test_acc","count":1,"mean":0.5,"std":0.0}"#;
        assert!(matches!(summarize(only_summary), Err(ReportError::Empty)));
    }

    #[test]
    fn malformed_line_is_located() {
        let text = format!("{}\nnot json\n", serde_json::to_string(&RunRecord::new("a", "d", 0, 0, 0.5)).unwrap());
        assert!(matches!(summarize(&text), Err(ReportError::Record { line: 2, .. })));
    }
}
