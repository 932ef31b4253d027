//! Report files: JSON metadata and CSV tables.

use std::fmt::Write as _;
use std::path::Path;

use retrac_core::attribution::InfluenceScore;
use retrac_core::io::{read_text, write_atomic};
use retrac_core::metrics::MetricTable;
use retrac_core::stats::descending_ranks;
use retrac_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Argument(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path, kind: &'static str) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Format {
        kind,
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Comma-separated table with a fixed header.
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut text = header.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(",");
        text.push('\n');
        Csv {
            text,
            columns: header.len(),
        }
    }

    pub fn row<D: std::fmt::Display>(&mut self, fields: &[D]) {
        assert_eq!(fields.len(), self.columns, "row width");
        for (i, f) in fields.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            let _ = write!(self.text, "{f}");
        }
        self.text.push('\n');
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.text.as_bytes())
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

/// `key,value` rows of a metric table.
pub fn metric_csv(table: &MetricTable) -> Csv {
    let mut csv = Csv::new(&[table.key_name.as_str(), table.metric.as_str()]);
    for r in &table.rows {
        csv.row(&[r.key.to_string(), r.value.to_string()]);
    }
    csv
}

/// Scores of every training sample for each test: rows ordered by test,
/// then train id, with the per-test rank (1 = largest score) and one column
/// per checkpoint.
pub fn scores_csv(rows: &[Vec<InfluenceScore>], checkpoint_steps: &[u64]) -> Csv {
    let mut header = vec!["test_id".to_string(), "train_id".into(), "score".into(), "rank".into()];
    header.extend(checkpoint_steps.iter().map(|s| format!("ckpt_{s}")));
    let mut csv = Csv::new(&header);
    for row in rows {
        let scores: Vec<f64> = row.iter().map(|s| s.score).collect();
        let ranks = descending_ranks(&scores);
        for (s, rank) in row.iter().zip(ranks) {
            let mut fields = vec![s.test_id.to_string(), s.train_id.to_string(), s.score.to_string(), rank.to_string()];
            fields.extend(s.per_checkpoint.iter().map(f64::to_string));
            csv.row(&fields);
        }
    }
    csv
}

/// Score matrix `[test][train]` read back from a scores CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub rows: Vec<Vec<f64>>,
}

pub fn read_scores(path: &Path) -> Result<ScoreMatrix> {
    let text = read_text(path)?;
    let bad = |reason: String| Error::Format {
        kind: "scores",
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    if !header.starts_with("test_id,train_id,score,rank") {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in lines.enumerate() {
        let mut fields = line.split(',');
        let mut next = |name: &str| {
            fields
                .next()
                .ok_or_else(|| bad(format!("line {}: missing {name}", i + 2)))
        };
        let test: usize = next("test_id")?.parse().map_err(|_| bad(format!("line {}: test_id", i + 2)))?;
        let train: usize = next("train_id")?.parse().map_err(|_| bad(format!("line {}: train_id", i + 2)))?;
        let score: f64 = next("score")?.parse().map_err(|_| bad(format!("line {}: score", i + 2)))?;
        if test == rows.len() {
            rows.push(Vec::new());
        }
        if test + 1 != rows.len() || train != rows[test].len() {
            return Err(bad(format!("line {}: rows out of order", i + 2)));
        }
        rows[test].push(score);
    }
    Ok(ScoreMatrix { rows })
}
