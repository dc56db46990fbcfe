//! Evaluation reports and the best/second-best comparison table.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::embedding::SimilarityDetail;
use super::mllm::METRICS;

/// Metrics of one audiobook.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub source: String,
    pub duration_s: f64,
    /// 100 × mean consecutive-window cosine; absent for audio under two windows.
    pub speaker_similarity: Option<f64>,
    pub similarity_detail: Option<SimilarityDetail>,
    /// Total over the whole audiobook (not a per-sample average).
    pub turning_points: u64,
    pub voiced_frames: usize,
    pub total_frames: usize,
    pub parameters: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mllm_scores: Option<IndexMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// The comparable numbers for one system. Turning points are fractional so
/// stored averages can be compared alongside per-audiobook totals.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SystemMetrics {
    pub speaker_similarity: Option<f64>,
    pub turning_points: Option<f64>,
    #[serde(default)]
    pub mllm: IndexMap<String, f64>,
}

impl From<&EvalReport> for SystemMetrics {
    fn from(r: &EvalReport) -> Self {
        SystemMetrics {
            speaker_similarity: r.speaker_similarity,
            turning_points: Some(r.turning_points as f64),
            mllm: r.mllm_scores.clone().unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mark {
    Best,
    Second,
    None,
}

/// Best = highest value(s). Second = next distinct value, only when the best
/// is unique. Missing values are never marked.
pub fn rank_marks(values: &[Option<f64>]) -> Vec<Mark> {
    let mut distinct: Vec<f64> = values.iter().flatten().copied().collect();
    distinct.sort_by(|a, b| b.total_cmp(a));
    distinct.dedup();
    let best = distinct.first().copied();
    let best_count = values.iter().filter(|v| **v == best && best.is_some()).count();
    let second = if best_count == 1 { distinct.get(1).copied() } else { None };
    values
        .iter()
        .map(|v| match *v {
            Some(x) if Some(x) == best => Mark::Best,
            Some(x) if Some(x) == second => Mark::Second,
            _ => Mark::None,
        })
        .collect()
}

struct Column {
    key: String,
    title: String,
    decimals: usize,
    values: Vec<Option<f64>>,
}

fn columns(systems: &IndexMap<String, SystemMetrics>) -> Vec<Column> {
    let mut cols = vec![
        Column {
            key: "speaker_similarity".into(),
            title: "Speaker Similarity".into(),
            decimals: 3,
            values: systems.values().map(|s| s.speaker_similarity).collect(),
        },
        Column {
            key: "turning_points".into(),
            title: "Turning Points".into(),
            decimals: 1,
            values: systems.values().map(|s| s.turning_points).collect(),
        },
    ];
    for metric in METRICS {
        if systems.values().any(|s| s.mllm.contains_key(metric)) {
            cols.push(Column {
                key: metric.to_string(),
                title: metric.to_string(),
                decimals: 1,
                values: systems.values().map(|s| s.mllm.get(metric).copied()).collect(),
            });
        }
    }
    cols
}

fn format_value(v: Option<f64>, decimals: usize) -> String {
    match v {
        Some(x) => format!("{x:.decimals$}"),
        None => "n/a".into(),
    }
}

/// `Ours 51.334 / 146885.1`
pub fn format_row(system: &str, m: &SystemMetrics) -> String {
    format!(
        "{system} {} / {}",
        format_value(m.speaker_similarity, 3),
        format_value(m.turning_points, 1)
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub json: Value,
    pub text: String,
}

/// Plain-text table (best in `**bold**`, second in `_underscores_`) plus JSON.
pub fn compare_report(systems: &IndexMap<String, SystemMetrics>) -> Comparison {
    let cols = columns(systems);
    let marks: Vec<Vec<Mark>> = cols.iter().map(|c| rank_marks(&c.values)).collect();

    let mut rows: Vec<Vec<String>> = vec![std::iter::once("System".to_string())
        .chain(cols.iter().map(|c| c.title.clone()))
        .collect()];
    let mut json_rows = Vec::new();
    for (i, (name, _)) in systems.iter().enumerate() {
        let mut row = vec![name.clone()];
        let mut cells = serde_json::Map::new();
        for (c, col) in cols.iter().enumerate() {
            let raw = format_value(col.values[i], col.decimals);
            row.push(match marks[c][i] {
                Mark::Best => format!("**{raw}**"),
                Mark::Second => format!("_{raw}_"),
                Mark::None => raw,
            });
            cells.insert(
                col.key.clone(),
                json!({"value": col.values[i], "mark": marks[c][i]}),
            );
        }
        rows.push(row);
        json_rows.push(json!({"system": name, "metrics": cells}));
    }

    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    for (r, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| format!("{cell:<w$}", w = widths[c]))
            .collect();
        text.push_str(cells.join(" | ").trim_end());
        text.push('\n');
        if r == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            text.push_str(&rule.join("-|-"));
            text.push('\n');
        }
    }
    text.push_str("Speaker similarity: 100 x mean cosine of consecutive 10 s windows. Turning points: total per audiobook.\n");
    Comparison {
        json: json!({"systems": json_rows}),
        text,
    }
}
