//! Score reports and table rendering: per-example metric computation,
//! corpus-mean reports in percent, system comparison tables with per-column
//! best marking, and the bundled reference scores for the four published
//! systems on the three benchmark datasets.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::{
    bert_score, meteor, mover_score, rouge_l, rouge_lsum, rouge_n, EmbeddingTable, MetricError,
    MetricScore,
};
use crate::textcore::tokenize;

/// Metric column order used everywhere.
pub const METRIC_KEYS: [&str; 7] = [
    "rouge1",
    "rouge2",
    "rougeL",
    "rougeLsum",
    "meteor",
    "bertscore",
    "moverscore",
];

pub const METRIC_LABELS: [&str; 7] = [
    "ROUGE-1",
    "ROUGE-2",
    "ROUGE-L",
    "ROUGE-Lsum",
    "METEOR",
    "BERTScore",
    "MoverScore",
];

/// All metrics for one candidate/reference pair, as fractions in `[0, 1]`.
/// Embedding-based columns are present only when a table was supplied.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleMetrics {
    pub rouge1: MetricScore,
    pub rouge2: MetricScore,
    pub rouge_l: MetricScore,
    pub rouge_lsum: MetricScore,
    pub meteor: f64,
    pub bertscore: Option<MetricScore>,
    pub moverscore: Option<f64>,
}

/// Scores one pair. Degenerate empty sides score zero rather than erroring,
/// so one empty generation cannot sink a corpus run.
pub fn score_pair(
    cand_text: &str,
    ref_text: &str,
    emb: Option<&EmbeddingTable>,
    use_idf: bool,
) -> Result<ExampleMetrics, MetricError> {
    let cand = tokenize(cand_text);
    let reference = tokenize(ref_text);
    let degenerate = cand.is_empty() || reference.is_empty();
    let (bertscore, moverscore) = match (emb, degenerate) {
        (Some(table), false) => (
            Some(bert_score(&cand, &reference, table, use_idf)?),
            Some(mover_score(&cand, &reference, table)?),
        ),
        (Some(_), true) => (Some(MetricScore::default()), Some(0.0)),
        (None, _) => (None, None),
    };
    Ok(ExampleMetrics {
        rouge1: rouge_n(&cand, &reference, 1),
        rouge2: rouge_n(&cand, &reference, 2),
        rouge_l: rouge_l(&cand, &reference),
        rouge_lsum: rouge_lsum(cand_text, ref_text),
        meteor: meteor(&cand, &reference),
        bertscore,
        moverscore,
    })
}

/// Per-system corpus means in percent, keyed by metric name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub systems: BTreeMap<String, BTreeMap<String, f64>>,
}

impl EvalReport {
    pub fn validate(&self) -> Result<(), String> {
        for (system, metrics) in &self.systems {
            for (key, value) in metrics {
                if !(0.0..=100.0).contains(value) {
                    return Err(format!(
                        "system {system:?} metric {key:?} = {value} outside [0, 100]"
                    ));
                }
            }
        }
        Ok(())
    }

    /// Merges several reports; duplicate system names are rejected.
    pub fn merge(reports: Vec<EvalReport>) -> Result<EvalReport, String> {
        let mut merged = EvalReport::default();
        for report in reports {
            for (system, metrics) in report.systems {
                if merged.systems.contains_key(&system) {
                    return Err(format!("system {system:?} appears in more than one report"));
                }
                merged.systems.insert(system, metrics);
            }
        }
        Ok(merged)
    }

    /// All systems must agree on columns for a comparison to make sense.
    pub fn check_consistent_columns(&self) -> Result<Vec<String>, String> {
        let mut iter = self.systems.iter();
        let Some((first_name, first)) = iter.next() else {
            return Err("report contains no systems".into());
        };
        let columns: Vec<String> = first.keys().cloned().collect();
        for (name, metrics) in iter {
            let theirs: Vec<String> = metrics.keys().cloned().collect();
            if theirs != columns {
                return Err(format!(
                    "metric columns of {name:?} do not match {first_name:?}"
                ));
            }
        }
        Ok(columns)
    }
}

/// Evaluates `(candidate, reference)` text pairs for one system and folds
/// them into a percent report. Per-example scoring fans out across threads;
/// the fold is ordered, so results are deterministic.
pub fn corpus_report(
    system: &str,
    pairs: &[(String, String)],
    emb: Option<&EmbeddingTable>,
    use_idf: bool,
) -> Result<EvalReport, MetricError> {
    let scored: Vec<ExampleMetrics> = pairs
        .par_iter()
        .map(|(cand, reference)| score_pair(cand, reference, emb, use_idf))
        .collect::<Result<_, _>>()?;
    let n = scored.len().max(1) as f64;
    let mean = |f: &dyn Fn(&ExampleMetrics) -> f64| -> f64 {
        scored.iter().map(|m| f(m)).sum::<f64>() / n * 100.0
    };

    let mut metrics = BTreeMap::new();
    metrics.insert("rouge1".into(), mean(&|m| m.rouge1.f1));
    metrics.insert("rouge2".into(), mean(&|m| m.rouge2.f1));
    metrics.insert("rougeL".into(), mean(&|m| m.rouge_l.f1));
    metrics.insert("rougeLsum".into(), mean(&|m| m.rouge_lsum.f1));
    metrics.insert("meteor".into(), mean(&|m| m.meteor));
    if emb.is_some() {
        metrics.insert(
            "bertscore".into(),
            mean(&|m| m.bertscore.as_ref().map(|s| s.f1).unwrap_or(0.0)),
        );
        metrics.insert(
            "moverscore".into(),
            mean(&|m| m.moverscore.unwrap_or(0.0)),
        );
    }
    let mut systems = BTreeMap::new();
    systems.insert(system.to_string(), metrics);
    Ok(EvalReport { systems })
}

/// Lays out one table block: name column, right-aligned value cells padded
/// per column, single-space separators, and a trailing `best` line naming
/// the per-column winner (ties keep every winner, comma-joined).
fn render_block(rows: &[(String, Vec<f64>)], out: &mut String) {
    let name_width = rows
        .iter()
        .map(|(n, _)| n.len())
        .chain(std::iter::once("best".len()))
        .max()
        .unwrap_or(4)
        + 2;
    let columns = rows.first().map(|(_, v)| v.len()).unwrap_or(0);
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|(_, vals)| vals.iter().map(|v| format!("{v:.2}")).collect())
        .collect();
    let mut widths = vec![0usize; columns];
    for row in &cells {
        for (c, cell) in row.iter().enumerate() {
            widths[c] = widths[c].max(cell.len());
        }
    }
    for ((name, _), row) in rows.iter().zip(&cells) {
        out.push_str(&format!("{name:<name_width$}"));
        let rendered: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| format!("{cell:>width$}", width = widths[c]))
            .collect();
        out.push_str(&rendered.join(" "));
        out.push('\n');
    }
    // Winner line.
    let mut best = Vec::with_capacity(columns);
    for c in 0..columns {
        let top = rows
            .iter()
            .map(|(_, v)| v[c])
            .fold(f64::NEG_INFINITY, f64::max);
        let winners: Vec<&str> = rows
            .iter()
            .filter(|(_, v)| (v[c] - top).abs() < 1e-9)
            .map(|(n, _)| n.as_str())
            .collect();
        best.push(winners.join(","));
    }
    out.push_str(&format!("{:<name_width$}", "best"));
    out.push_str(&best.join(" "));
    out.push('\n');
}

/// Renders an [`EvalReport`] as one comparison block.
pub fn render_report(report: &EvalReport) -> Result<String, String> {
    report.validate()?;
    let columns = report.check_consistent_columns()?;
    // Present in canonical metric order, not BTreeMap order; unknown keys
    // (foreign reports) trail in their own order.
    let mut ordered: Vec<String> = METRIC_KEYS
        .iter()
        .filter(|k| columns.iter().any(|c| c == *k))
        .map(|k| k.to_string())
        .collect();
    for c in &columns {
        if !ordered.contains(c) {
            ordered.push(c.clone());
        }
    }
    let ordered_labels: Vec<&str> = ordered
        .iter()
        .map(|key| {
            METRIC_KEYS
                .iter()
                .position(|k| k == key)
                .map(|i| METRIC_LABELS[i])
                .unwrap_or(key.as_str())
        })
        .collect();

    let mut out = String::new();
    out.push_str(&format!("metrics: {}\n", ordered_labels.join(" ")));
    let rows: Vec<(String, Vec<f64>)> = report
        .systems
        .iter()
        .map(|(name, metrics)| {
            (
                name.clone(),
                ordered.iter().map(|k| metrics[k]).collect::<Vec<f64>>(),
            )
        })
        .collect();
    render_block(&rows, &mut out);
    Ok(out)
}

/// Published comparison scores bundled with the toolkit (percent F1 /
/// final scores for BART, PEGASUS, ProphetNet and SEASON fine-tuned on the
/// three benchmark datasets).
pub struct ReferenceBlock {
    pub dataset: &'static str,
    pub rows: [(&'static str, [f64; 7]); 4],
}

pub fn reference_table() -> [ReferenceBlock; 3] {
    [
        ReferenceBlock {
            dataset: "CNN/Dailymail",
            rows: [
                ("BART", [34.85, 13.78, 24.26, 31.93, 24.43, 88.27, 12.50]),
                ("PEGASUS", [35.89, 15.52, 26.39, 32.37, 29.34, 88.58, 13.67]),
                ("ProphetNet", [33.82, 13.22, 23.75, 30.78, 24.44, 87.23, 11.68]),
                ("SEASON", [34.65, 13.89, 24.25, 24.25, 24.77, 87.94, 12.41]),
            ],
        },
        ReferenceBlock {
            dataset: "SAMSum",
            rows: [
                ("BART", [45.62, 21.53, 35.15, 41.51, 33.40, 90.58, 25.76]),
                ("PEGASUS", [45.13, 21.10, 35.06, 39.47, 33.90, 90.52, 26.02]),
                ("ProphetNet", [50.02, 25.08, 39.68, 43.86, 40.26, 89.49, 30.66]),
                ("SEASON", [50.61, 25.72, 42.25, 42.35, 49.63, 91.82, 31.96]),
            ],
        },
        ReferenceBlock {
            dataset: "Financial-news EDT",
            rows: [
                ("BART", [47.15, 28.27, 41.10, 41.14, 35.76, 88.91, 28.15]),
                ("PEGASUS", [43.16, 25.13, 37.14, 37.15, 31.61, 88.13, 22.45]),
                ("ProphetNet", [50.63, 31.21, 44.67, 44.77, 38.97, 87.18, 32.02]),
                ("SEASON", [52.91, 34.64, 48.15, 48.15, 51.20, 90.58, 35.43]),
            ],
        },
    ]
}

/// Renders the bundled reference scores, one block per dataset, best row
/// marked per column.
pub fn render_reference_table() -> String {
    let mut out = String::new();
    out.push_str(&format!("metrics: {}\n", METRIC_LABELS.join(" ")));
    for block in reference_table() {
        out.push('\n');
        out.push_str(&format!("[{}]\n", block.dataset));
        let rows: Vec<(String, Vec<f64>)> = block
            .rows
            .iter()
            .map(|(name, vals)| (name.to_string(), vals.to_vec()))
            .collect();
        render_block(&rows, &mut out);
    }
    out
}
