//! JSON documents written into a run directory, and the text/CSV summary
//! table of `ltc report`.

use std::path::Path;

use ltc_core::datakit::OcdSplit;
use ltc_core::evalkit::EvalReport;
use ltc_core::pipeline::{EpochStats, TrainRecord};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Flat evaluation summary with stable field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub acc_all_strict: f64,
    pub acc_old_strict: f64,
    pub acc_new_strict: f64,
    pub acc_all_greedy: f64,
    pub acc_old_greedy: f64,
    pub acc_new_greedy: f64,
    pub num_items: usize,
    pub num_predicted_categories: usize,
    pub num_true_classes: usize,
    pub category_count_error: usize,
}

impl From<&EvalReport> for ReportJson {
    fn from(r: &EvalReport) -> Self {
        Self {
            acc_all_strict: r.strict.all,
            acc_old_strict: r.strict.old,
            acc_new_strict: r.strict.new,
            acc_all_greedy: r.greedy.all,
            acc_old_greedy: r.greedy.old,
            acc_new_greedy: r.greedy.new,
            num_items: r.num_items,
            num_predicted_categories: r.num_predicted_categories,
            num_true_classes: r.num_true_classes,
            category_count_error: r.category_count_error,
        }
    }
}

/// Seconds of wall-clock time per stage; absent stages have not run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub train_s: Option<f64>,
    pub stream_s: Option<f64>,
    pub eval_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecordJson {
    pub config_hash: String,
    pub seed: u64,
    pub epochs: Vec<EpochStats>,
    /// `τ` after every batch.
    pub tau_trajectory: Vec<f64>,
    pub total_pseudo_samples: usize,
    pub report: Option<ReportJson>,
    pub timings: Timings,
}

impl RunRecordJson {
    pub fn new(config_hash: String, seed: u64, record: &TrainRecord, train_s: f64) -> Self {
        Self {
            config_hash,
            seed,
            epochs: record.epochs.clone(),
            tau_trajectory: record.tau_trajectory(),
            total_pseudo_samples: record.total_pseudo_samples(),
            report: None,
            timings: Timings {
                train_s: Some(train_s),
                ..Timings::default()
            },
        }
    }
}

/// Everything needed to check that a rebuilt split is the one a run used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub data_source: String,
    pub seed: u64,
    pub train_fraction: f64,
    pub known_labels: Vec<usize>,
    pub novel_labels: Vec<usize>,
    /// Dataset row of each support sample.
    pub support_sources: Vec<usize>,
    /// Dataset row of each query item, in stream order.
    pub query_sources: Vec<usize>,
}

impl SplitManifest {
    pub fn new(data_source: String, split: &OcdSplit) -> Self {
        Self {
            data_source,
            seed: split.seed,
            train_fraction: split.train_fraction,
            known_labels: split.known_labels.clone(),
            novel_labels: split.novel_labels.clone(),
            support_sources: split.support.iter().map(|s| s.source).collect(),
            query_sources: split.query.iter().map(|q| q.source).collect(),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))
}

/// One row of a summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub name: String,
    pub report: ReportJson,
}

const COLUMNS: [&str; 8] = [
    "run", "all_strict", "old_strict", "new_strict", "all_greedy", "old_greedy", "new_greedy", "num_cls",
];

fn cells(row: &SummaryRow) -> [String; 8] {
    let r = &row.report;
    [
        row.name.clone(),
        format!("{:.4}", r.acc_all_strict),
        format!("{:.4}", r.acc_old_strict),
        format!("{:.4}", r.acc_new_strict),
        format!("{:.4}", r.acc_all_greedy),
        format!("{:.4}", r.acc_old_greedy),
        format!("{:.4}", r.acc_new_greedy),
        r.num_predicted_categories.to_string(),
    ]
}

/// Column-aligned text; the first column is left-aligned, numbers right.
pub fn render_table(rows: &[SummaryRow]) -> String {
    let body: Vec<[String; 8]> = rows.iter().map(cells).collect();
    let mut widths = COLUMNS.map(str::len);
    for r in &body {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cols: &[String]| {
        cols.iter()
            .enumerate()
            .map(|(i, c)| {
                if i == 0 {
                    format!("{c:<w$}", w = widths[i])
                } else {
                    format!("{c:>w$}", w = widths[i])
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut out = line(&COLUMNS.map(String::from));
    out.push('\n');
    for r in &body {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

pub fn write_table_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(COLUMNS)?;
    for row in rows {
        let r = &row.report;
        w.write_record([
            row.name.clone(),
            format!("{:?}", r.acc_all_strict),
            format!("{:?}", r.acc_old_strict),
            format!("{:?}", r.acc_new_strict),
            format!("{:?}", r.acc_all_greedy),
            format!("{:?}", r.acc_old_greedy),
            format!("{:?}", r.acc_new_greedy),
            r.num_predicted_categories.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(v: f64) -> ReportJson {
        ReportJson {
            acc_all_strict: v,
            acc_old_strict: v,
            acc_new_strict: v,
            acc_all_greedy: v,
            acc_old_greedy: v,
            acc_new_greedy: v,
            num_items: 10,
            num_predicted_categories: 12,
            num_true_classes: 10,
            category_count_error: 2,
        }
    }

    #[test]
    fn json_field_names_are_stable() {
        let text = serde_json::to_string(&report(0.5)).unwrap();
        for name in [
            "acc_all_strict",
            "acc_old_strict",
            "acc_new_strict",
            "acc_all_greedy",
            "acc_old_greedy",
            "acc_new_greedy",
            "num_predicted_categories",
        ] {
            assert!(text.contains(&format!("\"{name}\"")), "{name}");
        }
    }

    #[test]
    fn table_columns_line_up() {
        let rows = vec![
            SummaryRow { name: "a".into(), report: report(0.25) },
            SummaryRow { name: "a-much-longer-name".into(), report: report(1.0) },
        ];
        let text = render_table(&rows);
        let lens: Vec<usize> = text.lines().map(str::len).collect();
        assert!(lens.windows(2).all(|w| w[0] == w[1]), "{text}");
    }
}
