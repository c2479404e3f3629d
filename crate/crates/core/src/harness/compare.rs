use std::fmt::Write as _;

use super::run::{mean_std, RunManifest};
use crate::error::{PteError, Result};
use crate::evaluation::{EvaluationReport, TABLE_METRICS};

/// Column headers matching [`TABLE_METRICS`].
pub const TABLE_HEADERS: [&str; 6] = ["Acc_f", "Acc_r", "Acc_ft", "Acc_rt", "H-Mean", "MIA"];

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub mean: f64,
    /// `None` with fewer than two repeats.
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub method: String,
    pub repeats: usize,
    pub cells: Vec<Cell>,
}

/// Method × metric table, one row per method, columns in [`TABLE_HEADERS`] order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, method: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Delimited text; cells read `mean ± std`, or just `mean` without a std.
    pub fn to_delimited(&self, sep: char) -> String {
        let mut out = String::from("Method");
        for h in TABLE_HEADERS {
            let _ = write!(out, "{sep}{h}");
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.method);
            for c in &row.cells {
                match c.std {
                    Some(s) => {
                        let _ = write!(out, "{sep}{:.2} ± {s:.2}", c.mean);
                    }
                    None => {
                        let _ = write!(out, "{sep}{:.2}", c.mean);
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Groups reports into rows by method name, keeping first-seen order.
pub fn table_from_reports(reports: &[EvaluationReport]) -> ComparisonTable {
    let mut order: Vec<&str> = Vec::new();
    for r in reports {
        if !order.contains(&r.method.as_str()) {
            order.push(&r.method);
        }
    }
    let rows = order
        .into_iter()
        .map(|method| {
            let group: Vec<&EvaluationReport> =
                reports.iter().filter(|r| r.method == method).collect();
            let cells = TABLE_METRICS
                .iter()
                .map(|m| {
                    let values: Vec<f64> = group.iter().filter_map(|r| r.metric(m)).collect();
                    let (mean, std) = mean_std(&values);
                    Cell { mean, std }
                })
                .collect();
            ComparisonRow {
                method: method.to_string(),
                repeats: group.len(),
                cells,
            }
        })
        .collect();
    ComparisonTable { rows }
}

/// Joins the reports of several runs into one table. All runs must share a
/// data signature (dataset, architecture, forget classes, seeds). A method
/// appearing in more than one run is labelled `run-name/method`.
pub fn compare_methods(runs: &[RunManifest]) -> Result<ComparisonTable> {
    let Some(first) = runs.first() else {
        return Ok(ComparisonTable::default());
    };
    if let Some(other) = runs
        .iter()
        .find(|r| r.data_signature != first.data_signature)
    {
        return Err(PteError::Comparison(format!(
            "runs `{}` and `{}` use different datasets, architectures, forget classes or seeds",
            first.name, other.name
        )));
    }
    let per_run: Vec<Vec<EvaluationReport>> = runs
        .iter()
        .map(RunManifest::reports)
        .collect::<Result<_>>()?;
    let mut all = Vec::new();
    for (run, reports) in runs.iter().zip(&per_run) {
        for r in reports {
            let clash = runs
                .iter()
                .zip(&per_run)
                .any(|(o, rs)| !std::ptr::eq(o, run) && rs.iter().any(|x| x.method == r.method));
            let mut r = r.clone();
            if clash {
                r.method = format!("{}/{}", run.name, r.method);
            }
            all.push(r);
        }
    }
    Ok(table_from_reports(&all))
}
