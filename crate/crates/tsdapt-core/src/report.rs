//! Aggregation of run results into per-method tables.
//!
//! Cross-person cells group runs by source count: the cell mean is the
//! mean over all runs, and the error is the per-target standard
//! deviation across that target's source sets, averaged across targets.
//! Cross-time cells group by direction and week gap and report the mean
//! and standard deviation across runs. Standard deviations are sample
//! deviations (divisor n - 1); single-run cells report 0.

use crate::experiment::{ProtocolMode, RunResult, TimeDirection};
use crate::losses::Method;
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot aggregate an empty result set")]
    Empty,
    #[error("cross-time runs need gap and direction tags; run {0} has none")]
    MissingTag(String),
}

/// Which scalar of each run a report aggregates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportMetric {
    Auc,
    Accuracy,
}

impl ReportMetric {
    pub fn name(&self) -> &'static str {
        match self {
            ReportMetric::Auc => "auc",
            ReportMetric::Accuracy => "accuracy",
        }
    }

    fn of(&self, run: &RunResult) -> f64 {
        match self {
            ReportMetric::Auc => run.target_auc,
            ReportMetric::Accuracy => run.target_accuracy,
        }
    }
}

/// Table column: number of sources (cross-person) or direction and gap
/// (cross-time). Ordering matches the table layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum ReportGroup {
    Sources(usize),
    TimeGap { direction: TimeDirection, gap: u32 },
}

impl std::fmt::Display for ReportGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReportGroup::Sources(n) => write!(f, "n={n}"),
            ReportGroup::TimeGap { direction, gap } => {
                let d = match direction {
                    TimeDirection::Forward => "forward",
                    TimeDirection::Backward => "backward",
                };
                write!(f, "{d} gap={gap}")
            }
        }
    }
}

/// Mean, error bar, and run count of one table cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CellStats {
    pub mean: f64,
    pub error: f64,
    pub runs: usize,
}

/// Aggregated table over `(method, group)` cells.
#[derive(Clone, Debug, Serialize)]
pub struct MetricReport {
    pub mode: ProtocolMode,
    pub metric: ReportMetric,
    pub cells: BTreeMap<(Method, ReportGroup), CellStats>,
}

fn sample_std(values: &[f64], mean: f64) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

/// Aggregates runs into a [`MetricReport`].
pub fn aggregate_report(results: &[RunResult], metric: ReportMetric) -> Result<MetricReport, ReportError> {
    if results.is_empty() {
        return Err(ReportError::Empty);
    }
    // deterministic regardless of input order
    let mut runs: Vec<&RunResult> = results.iter().collect();
    runs.sort_by_key(|r| r.config.run_id());

    let mode = runs
        .iter()
        .find_map(|r| r.config.tag.as_ref().map(|t| t.mode))
        .unwrap_or(ProtocolMode::CrossPerson);

    let mut grouped: BTreeMap<(Method, ReportGroup), Vec<&RunResult>> = BTreeMap::new();
    for run in &runs {
        let group = match mode {
            ProtocolMode::CrossPerson => ReportGroup::Sources(run.config.sources.len()),
            ProtocolMode::CrossTime => {
                let tag = run
                    .config
                    .tag
                    .as_ref()
                    .filter(|t| t.gap.is_some() && t.direction.is_some())
                    .ok_or_else(|| ReportError::MissingTag(run.config.run_id()))?;
                ReportGroup::TimeGap {
                    direction: tag.direction.unwrap(),
                    gap: tag.gap.unwrap(),
                }
            }
        };
        grouped.entry((run.config.method, group)).or_default().push(run);
    }

    let mut cells = BTreeMap::new();
    for ((method, group), cell_runs) in grouped {
        let values: Vec<f64> = cell_runs.iter().map(|r| metric.of(r)).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let error = match mode {
            ProtocolMode::CrossPerson => {
                // per-target std across source sets, averaged over targets
                let mut by_target: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
                for r in &cell_runs {
                    by_target.entry(r.config.target.as_str()).or_default().push(metric.of(r));
                }
                let stds: Vec<f64> = by_target
                    .values()
                    .map(|vs| {
                        let m = vs.iter().sum::<f64>() / vs.len() as f64;
                        sample_std(vs, m)
                    })
                    .collect();
                stds.iter().sum::<f64>() / stds.len() as f64
            }
            ProtocolMode::CrossTime => sample_std(&values, mean),
        };
        cells.insert(
            (method, group),
            CellStats {
                mean,
                error,
                runs: values.len(),
            },
        );
    }
    Ok(MetricReport {
        mode,
        metric,
        cells,
    })
}

impl MetricReport {
    fn groups(&self) -> Vec<ReportGroup> {
        let mut groups: Vec<ReportGroup> = self.cells.keys().map(|(_, g)| *g).collect();
        groups.sort();
        groups.dedup();
        groups
    }

    fn methods(&self) -> Vec<Method> {
        let mut methods: Vec<Method> = self.cells.keys().map(|(m, _)| *m).collect();
        methods.sort();
        methods.dedup();
        methods
    }

    /// `method,group,mean,error,runs` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,group,mean,error,runs\n");
        for ((method, group), cell) in &self.cells {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{}\n",
                method, group, cell.mean, cell.error, cell.runs
            ));
        }
        out
    }

    /// Aligned text table: methods as rows, groups as columns.
    pub fn to_table(&self) -> String {
        let groups = self.groups();
        let methods = self.methods();
        let mode = match self.mode {
            ProtocolMode::CrossPerson => "cross-person",
            ProtocolMode::CrossTime => "cross-time",
        };

        let mut header: Vec<String> = vec![format!("{mode} ({})", self.metric.name())];
        header.extend(groups.iter().map(|g| g.to_string()));
        let mut rows: Vec<Vec<String>> = vec![header];
        for method in &methods {
            let mut row = vec![method.to_string()];
            for group in &groups {
                row.push(match self.cells.get(&(*method, *group)) {
                    Some(c) => format!("{:.3} \u{b1} {:.3}", c.mean, c.error),
                    None => "-".to_string(),
                });
            }
            rows.push(row);
        }

        let columns = rows[0].len();
        let widths: Vec<usize> = (0..columns)
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in rows.iter().enumerate() {
            let line: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, cell)| format!("{:<width$}", cell, width = widths[c]))
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                let total: usize = widths.iter().sum::<usize>() + 2 * (columns - 1);
                out.push_str(&"-".repeat(total));
                out.push('\n');
            }
        }
        out
    }
}
