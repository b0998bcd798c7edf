use std::collections::BTreeMap;
use std::fmt::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::runner::RunRecord;
use crate::error::{Error, Result};
use crate::metrics::{m_first, m_seen};
use crate::strider::Strategy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportStyle {
    /// `task,step,metric,value` rows for every matrix entry.
    Matrix,
    /// `metric,m_seen,m_first` rows, scaled by 100.
    Aggregate,
    /// Aggregates plus the final model's per-task scores, as aligned text.
    Table,
}

impl FromStr for ReportStyle {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "matrix" | "csv" => Ok(ReportStyle::Matrix),
            "aggregate" => Ok(ReportStyle::Aggregate),
            "table" => Ok(ReportStyle::Table),
            other => Err(Error::usage(format!("unknown report style {other:?}"))),
        }
    }
}

fn check(record: &RunRecord) -> Result<()> {
    if record.metrics.is_empty() || record.num_tasks() == 0 {
        return Err(Error::usage("record holds no metrics"));
    }
    if let Some(m) = record.metrics.iter().find(|m| !m.is_complete()) {
        return Err(Error::usage(format!("metric {} is incomplete", m.metric)));
    }
    Ok(())
}

/// Renders a record. Output depends only on the metric values.
pub fn report(record: &RunRecord, style: ReportStyle) -> Result<String> {
    check(record)?;
    let mut out = String::new();
    match style {
        ReportStyle::Matrix => {
            out.push_str("task,step,metric,value\n");
            for m in &record.metrics {
                for (t, i, v) in m.entries() {
                    writeln!(out, "{t},{i},{},{v:.6}", m.metric).unwrap();
                }
            }
        }
        ReportStyle::Aggregate => {
            out.push_str("metric,m_seen,m_first\n");
            for m in &record.metrics {
                let s = m_seen(m)?.mean * 100.0;
                let f = m_first(m)?.mean * 100.0;
                writeln!(out, "{},{s:.2},{f:.2}", m.metric).unwrap();
            }
        }
        ReportStyle::Table => {
            writeln!(out, "strategy {} seed {}", record.strategy, record.seed).unwrap();
            writeln!(out, "{:<12} {:>8} {:>8}", "metric", "M_seen", "M_first").unwrap();
            for m in &record.metrics {
                let s = m_seen(m)?.mean * 100.0;
                let f = m_first(m)?.mean * 100.0;
                writeln!(out, "{:<12} {s:>8.2} {f:>8.2}", m.metric).unwrap();
            }
            let n = record.num_tasks();
            writeln!(out, "\nafter task {n}").unwrap();
            write!(out, "{:<24}", "task").unwrap();
            for m in &record.metrics {
                write!(out, " {:>11}", m.metric).unwrap();
            }
            out.push('\n');
            for (t, name) in record.task_names.iter().enumerate() {
                write!(out, "{:<24}", name).unwrap();
                for m in &record.metrics {
                    write!(out, " {:>11.2}", m.get(t + 1, n).unwrap_or(0.0) * 100.0).unwrap();
                }
                out.push('\n');
            }
        }
    }
    Ok(out)
}

/// Mean and sample standard deviation of an aggregate over runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub strategy: Strategy,
    pub metric: String,
    pub runs: usize,
    pub m_seen_mean: f64,
    pub m_seen_std: f64,
    pub m_first_mean: f64,
    pub m_first_std: f64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups records by strategy and summarizes each metric across seeds.
/// Values are scaled by 100.
pub fn summarize(records: &[RunRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::usage("no records to summarize"));
    }
    let mut groups: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        check(r)?;
        groups.entry(r.strategy.name()).or_default().push(r);
    }
    let mut rows = Vec::new();
    for runs in groups.values() {
        for (k, m) in runs[0].metrics.iter().enumerate() {
            let mut seen = Vec::new();
            let mut first = Vec::new();
            for r in runs {
                let mk = r
                    .metrics
                    .get(k)
                    .filter(|x| x.metric == m.metric)
                    .ok_or_else(|| Error::usage("records disagree on metric order"))?;
                seen.push(m_seen(mk)?.mean * 100.0);
                first.push(m_first(mk)?.mean * 100.0);
            }
            let (sm, ss) = mean_std(&seen);
            let (fm, fs) = mean_std(&first);
            rows.push(SummaryRow {
                strategy: runs[0].strategy,
                metric: m.metric.clone(),
                runs: runs.len(),
                m_seen_mean: sm,
                m_seen_std: ss,
                m_first_mean: fm,
                m_first_std: fs,
            });
        }
    }
    Ok(rows)
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("strategy,metric,runs,m_seen_mean,m_seen_std,m_first_mean,m_first_std\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.2},{:.2},{:.2},{:.2}",
            r.strategy, r.metric, r.runs, r.m_seen_mean, r.m_seen_std, r.m_first_mean, r.m_first_std
        )
        .unwrap();
    }
    out
}
