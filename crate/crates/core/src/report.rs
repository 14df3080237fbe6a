//! Segment summaries of a concordance series.
//!
//! Change points split the series into segments. A window whose range
//! straddles a change point belongs to no segment: with window length `l`,
//! the segment after change point `c` starts at index date `c + l - 1`.

use std::fmt::Write as _;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::series::{ConcordanceSeries, SeriesRow};

pub const TOP_METRICS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDeviation {
    pub metric_id: String,
    pub mean_standardized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub name: String,
    /// First and last index date covered, inclusive. `None` when open.
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
    pub windows: usize,
    pub mmcw_mean: Option<f64>,
    pub mmc0_mean: Option<f64>,
    pub auroc_mean: Option<f64>,
    pub top_metrics: Vec<MetricDeviation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentDelta {
    pub from: String,
    pub to: String,
    pub mmcw: Option<f64>,
    pub mmc0: Option<f64>,
    pub auroc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub change_points: Vec<NaiveDate>,
    pub window_days: u32,
    pub total_windows: usize,
    pub skipped_windows: usize,
    pub failed_windows: usize,
    pub segments: Vec<SegmentSummary>,
    pub deltas: Vec<SegmentDelta>,
    pub notice: Option<String>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn segment_name(i: usize) -> String {
    match i {
        0 => "pre_a".into(),
        1 => "post_a".into(),
        2 => "post_b".into(),
        k => format!("post_{k}"),
    }
}

fn delta(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(b? - a?)
}

/// Which segment an index date falls in, if any.
pub fn segment_of(date: NaiveDate, change_points: &[NaiveDate], window_days: u32) -> Option<usize> {
    let settle = Days::new(u64::from(window_days.saturating_sub(1)));
    let mut seg = 0;
    for (i, &c) in change_points.iter().enumerate() {
        if date >= c + settle {
            seg = i + 1;
        } else if date >= c {
            return None;
        }
    }
    Some(seg)
}

fn summarize_rows(name: String, rows: &[&SeriesRow], metric_ids: &[String]) -> SegmentSummary {
    let mut top: Vec<MetricDeviation> = metric_ids
        .iter()
        .enumerate()
        .filter_map(|(i, id)| {
            mean(
                rows.iter()
                    .filter_map(|r| r.standardized.get(i).copied().flatten()),
            )
            .map(|m| MetricDeviation {
                metric_id: id.clone(),
                mean_standardized: m,
            })
        })
        .collect();
    top.sort_by(|a, b| {
        b.mean_standardized
            .abs()
            .total_cmp(&a.mean_standardized.abs())
            .then_with(|| a.metric_id.cmp(&b.metric_id))
    });
    top.truncate(TOP_METRICS);
    SegmentSummary {
        name,
        from: rows.first().map(|r| r.index_date),
        to: rows.last().map(|r| r.index_date),
        windows: rows.len(),
        mmcw_mean: mean(rows.iter().filter_map(|r| r.mmcw)),
        mmc0_mean: mean(rows.iter().filter_map(|r| r.mmc0)),
        auroc_mean: mean(rows.iter().filter_map(|r| r.auroc)),
        top_metrics: top,
    }
}

/// Summarizes scored windows per segment. `change_points` must be sorted.
pub fn summarize(
    series: &ConcordanceSeries,
    change_points: &[NaiveDate],
    window_days: u32,
) -> Report {
    let total_windows = series.rows.len();
    let skipped_windows = series.rows.iter().filter(|r| r.skipped).count();
    let failed_windows = series.rows.iter().filter(|r| r.error.is_some()).count();
    let mut buckets: Vec<Vec<&SeriesRow>> = vec![Vec::new(); change_points.len() + 1];
    for row in series.scored() {
        if let Some(s) = segment_of(row.index_date, change_points, window_days) {
            buckets[s].push(row);
        }
    }
    let segments: Vec<SegmentSummary> = buckets
        .iter()
        .enumerate()
        .map(|(i, rows)| summarize_rows(segment_name(i), rows, &series.metric_ids))
        .collect();
    let deltas = segments
        .windows(2)
        .map(|w| SegmentDelta {
            from: w[0].name.clone(),
            to: w[1].name.clone(),
            mmcw: delta(w[0].mmcw_mean, w[1].mmcw_mean),
            mmc0: delta(w[0].mmc0_mean, w[1].mmc0_mean),
            auroc: delta(w[0].auroc_mean, w[1].auroc_mean),
        })
        .collect();
    let notice = if series.is_empty() {
        Some("series is empty: no windows to summarize".to_string())
    } else if series.scored().next().is_none() {
        Some("no scored windows: every window was skipped or failed".to_string())
    } else {
        None
    };
    Report {
        change_points: change_points.to_vec(),
        window_days,
        total_windows,
        skipped_windows,
        failed_windows,
        segments,
        deltas,
        notice,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

impl Report {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(n) = &self.notice {
            let _ = writeln!(out, "NOTICE: {n}");
        }
        let _ = writeln!(
            out,
            "windows: {} total, {} skipped, {} failed",
            self.total_windows, self.skipped_windows, self.failed_windows
        );
        if !self.change_points.is_empty() {
            let cps: Vec<String> = self.change_points.iter().map(|d| d.to_string()).collect();
            let _ = writeln!(out, "change points: {}", cps.join(", "));
        }
        for s in &self.segments {
            let range = match (s.from, s.to) {
                (Some(a), Some(b)) => format!("{a}..{b}"),
                _ => "empty".into(),
            };
            let _ = writeln!(
                out,
                "\n[{}] {} ({} windows)\n  mmcw {}  mmc0 {}  auroc {}",
                s.name,
                range,
                s.windows,
                fmt_opt(s.mmcw_mean),
                fmt_opt(s.mmc0_mean),
                fmt_opt(s.auroc_mean)
            );
            for m in &s.top_metrics {
                let _ = writeln!(out, "    {:<28} {:+.3}", m.metric_id, m.mean_standardized);
            }
        }
        for d in &self.deltas {
            let _ = writeln!(
                out,
                "\ndelta {} -> {}: mmcw {}  mmc0 {}  auroc {}",
                d.from,
                d.to,
                fmt_opt(d.mmcw),
                fmt_opt(d.mmc0),
                fmt_opt(d.auroc)
            );
        }
        out
    }
}
