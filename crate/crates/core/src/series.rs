//! Per-window concordance output and its CSV form.
//!
//! Columns: `index_date, n_exams, skipped, mmc0, mmcw, auroc, error`, then
//! `raw:<metric_id>` for every metric, then `std:<metric_id>` for every
//! metric. Absent values are empty cells.

use std::io::{Read, Write};

use chrono::NaiveDate;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("malformed series: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRow {
    pub index_date: NaiveDate,
    pub n_exams: usize,
    pub skipped: bool,
    pub raw: Vec<Option<f64>>,
    pub standardized: Vec<Option<f64>>,
    pub mmc0: Option<f64>,
    pub mmcw: Option<f64>,
    pub auroc: Option<f64>,
    pub error: Option<String>,
}

impl SeriesRow {
    pub fn empty(index_date: NaiveDate, n_exams: usize) -> Self {
        Self {
            index_date,
            n_exams,
            skipped: false,
            raw: Vec::new(),
            standardized: Vec::new(),
            mmc0: None,
            mmcw: None,
            auroc: None,
            error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcordanceSeries {
    pub metric_ids: Vec<String>,
    pub rows: Vec<SeriesRow>,
}

const FIXED: [&str; 7] = [
    "index_date",
    "n_exams",
    "skipped",
    "mmc0",
    "mmcw",
    "auroc",
    "error",
];

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn parse_opt(s: &str, what: &str) -> Result<Option<f64>, SeriesError> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| SeriesError::Malformed(format!("bad {what} value `{s}`")))
}

impl ConcordanceSeries {
    pub fn new(metric_ids: Vec<String>, rows: Vec<SeriesRow>) -> Self {
        Self { metric_ids, rows }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn metric_index(&self, metric_id: &str) -> Option<usize> {
        self.metric_ids.iter().position(|m| m == metric_id)
    }

    /// Rows that were scored (not skipped, no error).
    pub fn scored(&self) -> impl Iterator<Item = &SeriesRow> {
        self.rows.iter().filter(|r| !r.skipped && r.error.is_none())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SeriesError> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = FIXED
            .iter()
            .map(|s| s.to_string())
            .chain(self.metric_ids.iter().map(|m| format!("raw:{m}")))
            .chain(self.metric_ids.iter().map(|m| format!("std:{m}")))
            .collect();
        w.write_record(&header)?;
        let k = self.metric_ids.len();
        for row in &self.rows {
            let mut rec = vec![
                row.index_date.to_string(),
                row.n_exams.to_string(),
                row.skipped.to_string(),
                cell(row.mmc0),
                cell(row.mmcw),
                cell(row.auroc),
                row.error.clone().unwrap_or_default(),
            ];
            for i in 0..k {
                rec.push(cell(row.raw.get(i).copied().flatten()));
            }
            for i in 0..k {
                rec.push(cell(row.standardized.get(i).copied().flatten()));
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, SeriesError> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.len() < FIXED.len() || header.iter().zip(FIXED).any(|(a, b)| a != b) {
            return Err(SeriesError::Malformed("unexpected header".into()));
        }
        let rest: Vec<&str> = header.iter().skip(FIXED.len()).collect();
        if !rest.len().is_multiple_of(2) {
            return Err(SeriesError::Malformed("unpaired metric columns".into()));
        }
        let k = rest.len() / 2;
        let metric_ids = rest[..k]
            .iter()
            .map(|h| {
                h.strip_prefix("raw:")
                    .map(str::to_string)
                    .ok_or_else(|| SeriesError::Malformed(format!("bad column `{h}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let index_date = rec[0]
                .parse()
                .map_err(|_| SeriesError::Malformed(format!("bad date `{}`", &rec[0])))?;
            let n_exams = rec[1]
                .parse()
                .map_err(|_| SeriesError::Malformed(format!("bad n_exams `{}`", &rec[1])))?;
            let skipped = rec[2]
                .parse()
                .map_err(|_| SeriesError::Malformed(format!("bad skipped `{}`", &rec[2])))?;
            let values = |offset: usize| -> Result<Vec<Option<f64>>, SeriesError> {
                (0..k)
                    .map(|i| parse_opt(&rec[FIXED.len() + offset + i], "metric"))
                    .collect()
            };
            let raw = values(0)?;
            let standardized = values(k)?;
            let has_values = raw.iter().any(Option::is_some);
            rows.push(SeriesRow {
                index_date,
                n_exams,
                skipped,
                raw: if has_values { raw } else { Vec::new() },
                standardized: if has_values { standardized } else { Vec::new() },
                mmc0: parse_opt(&rec[3], "mmc0")?,
                mmcw: parse_opt(&rec[4], "mmcw")?,
                auroc: parse_opt(&rec[5], "auroc")?,
                error: (!rec[6].is_empty()).then(|| rec[6].to_string()),
            });
        }
        Ok(Self { metric_ids, rows })
    }
}
