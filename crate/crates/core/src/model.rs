//! Shared data model: feature schema, exam records, windows and metric identity.
//!
//! Exam streams are line-delimited JSON, one [`ExamRecord`] per line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Category that stands in for a missing categorical value, so that
/// missingness is itself a distribution that can drift.
pub const MISSING_CATEGORY: &str = "<missing>";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("schema violation in `{field}`: {reason}")]
    SchemaViolation { field: String, reason: String },
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("invalid window spec: {0}")]
    InvalidWindowSpec(String),
    #[error("empty input")]
    EmptyInput,
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn violation(field: impl Into<String>, reason: impl Into<String>) -> ModelError {
    ModelError::SchemaViolation {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoricalFeature {
    pub name: String,
    pub categories: Vec<String>,
    #[serde(default)]
    pub allow_missing: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContinuousFeature {
    pub name: String,
    #[serde(default)]
    pub unit: String,
}

/// The three input groups monitored for drift: metadata features, the
/// appearance latent and the per-label soft predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub categorical_features: Vec<CategoricalFeature>,
    pub continuous_features: Vec<ContinuousFeature>,
    pub latent_dim: usize,
    pub labels: Vec<String>,
}

impl FeatureSchema {
    pub fn new(
        categorical_features: Vec<CategoricalFeature>,
        continuous_features: Vec<ContinuousFeature>,
        latent_dim: usize,
        labels: Vec<String>,
    ) -> Result<Self, ModelError> {
        let schema = Self {
            categorical_features,
            continuous_features,
            latent_dim,
            labels,
        };
        schema.check()?;
        Ok(schema)
    }

    /// Checks the schema invariants. Deserialized schemas should be run
    /// through this before use.
    pub fn check(&self) -> Result<(), ModelError> {
        if self.latent_dim == 0 {
            return Err(ModelError::InvalidSchema("latent_dim must be >= 1".into()));
        }
        if self.labels.is_empty() {
            return Err(ModelError::InvalidSchema("label list is empty".into()));
        }
        let mut seen = BTreeSet::new();
        let names = self
            .categorical_features
            .iter()
            .map(|f| &f.name)
            .chain(self.continuous_features.iter().map(|f| &f.name));
        for name in names {
            if !seen.insert(name.as_str()) {
                return Err(ModelError::InvalidSchema(format!(
                    "duplicate feature name `{name}`"
                )));
            }
        }
        let mut label_set = BTreeSet::new();
        for label in &self.labels {
            if !label_set.insert(label.as_str()) {
                return Err(ModelError::InvalidSchema(format!(
                    "duplicate label `{label}`"
                )));
            }
        }
        for feature in &self.categorical_features {
            if feature.categories.is_empty() {
                return Err(ModelError::InvalidSchema(format!(
                    "categorical feature `{}` has no categories",
                    feature.name
                )));
            }
            if feature.categories.iter().any(|c| c == MISSING_CATEGORY) {
                return Err(ModelError::InvalidSchema(format!(
                    "`{MISSING_CATEGORY}` is reserved (feature `{}`)",
                    feature.name
                )));
            }
        }
        Ok(())
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn categorical(&self, name: &str) -> Option<&CategoricalFeature> {
        self.categorical_features.iter().find(|f| f.name == name)
    }
}

/// One imaging exam as seen by the monitor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamRecord {
    pub exam_id: String,
    pub timestamp: NaiveDateTime,
    #[serde(default)]
    pub categorical: BTreeMap<String, Option<String>>,
    #[serde(default)]
    pub continuous: BTreeMap<String, Option<f64>>,
    pub latent: Vec<f64>,
    pub predictions: Vec<f64>,
    /// Per-label annotation; `None` entries are labels nobody annotated.
    #[serde(default)]
    pub ground_truth: Option<Vec<Option<bool>>>,
}

impl ExamRecord {
    pub fn date(&self) -> NaiveDate {
        self.timestamp.date()
    }

    /// Category for `feature`, with absent and null values mapped to
    /// [`MISSING_CATEGORY`].
    pub fn category(&self, feature: &str) -> &str {
        match self.categorical.get(feature) {
            Some(Some(v)) => v.as_str(),
            _ => MISSING_CATEGORY,
        }
    }

    pub fn continuous_value(&self, feature: &str) -> Option<f64> {
        self.continuous.get(feature).copied().flatten()
    }

    pub fn label(&self, index: usize) -> Option<bool> {
        self.ground_truth
            .as_ref()
            .and_then(|gt| gt.get(index).copied().flatten())
    }

    pub fn has_ground_truth(&self) -> bool {
        self.ground_truth
            .as_ref()
            .is_some_and(|gt| gt.iter().any(Option::is_some))
    }
}

/// Returns the record if it satisfies `schema`.
pub fn validate_record(
    record: ExamRecord,
    schema: &FeatureSchema,
) -> Result<ExamRecord, ModelError> {
    for key in record.categorical.keys() {
        if schema.categorical(key).is_none() {
            return Err(violation(format!("categorical.{key}"), "unknown feature"));
        }
    }
    for feature in &schema.categorical_features {
        match record.categorical.get(&feature.name) {
            Some(Some(value)) => {
                if !feature.categories.iter().any(|c| c == value) {
                    return Err(violation(
                        format!("categorical.{}", feature.name),
                        format!("unknown category `{value}`"),
                    ));
                }
            }
            _ if !feature.allow_missing => {
                return Err(violation(
                    format!("categorical.{}", feature.name),
                    "missing value not allowed",
                ));
            }
            _ => {}
        }
    }
    for (key, value) in &record.continuous {
        if !schema.continuous_features.iter().any(|f| &f.name == key) {
            return Err(violation(format!("continuous.{key}"), "unknown feature"));
        }
        if let Some(v) = value {
            if !v.is_finite() {
                return Err(violation(format!("continuous.{key}"), "non-finite value"));
            }
        }
    }
    if record.latent.len() != schema.latent_dim {
        return Err(violation(
            "latent",
            format!(
                "length {} != latent_dim {}",
                record.latent.len(),
                schema.latent_dim
            ),
        ));
    }
    if record.latent.iter().any(|v| !v.is_finite()) {
        return Err(violation("latent", "non-finite value"));
    }
    if record.predictions.len() != schema.labels.len() {
        return Err(violation(
            "predictions",
            format!(
                "length {} != label count {}",
                record.predictions.len(),
                schema.labels.len()
            ),
        ));
    }
    if record.predictions.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(violation("predictions", "out of range [0, 1]"));
    }
    if let Some(gt) = &record.ground_truth {
        if gt.len() != record.predictions.len() {
            return Err(violation(
                "ground_truth",
                format!(
                    "length {} != predictions length {}",
                    gt.len(),
                    record.predictions.len()
                ),
            ));
        }
    }
    Ok(record)
}

/// SHA-256 over the canonical JSON serialization of each record, in the
/// given order.
pub fn fingerprint(exams: &[ExamRecord]) -> Result<String, ModelError> {
    if exams.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    let mut hasher = Sha256::new();
    for exam in exams {
        hasher.update(serde_json::to_vec(exam)?);
        hasher.update(b"\n");
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

pub fn read_stream<R: BufRead>(reader: R) -> Result<Vec<ExamRecord>, ModelError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| ModelError::Parse {
            line: i + 1,
            source,
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_stream<W: Write>(mut writer: W, exams: &[ExamRecord]) -> Result<(), ModelError> {
    for exam in exams {
        serde_json::to_writer(&mut writer, exam)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Rolling window geometry, in whole calendar days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub length_days: u32,
    pub stride_days: u32,
    pub min_exams: usize,
}

impl WindowSpec {
    pub fn new(length_days: u32, stride_days: u32, min_exams: usize) -> Result<Self, ModelError> {
        if length_days == 0 || stride_days == 0 {
            return Err(ModelError::InvalidWindowSpec(
                "length and stride must be >= 1 day".into(),
            ));
        }
        Ok(Self {
            length_days,
            stride_days,
            min_exams,
        })
    }

    /// First date covered by the window indexed at `index_date`.
    pub fn first_day(&self, index_date: NaiveDate) -> NaiveDate {
        index_date - chrono::Days::new(u64::from(self.length_days) - 1)
    }

    pub fn contains(&self, index_date: NaiveDate, date: NaiveDate) -> bool {
        date <= index_date && date >= self.first_day(index_date)
    }
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            length_days: 30,
            stride_days: 1,
            min_exams: 150,
        }
    }
}

/// Exams falling in the window `(index_date - length, index_date]`.
#[derive(Debug, Clone)]
pub struct DetectionWindow<'a> {
    pub index_date: NaiveDate,
    pub exams: Vec<&'a ExamRecord>,
}

impl<'a> DetectionWindow<'a> {
    pub fn new(index_date: NaiveDate, exams: Vec<&'a ExamRecord>) -> Self {
        Self { index_date, exams }
    }

    pub fn len(&self) -> usize {
        self.exams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exams.is_empty()
    }

    pub fn is_skipped(&self, spec: &WindowSpec) -> bool {
        self.exams.len() < spec.min_exams
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    CategoricalChi2,
    ContinuousKs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceGroup {
    Metadata,
    Latent,
    Prediction,
}

impl fmt::Display for SourceGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Metadata => "metadata",
            Self::Latent => "latent",
            Self::Prediction => "prediction",
        })
    }
}

/// The record field a metric reads.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricField {
    Categorical(String),
    Continuous(String),
    Latent(usize),
    Prediction(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetricDescriptor {
    pub metric_id: String,
    pub kind: MetricKind,
    pub source_group: SourceGroup,
    pub field: MetricField,
}

impl MetricDescriptor {
    pub fn categorical(name: &str) -> Self {
        Self {
            metric_id: format!("cat:{name}"),
            kind: MetricKind::CategoricalChi2,
            source_group: SourceGroup::Metadata,
            field: MetricField::Categorical(name.to_string()),
        }
    }

    pub fn continuous(name: &str) -> Self {
        Self {
            metric_id: format!("cont:{name}"),
            kind: MetricKind::ContinuousKs,
            source_group: SourceGroup::Metadata,
            field: MetricField::Continuous(name.to_string()),
        }
    }

    pub fn latent(index: usize) -> Self {
        Self {
            metric_id: format!("latent:z_{index}"),
            kind: MetricKind::ContinuousKs,
            source_group: SourceGroup::Latent,
            field: MetricField::Latent(index),
        }
    }

    pub fn prediction(index: usize, label: &str) -> Self {
        Self {
            metric_id: format!("pred:{label}"),
            kind: MetricKind::ContinuousKs,
            source_group: SourceGroup::Prediction,
            field: MetricField::Prediction(index),
        }
    }

    /// Continuous value this metric reads from `exam`, `None` when missing
    /// or when the metric is categorical.
    pub fn continuous_value(&self, exam: &ExamRecord) -> Option<f64> {
        match &self.field {
            MetricField::Continuous(name) => exam.continuous_value(name),
            MetricField::Latent(i) => exam.latent.get(*i).copied(),
            MetricField::Prediction(i) => exam.predictions.get(*i).copied(),
            MetricField::Categorical(_) => None,
        }
    }

    /// Category this metric reads from `exam`; only meaningful for
    /// categorical metrics.
    pub fn category<'e>(&self, exam: &'e ExamRecord) -> &'e str {
        match &self.field {
            MetricField::Categorical(name) => exam.category(name),
            _ => MISSING_CATEGORY,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(
            vec![CategoricalFeature {
                name: "view_position".into(),
                categories: vec!["PA".into(), "AP".into(), "LATERAL".into()],
                allow_missing: true,
            }],
            vec![ContinuousFeature {
                name: "age".into(),
                unit: "years".into(),
            }],
            2,
            vec!["a".into(), "b".into()],
        )
        .unwrap()
    }

    fn record() -> ExamRecord {
        ExamRecord {
            exam_id: "e1".into(),
            timestamp: NaiveDate::from_ymd_opt(2014, 1, 1)
                .unwrap()
                .and_hms_opt(9, 30, 0)
                .unwrap(),
            categorical: [("view_position".to_string(), Some("PA".to_string()))].into(),
            continuous: [("age".to_string(), Some(63.5))].into(),
            latent: vec![0.1, -0.2],
            predictions: vec![0.3, 0.9],
            ground_truth: Some(vec![Some(false), Some(true)]),
        }
    }

    #[test]
    fn valid_record_passes_through() {
        let r = record();
        assert_eq!(validate_record(r.clone(), &schema()).unwrap(), r);
    }

    #[test]
    fn prediction_out_of_range_is_rejected() {
        let mut r = record();
        r.predictions[1] = 1.3;
        match validate_record(r, &schema()) {
            Err(ModelError::SchemaViolation { field, .. }) => assert_eq!(field, "predictions"),
            other => panic!("expected violation, got {other:?}"),
        }
    }

    #[test]
    fn unknown_category_is_rejected() {
        let mut r = record();
        r.categorical
            .insert("view_position".into(), Some("XX".into()));
        match validate_record(r, &schema()) {
            Err(ModelError::SchemaViolation { field, reason }) => {
                assert_eq!(field, "categorical.view_position");
                assert!(reason.contains("XX"));
            }
            other => panic!("expected violation, got {other:?}"),
        }
    }

    #[test]
    fn missing_category_respects_allow_flag() {
        let mut r = record();
        r.categorical.insert("view_position".into(), None);
        assert!(validate_record(r.clone(), &schema()).is_ok());
        assert_eq!(r.category("view_position"), MISSING_CATEGORY);

        let mut strict = schema();
        strict.categorical_features[0].allow_missing = false;
        assert!(validate_record(r, &strict).is_err());
    }

    #[test]
    fn latent_and_ground_truth_lengths_checked() {
        let mut r = record();
        r.latent.push(0.0);
        assert!(validate_record(r, &schema()).is_err());
        let mut r = record();
        r.ground_truth = Some(vec![Some(true)]);
        assert!(validate_record(r, &schema()).is_err());
    }

    #[test]
    fn schema_invariants() {
        let dup = FeatureSchema::new(
            vec![CategoricalFeature {
                name: "x".into(),
                categories: vec!["a".into()],
                allow_missing: false,
            }],
            vec![ContinuousFeature {
                name: "x".into(),
                unit: String::new(),
            }],
            1,
            vec!["l".into()],
        );
        assert!(matches!(dup, Err(ModelError::InvalidSchema(_))));
        assert!(FeatureSchema::new(vec![], vec![], 0, vec!["l".into()]).is_err());
        assert!(FeatureSchema::new(vec![], vec![], 1, vec![]).is_err());
    }

    #[test]
    fn fingerprint_is_order_and_content_sensitive() {
        let a = record();
        let mut b = record();
        b.exam_id = "e2".into();
        let list = vec![a.clone(), b.clone()];
        let h1 = fingerprint(&list).unwrap();
        assert_eq!(h1, fingerprint(&list).unwrap());
        assert_ne!(h1, fingerprint(&[b.clone(), a.clone()]).unwrap());

        let mut shifted = a.clone();
        shifted.timestamp += chrono::Duration::days(1);
        assert_ne!(h1, fingerprint(&[shifted, b]).unwrap());
        assert!(matches!(fingerprint(&[]), Err(ModelError::EmptyInput)));
    }

    #[test]
    fn stream_round_trip() {
        let mut r = record();
        r.continuous.insert("age".into(), None);
        r.ground_truth = Some(vec![None, Some(true)]);
        let mut buf = Vec::new();
        write_stream(&mut buf, &[record(), r.clone()]).unwrap();
        let back = read_stream(&buf[..]).unwrap();
        assert_eq!(back, vec![record(), r]);
    }

    #[test]
    fn window_interval_is_half_open_on_the_left() {
        let spec = WindowSpec::new(30, 1, 0).unwrap();
        let t = NaiveDate::from_ymd_opt(2013, 12, 31).unwrap();
        assert!(spec.contains(t, t));
        assert!(spec.contains(t, NaiveDate::from_ymd_opt(2013, 12, 2).unwrap()));
        assert!(!spec.contains(t, NaiveDate::from_ymd_opt(2013, 12, 1).unwrap()));
        assert!(!spec.contains(t, NaiveDate::from_ymd_opt(2014, 1, 1).unwrap()));
        assert!(WindowSpec::new(0, 1, 0).is_err());
    }
}
