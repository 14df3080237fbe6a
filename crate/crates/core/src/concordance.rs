//! Multi-modal concordance: per-metric standardization, correlation-derived
//! weights and the aggregate score over a detection window.
//!
//! Every metric here is a distance (K-S or chi-square), so the aggregate
//! flips the sign of each standardized value: drift pushes the score
//! negative, a window that looks like the reference scores near zero.

use std::collections::BTreeMap;

use chrono::{Days, NaiveDate};
use log::{info, warn};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    fingerprint, DetectionWindow, ExamRecord, FeatureSchema, MetricDescriptor, MetricKind,
    ModelError, SourceGroup, WindowSpec,
};
use crate::series::{ConcordanceSeries, SeriesRow};
use crate::sim::{self, SimError};
use crate::stats::{self, StatsError};
use crate::window::{self, BootstrapSpec, ReferenceSample, WindowError};

/// Scale below which a metric is treated as constant and left out of the
/// aggregate.
pub const ETA_FLOOR: f64 = 1e-9;

pub const CALIBRATION_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConcordanceError {
    #[error("need at least {needed} usable windows, got {got}")]
    InsufficientWindows { needed: usize, got: usize },
    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("calibration was built from reference {expected}, got {actual}")]
    CalibrationMismatch { expected: String, actual: String },
    #[error("window {0} has too few exams")]
    SkippedWindow(NaiveDate),
    #[error("metric `{0}` has no calibration entry")]
    UncalibratedMetric(String),
    #[error("no metrics enabled")]
    NoMetrics,
    #[error("metric `{metric}`: {source}")]
    Metric {
        metric: String,
        #[source]
        source: WindowError,
    },
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Which input groups take part in the aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricGroups {
    pub metadata: bool,
    pub latent: bool,
    pub prediction: bool,
}

impl MetricGroups {
    pub const ALL: Self = Self {
        metadata: true,
        latent: true,
        prediction: true,
    };

    pub fn enabled(&self, group: SourceGroup) -> bool {
        match group {
            SourceGroup::Metadata => self.metadata,
            SourceGroup::Latent => self.latent,
            SourceGroup::Prediction => self.prediction,
        }
    }

    pub fn any(&self) -> bool {
        self.metadata || self.latent || self.prediction
    }
}

impl Default for MetricGroups {
    fn default() -> Self {
        Self::ALL
    }
}

/// Ordered metric list: one chi-square per categorical feature, then one
/// K-S per continuous feature, per latent dimension and per label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSet {
    metrics: Vec<MetricDescriptor>,
}

impl MetricSet {
    pub fn from_schema(schema: &FeatureSchema) -> Self {
        let metrics = schema
            .categorical_features
            .iter()
            .map(|f| MetricDescriptor::categorical(&f.name))
            .chain(
                schema
                    .continuous_features
                    .iter()
                    .map(|f| MetricDescriptor::continuous(&f.name)),
            )
            .chain((0..schema.latent_dim).map(MetricDescriptor::latent))
            .chain(
                schema
                    .labels
                    .iter()
                    .enumerate()
                    .map(|(i, l)| MetricDescriptor::prediction(i, l)),
            )
            .collect();
        Self { metrics }
    }

    pub fn from_metrics(metrics: Vec<MetricDescriptor>) -> Self {
        Self { metrics }
    }

    pub fn filter(&self, groups: MetricGroups) -> Self {
        Self {
            metrics: self
                .metrics
                .iter()
                .filter(|m| groups.enabled(m.source_group))
                .cloned()
                .collect(),
        }
    }

    pub fn metrics(&self) -> &[MetricDescriptor] {
        &self.metrics
    }

    pub fn len(&self) -> usize {
        self.metrics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.metrics.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.metrics.iter().map(|m| m.metric_id.clone()).collect()
    }
}

/// The gold-standard exams every window is compared against, with the
/// reference side of each metric precomputed.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    exams: Vec<ExamRecord>,
    samples: BTreeMap<String, ReferenceSample>,
    fingerprint: String,
}

impl ReferenceSet {
    pub fn new(exams: Vec<ExamRecord>, metrics: &MetricSet) -> Result<Self, ConcordanceError> {
        let fingerprint = fingerprint(&exams)?;
        let samples = metrics
            .metrics()
            .iter()
            .map(|m| {
                ReferenceSample::from_exams(m, &exams)
                    .map(|s| (m.metric_id.clone(), s))
                    .map_err(|source| ConcordanceError::Metric {
                        metric: m.metric_id.clone(),
                        source,
                    })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            exams,
            samples,
            fingerprint,
        })
    }

    pub fn exams(&self) -> &[ExamRecord] {
        &self.exams
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn sample(&self, metric_id: &str) -> Option<&ReferenceSample> {
        self.samples.get(metric_id)
    }

    pub fn date_range(&self) -> Option<(NaiveDate, NaiveDate)> {
        let first = self.exams.iter().map(ExamRecord::date).min()?;
        let last = self.exams.iter().map(ExamRecord::date).max()?;
        Some((first, last))
    }
}

/// Bootstrap estimates of every metric on one window.
pub fn compute_metrics(
    window: &DetectionWindow<'_>,
    metrics: &MetricSet,
    reference: &ReferenceSet,
    spec: &BootstrapSpec,
) -> Result<Vec<f64>, ConcordanceError> {
    metrics_against(window, metrics, &reference.samples, spec)
}

fn metrics_against(
    window: &DetectionWindow<'_>,
    metrics: &MetricSet,
    samples: &BTreeMap<String, ReferenceSample>,
    spec: &BootstrapSpec,
) -> Result<Vec<f64>, ConcordanceError> {
    metrics
        .metrics()
        .iter()
        .map(|m| {
            let sample = samples
                .get(&m.metric_id)
                .ok_or_else(|| ConcordanceError::UncalibratedMetric(m.metric_id.clone()))?;
            window::bootstrap_metric(window, m, sample, spec).map_err(|source| {
                ConcordanceError::Metric {
                    metric: m.metric_id.clone(),
                    source,
                }
            })
        })
        .collect()
}

/// Reference samples built from every reference exam outside the date
/// range of the window ending at `index_date`.
pub fn held_out_samples(
    reference: &ReferenceSet,
    metrics: &MetricSet,
    window_spec: &WindowSpec,
    index_date: NaiveDate,
) -> Result<BTreeMap<String, ReferenceSample>, ConcordanceError> {
    let outside: Vec<&ExamRecord> = reference
        .exams
        .iter()
        .filter(|e| !window_spec.contains(index_date, e.date()))
        .collect();
    metrics
        .metrics()
        .iter()
        .map(|m| {
            ReferenceSample::from_exams(m, outside.iter().copied())
                .map(|s| (m.metric_id.clone(), s))
                .map_err(|source| ConcordanceError::Metric {
                    metric: m.metric_id.clone(),
                    source,
                })
        })
        .collect()
}

/// Raw metric values, laid out `[window][metric]`, for windows cut from the
/// reference set itself. Each window is compared against the reference with
/// its own date range held out, so that, like a monitored window, it is
/// disjoint from what it is compared with.
pub fn reference_window_values(
    windows: &[&DetectionWindow<'_>],
    window_spec: &WindowSpec,
    metrics: &MetricSet,
    reference: &ReferenceSet,
    spec: &BootstrapSpec,
) -> Result<Vec<Vec<f64>>, ConcordanceError> {
    windows
        .par_iter()
        .map(|w| {
            let samples = held_out_samples(reference, metrics, window_spec, w.index_date)?;
            metrics_against(w, metrics, &samples, spec)
        })
        .collect()
}

/// Offset and scale for one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub zeta: f64,
    pub eta: f64,
}

impl Standardization {
    /// Metrics with a scale under [`ETA_FLOOR`] are excluded from aggregation.
    pub fn is_degenerate(&self) -> bool {
        self.eta < ETA_FLOOR
    }
}

pub fn standardize(m: f64, zeta: f64, eta: f64) -> Result<f64, ConcordanceError> {
    if eta <= 0.0 || eta.is_nan() {
        return Err(ConcordanceError::NonPositiveScale(eta));
    }
    Ok((m - zeta) / eta)
}

/// Per-metric mean and population standard deviation over a matrix of
/// raw values laid out `[window][metric]`.
pub fn standardization_from_values(
    values: &[Vec<f64>],
    metric_count: usize,
) -> Result<Vec<Standardization>, ConcordanceError> {
    if values.len() < 2 {
        return Err(ConcordanceError::InsufficientWindows {
            needed: 2,
            got: values.len(),
        });
    }
    (0..metric_count)
        .map(|i| {
            let column: Vec<f64> = values.iter().map(|row| row[i]).collect();
            let (zeta, eta) = stats::mean_std(&column)?;
            Ok(Standardization { zeta, eta })
        })
        .collect()
}

/// Offsets and scales from the reference window set. Skipped windows are
/// ignored; at least two must remain.
pub fn standardize_calibrate(
    reference_windows: &[DetectionWindow<'_>],
    window_spec: &WindowSpec,
    metrics: &MetricSet,
    reference: &ReferenceSet,
    spec: &BootstrapSpec,
) -> Result<Vec<Standardization>, ConcordanceError> {
    let usable: Vec<&DetectionWindow<'_>> = reference_windows
        .iter()
        .filter(|w| !w.is_skipped(window_spec))
        .collect();
    if usable.len() < 2 {
        return Err(ConcordanceError::InsufficientWindows {
            needed: 2,
            got: usable.len(),
        });
    }
    let values = reference_window_values(&usable, window_spec, metrics, reference, spec)?;
    standardization_from_values(&values, metrics.len())
}

/// Correlation used to turn metric/performance agreement into a weight.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correlation {
    #[default]
    Pearson,
    Spearman,
}

/// `|corr(values, performance)|`, or zero when either side is constant.
pub fn alpha_from_series(
    values: &[f64],
    performance: &[f64],
    correlation: Correlation,
) -> Result<f64, ConcordanceError> {
    let r = match correlation {
        Correlation::Pearson => stats::pearson_corr(values, performance),
        Correlation::Spearman => stats::spearman_corr(values, performance),
    };
    match r {
        Ok(r) => Ok(r.abs()),
        Err(StatsError::ZeroVariance) => Ok(0.0),
        Err(e) => Err(e.into()),
    }
}

/// Weights from a window set with ground truth: the absolute correlation
/// between each standardized metric and windowed micro-AUROC. Windows whose
/// AUROC is undefined are dropped; at least three must remain.
pub fn weight_calibrate(
    alpha_windows: &[DetectionWindow<'_>],
    window_spec: &WindowSpec,
    metrics: &MetricSet,
    standardization: &[Standardization],
    reference: &ReferenceSet,
    spec: &BootstrapSpec,
    options: &WeightOptions,
) -> Result<Vec<f64>, ConcordanceError> {
    let mut usable = Vec::new();
    let mut performance = Vec::new();
    for w in alpha_windows {
        if let Ok(rho) = stats::micro_auroc(&w.exams, options.auroc_labels.as_deref()) {
            usable.push(w);
            performance.push(rho);
        }
    }
    if usable.len() < 3 {
        return Err(ConcordanceError::InsufficientWindows {
            needed: 3,
            got: usable.len(),
        });
    }
    let values = reference_window_values(&usable, window_spec, metrics, reference, spec)?;
    standardization
        .iter()
        .enumerate()
        .map(|(i, st)| {
            if st.is_degenerate() {
                return Ok(0.0);
            }
            let column: Vec<f64> = values
                .iter()
                .map(|row| (row[i] - st.zeta) / st.eta)
                .collect();
            alpha_from_series(&column, &performance, options.correlation)
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightOptions {
    pub correlation: Correlation,
    /// Label indices pooled into the performance measure; all when `None`.
    pub auroc_labels: Option<Vec<usize>>,
}

/// How weights enter the weighted aggregate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Weights rescaled to sum to one over the active metrics.
    #[default]
    Normalized,
    /// Weights used as calibrated.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCalibration {
    pub metric_id: String,
    pub kind: MetricKind,
    pub source_group: SourceGroup,
    pub zeta: f64,
    pub eta: f64,
    pub alpha: Option<f64>,
    pub excluded: bool,
}

/// Persisted calibration: everything needed to score new windows against
/// one particular reference set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub version: u32,
    pub schema: FeatureSchema,
    pub window_spec: WindowSpec,
    pub bootstrap_spec: BootstrapSpec,
    pub weight_mode: WeightMode,
    pub reference_fingerprint: String,
    pub created_at: Option<String>,
    pub reference_windows: usize,
    pub alpha_windows: usize,
    pub metrics: Vec<MetricCalibration>,
}

impl Calibration {
    pub fn entry(&self, metric_id: &str) -> Option<&MetricCalibration> {
        self.metrics.iter().find(|m| m.metric_id == metric_id)
    }

    pub fn has_weights(&self) -> bool {
        self.metrics.iter().any(|m| m.alpha.is_some())
    }

    pub fn to_json(&self) -> Result<String, ConcordanceError> {
        Ok(serde_json::to_string_pretty(self).map_err(ModelError::from)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ConcordanceError> {
        let cal: Self = serde_json::from_str(text).map_err(ModelError::from)?;
        cal.schema.check()?;
        Ok(cal)
    }
}

/// Settings for [`calibrate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub window_spec: WindowSpec,
    pub bootstrap_spec: BootstrapSpec,
    /// Quantile used to hard-mine the poor-performance windows.
    pub hard_mining_q: f64,
    /// Hard-mined windows added per reference window.
    pub alpha_ratio: f64,
    pub weights: WeightOptions,
    pub weight_mode: WeightMode,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            window_spec: WindowSpec::default(),
            bootstrap_spec: BootstrapSpec::default(),
            hard_mining_q: 0.25,
            alpha_ratio: 1.0,
            weights: WeightOptions::default(),
            weight_mode: WeightMode::default(),
        }
    }
}

/// Full-length reference windows: stride steps from the first date on which
/// a whole window fits, through the last reference date.
pub fn reference_windows<'a>(
    reference: &'a ReferenceSet,
    window_spec: &WindowSpec,
) -> Result<Vec<DetectionWindow<'a>>, ConcordanceError> {
    let (first, last) = reference.date_range().ok_or(ModelError::EmptyInput)?;
    let start = (first + Days::new(u64::from(window_spec.length_days) - 1)).min(last);
    Ok(window::roll_windows(
        reference.exams(),
        window_spec,
        start,
        last,
    )?)
}

/// Poor-performance windows for weight calibration. The `k`-th window is
/// a copy of a reference window with a fraction `(k + 1) / count` of its
/// exams swapped for draws from the hard-mined pool, giving a graded range
/// of performance.
pub fn hard_mined_windows<'a>(
    base: &[DetectionWindow<'a>],
    pool: &[&'a ExamRecord],
    count: usize,
    seed: u64,
) -> Vec<DetectionWindow<'a>> {
    if base.is_empty() || pool.is_empty() {
        return Vec::new();
    }
    (0..count)
        .map(|k| {
            let src = &base[k % base.len()];
            let fraction = (k + 1) as f64 / count as f64;
            let mut rng = window::draw_rng(
                &BootstrapSpec {
                    samples: 1,
                    repeats: 1,
                    seed,
                },
                "alpha-window",
                src.index_date,
                k,
            );
            let exams = src
                .exams
                .iter()
                .map(|&e| {
                    if rng.random::<f64>() < fraction {
                        pool[rng.random_range(0..pool.len())]
                    } else {
                        e
                    }
                })
                .collect();
            DetectionWindow::new(src.index_date, exams)
        })
        .collect()
}

/// Calibrates offsets, scales and (when the reference carries ground truth)
/// weights from a reference set.
pub fn calibrate(
    schema: &FeatureSchema,
    reference: &ReferenceSet,
    options: &CalibrationOptions,
) -> Result<Calibration, ConcordanceError> {
    let metrics = MetricSet::from_schema(schema);
    let windows = reference_windows(reference, &options.window_spec)?;
    let usable: Vec<DetectionWindow<'_>> = windows
        .into_iter()
        .filter(|w| !w.is_skipped(&options.window_spec))
        .collect();
    info!(
        "standardizing {} metrics over {} reference windows",
        metrics.len(),
        usable.len()
    );
    let standardization = standardize_calibrate(
        &usable,
        &options.window_spec,
        &metrics,
        reference,
        &options.bootstrap_spec,
    )?;

    let has_truth = reference.exams().iter().any(ExamRecord::has_ground_truth);
    let (alphas, alpha_windows) = if has_truth {
        let pool_idx = sim::hard_mine_pool(reference.exams(), options.hard_mining_q)?;
        let pool: Vec<&ExamRecord> = pool_idx.iter().map(|&i| &reference.exams()[i]).collect();
        let count = (options.alpha_ratio * usable.len() as f64).round() as usize;
        let mut alpha_set = usable.clone();
        alpha_set.extend(hard_mined_windows(
            &usable,
            &pool,
            count,
            options.bootstrap_spec.seed,
        ));
        info!(
            "weighting over {} windows ({} hard-mined)",
            alpha_set.len(),
            count
        );
        let alphas = weight_calibrate(
            &alpha_set,
            &options.window_spec,
            &metrics,
            &standardization,
            reference,
            &options.bootstrap_spec,
            &options.weights,
        )?;
        (Some(alphas), alpha_set.len())
    } else {
        warn!("reference has no ground truth; weights left unset, only the unweighted score is available");
        (None, 0)
    };

    let entries = metrics
        .metrics()
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let st = standardization[i];
            if st.is_degenerate() {
                warn!(
                    "metric {} is constant over the reference windows; excluded",
                    m.metric_id
                );
            }
            MetricCalibration {
                metric_id: m.metric_id.clone(),
                kind: m.kind,
                source_group: m.source_group,
                zeta: st.zeta,
                eta: st.eta,
                alpha: alphas.as_ref().map(|a| a[i]),
                excluded: st.is_degenerate(),
            }
        })
        .collect();
    Ok(Calibration {
        version: CALIBRATION_VERSION,
        schema: schema.clone(),
        window_spec: options.window_spec,
        bootstrap_spec: options.bootstrap_spec,
        weight_mode: options.weight_mode,
        reference_fingerprint: reference.fingerprint().to_string(),
        created_at: None,
        reference_windows: usable.len(),
        alpha_windows,
        metrics: entries,
    })
}

/// Aggregates standardized values. Each entry is `(standardized, alpha)`;
/// returns `(MMC_0, MMC_w)`, the latter `None` when no weights are
/// available or they sum to zero.
pub fn aggregate(terms: &[(f64, Option<f64>)], mode: WeightMode) -> Option<(f64, Option<f64>)> {
    if terms.is_empty() {
        return None;
    }
    let mmc0 = -terms.iter().map(|(s, _)| s).sum::<f64>() / terms.len() as f64;
    let alphas: Option<Vec<f64>> = terms.iter().map(|(_, a)| *a).collect();
    let mmcw = alphas.and_then(|alphas| {
        let total: f64 = alphas.iter().sum();
        let weighted: f64 = terms.iter().zip(&alphas).map(|((s, _), a)| -a * s).sum();
        match mode {
            WeightMode::Normalized if total > 0.0 => Some(weighted / total),
            WeightMode::Normalized => None,
            WeightMode::Raw => Some(weighted),
        }
    });
    Some((mmc0, mmcw))
}

/// Scores windows against a calibration.
#[derive(Debug, Clone)]
pub struct Scorer<'r> {
    metrics: MetricSet,
    entries: Vec<MetricCalibration>,
    reference: &'r ReferenceSet,
    bootstrap: BootstrapSpec,
    window_spec: WindowSpec,
    mode: WeightMode,
}

/// Scores for one window, in metric-set order.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowScore {
    pub raw: Vec<f64>,
    pub standardized: Vec<Option<f64>>,
    pub mmc0: f64,
    pub mmcw: Option<f64>,
}

impl<'r> Scorer<'r> {
    pub fn new(
        calibration: &Calibration,
        reference: &'r ReferenceSet,
        groups: MetricGroups,
    ) -> Result<Self, ConcordanceError> {
        if calibration.reference_fingerprint != reference.fingerprint() {
            return Err(ConcordanceError::CalibrationMismatch {
                expected: calibration.reference_fingerprint.clone(),
                actual: reference.fingerprint().to_string(),
            });
        }
        if !groups.any() {
            return Err(ConcordanceError::NoMetrics);
        }
        let metrics = MetricSet::from_schema(&calibration.schema).filter(groups);
        let entries = metrics
            .metrics()
            .iter()
            .map(|m| {
                calibration
                    .entry(&m.metric_id)
                    .cloned()
                    .ok_or_else(|| ConcordanceError::UncalibratedMetric(m.metric_id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if entries.iter().all(|e| e.excluded) {
            return Err(ConcordanceError::NoMetrics);
        }
        Ok(Self {
            metrics,
            entries,
            reference,
            bootstrap: calibration.bootstrap_spec,
            window_spec: calibration.window_spec,
            mode: calibration.weight_mode,
        })
    }

    pub fn with_bootstrap(mut self, spec: BootstrapSpec) -> Self {
        self.bootstrap = spec;
        self
    }

    pub fn with_window_spec(mut self, spec: WindowSpec) -> Self {
        self.window_spec = spec;
        self
    }

    pub fn with_weight_mode(mut self, mode: WeightMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn metrics(&self) -> &MetricSet {
        &self.metrics
    }

    pub fn window_spec(&self) -> &WindowSpec {
        &self.window_spec
    }

    pub fn score(&self, window: &DetectionWindow<'_>) -> Result<WindowScore, ConcordanceError> {
        if window.is_skipped(&self.window_spec) {
            return Err(ConcordanceError::SkippedWindow(window.index_date));
        }
        let raw = compute_metrics(window, &self.metrics, self.reference, &self.bootstrap)?;
        self.score_values(raw)
    }

    /// Standardizes and aggregates already-computed raw values.
    pub fn score_values(&self, raw: Vec<f64>) -> Result<WindowScore, ConcordanceError> {
        let mut standardized = Vec::with_capacity(raw.len());
        let mut terms = Vec::with_capacity(raw.len());
        for (m, e) in raw.iter().zip(&self.entries) {
            if e.excluded {
                standardized.push(None);
                continue;
            }
            let s = standardize(*m, e.zeta, e.eta)?;
            standardized.push(Some(s));
            terms.push((s, e.alpha));
        }
        let (mmc0, mmcw) = aggregate(&terms, self.mode).ok_or(ConcordanceError::NoMetrics)?;
        Ok(WindowScore {
            raw,
            standardized,
            mmc0,
            mmcw,
        })
    }

    /// Aggregate score of one window; `weighted` selects MMC_w over MMC_0.
    pub fn mmc(
        &self,
        window: &DetectionWindow<'_>,
        weighted: bool,
    ) -> Result<Option<f64>, ConcordanceError> {
        let score = self.score(window)?;
        Ok(if weighted {
            score.mmcw
        } else {
            Some(score.mmc0)
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SeriesOptions {
    /// Label indices pooled into the windowed AUROC; all when `None`.
    pub auroc_labels: Option<Vec<usize>>,
}

/// Scores every window from `start` to `end`. Rows come back in date
/// order; a window that fails carries the error text instead of aborting
/// the series.
pub fn run_series(
    stream: &[ExamRecord],
    scorer: &Scorer<'_>,
    start: NaiveDate,
    end: NaiveDate,
    options: &SeriesOptions,
) -> Result<ConcordanceSeries, ConcordanceError> {
    let metric_ids = scorer.metrics().ids();
    if start > end {
        return Ok(ConcordanceSeries::new(metric_ids, Vec::new()));
    }
    let windows = window::roll_windows(stream, scorer.window_spec(), start, end)?;
    let rows = windows
        .par_iter()
        .map(|w| series_row(w, scorer, options))
        .collect();
    Ok(ConcordanceSeries::new(metric_ids, rows))
}

fn series_row(
    window: &DetectionWindow<'_>,
    scorer: &Scorer<'_>,
    options: &SeriesOptions,
) -> SeriesRow {
    let mut row = SeriesRow::empty(window.index_date, window.len());
    if window.is_skipped(scorer.window_spec()) {
        row.skipped = true;
        return row;
    }
    row.auroc = stats::micro_auroc(&window.exams, options.auroc_labels.as_deref()).ok();
    match scorer.score(window) {
        Ok(score) => {
            row.raw = score.raw.into_iter().map(Some).collect();
            row.standardized = score.standardized;
            row.mmc0 = Some(score.mmc0);
            row.mmcw = score.mmcw;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}
