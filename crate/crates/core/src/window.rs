//! Rolling detection windows and the bootstrap over-sampling estimator.
//!
//! A metric on a window is estimated by drawing `K` exams with replacement,
//! computing the statistic against the whole reference sample, and
//! averaging over `N` such draws. Every draw uses its own RNG stream keyed
//! on `(seed, metric_id, index_date, repeat)`, so metrics and windows can be
//! evaluated in any order, on any number of threads, with identical output.

use std::collections::BTreeMap;

use chrono::{Datelike, Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DetectionWindow, ExamRecord, MetricDescriptor, MetricKind, WindowSpec};
use crate::stats::{self, StatsError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WindowError {
    #[error("invalid range: start {start} is after end {end}")]
    InvalidRange { start: NaiveDate, end: NaiveDate },
    #[error("no usable values for metric `{0}` in window")]
    EmptyEffectiveSample(String),
    #[error("reference sample for `{0}` is empty or of the wrong kind")]
    BadReference(String),
    #[error("invalid bootstrap spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Over-sampling parameters: `samples` exams per draw (K), `repeats`
/// draws averaged (N).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapSpec {
    pub samples: usize,
    pub repeats: usize,
    pub seed: u64,
}

impl BootstrapSpec {
    pub fn new(samples: usize, repeats: usize, seed: u64) -> Result<Self, WindowError> {
        if samples == 0 || repeats == 0 {
            return Err(WindowError::InvalidSpec("K and N must be >= 1".into()));
        }
        Ok(Self {
            samples,
            repeats,
            seed,
        })
    }
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        Self {
            samples: 2500,
            repeats: 20,
            seed: 0,
        }
    }
}

/// Index dates `start, start + stride, ...` up to and including `end`.
pub fn index_dates(
    spec: &WindowSpec,
    start: NaiveDate,
    end: NaiveDate,
) -> Result<Vec<NaiveDate>, WindowError> {
    if start > end {
        return Err(WindowError::InvalidRange { start, end });
    }
    let mut out = Vec::new();
    let mut t = start;
    while t <= end {
        out.push(t);
        t = t + Days::new(u64::from(spec.stride_days));
    }
    Ok(out)
}

/// One window per stride step in `[start, end]`, each holding the exams
/// dated in `(t - length, t]`. The stream is sorted by timestamp first
/// (stable, so same-day order is kept).
pub fn roll_windows<'a>(
    stream: &'a [ExamRecord],
    spec: &WindowSpec,
    start: NaiveDate,
    end: NaiveDate,
) -> Result<Vec<DetectionWindow<'a>>, WindowError> {
    let dates = index_dates(spec, start, end)?;
    let mut sorted: Vec<&ExamRecord> = stream.iter().collect();
    sorted.sort_by_key(|e| e.timestamp);
    Ok(dates
        .into_iter()
        .map(|t| {
            let first = spec.first_day(t);
            let lo = sorted.partition_point(|e| e.date() < first);
            let hi = sorted.partition_point(|e| e.date() <= t);
            DetectionWindow::new(t, sorted[lo..hi.max(lo)].to_vec())
        })
        .collect())
}

/// Reference side of a metric's two-sample test, built once from the
/// whole reference set.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceSample {
    /// Sorted finite values.
    Continuous(Vec<f64>),
    /// Category counts, and the pseudo-count used to smooth them against
    /// unseen categories (`None` disables smoothing).
    Categorical {
        counts: BTreeMap<String, u64>,
        pseudo_count: Option<f64>,
    },
}

/// Pseudo-count added per category before normalizing reference
/// proportions.
pub const DEFAULT_PSEUDO_COUNT: f64 = 0.5;

impl ReferenceSample {
    pub fn from_exams<'e, I>(metric: &MetricDescriptor, exams: I) -> Result<Self, WindowError>
    where
        I: IntoIterator<Item = &'e ExamRecord>,
    {
        match metric.kind {
            MetricKind::ContinuousKs => {
                let mut values: Vec<f64> = exams
                    .into_iter()
                    .filter_map(|e| metric.continuous_value(e))
                    .collect();
                if values.is_empty() {
                    return Err(WindowError::BadReference(metric.metric_id.clone()));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(StatsError::NonFinite.into());
                }
                values.sort_by(f64::total_cmp);
                Ok(Self::Continuous(values))
            }
            MetricKind::CategoricalChi2 => {
                let mut counts = BTreeMap::new();
                for e in exams {
                    *counts.entry(metric.category(e).to_string()).or_insert(0) += 1;
                }
                if counts.is_empty() {
                    return Err(WindowError::BadReference(metric.metric_id.clone()));
                }
                Ok(Self::Categorical {
                    counts,
                    pseudo_count: Some(DEFAULT_PSEUDO_COUNT),
                })
            }
        }
    }
}

/// Key for the RNG stream of one bootstrap draw.
pub fn substream_seed(seed: u64, metric_id: &str, index_date: NaiveDate, repeat: usize) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    };
    eat(&seed.to_le_bytes());
    eat(metric_id.as_bytes());
    eat(&[0xff]);
    eat(&index_date.num_days_from_ce().to_le_bytes());
    eat(&(repeat as u64).to_le_bytes());
    splitmix64(h)
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// RNG for one bootstrap draw.
pub fn draw_rng(
    spec: &BootstrapSpec,
    metric_id: &str,
    index_date: NaiveDate,
    repeat: usize,
) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(spec.seed, metric_id, index_date, repeat))
}

const MISSING: u32 = u32::MAX;

/// Per-(window, metric) state precomputed so each bootstrap draw costs
/// `O(K + distinct values)`.
enum Sampler {
    Continuous {
        /// Rank of each exam's value among the window's distinct values.
        codes: Vec<u32>,
        /// Reference counts strictly below / at or below each distinct value.
        ref_below: Vec<usize>,
        ref_at_or_below: Vec<usize>,
        ref_len: usize,
    },
    Categorical {
        codes: Vec<u32>,
        proportions: BTreeMap<u32, f64>,
    },
}

impl Sampler {
    fn new(
        window: &DetectionWindow<'_>,
        metric: &MetricDescriptor,
        reference: &ReferenceSample,
    ) -> Result<Self, WindowError> {
        match (metric.kind, reference) {
            (MetricKind::ContinuousKs, ReferenceSample::Continuous(sorted_ref)) => {
                let values: Vec<Option<f64>> = window
                    .exams
                    .iter()
                    .map(|e| metric.continuous_value(e))
                    .collect();
                let mut distinct: Vec<f64> = values.iter().flatten().copied().collect();
                if distinct.is_empty() {
                    return Err(WindowError::EmptyEffectiveSample(metric.metric_id.clone()));
                }
                if distinct.iter().any(|v| !v.is_finite()) {
                    return Err(StatsError::NonFinite.into());
                }
                distinct.sort_by(f64::total_cmp);
                distinct.dedup();
                let codes = values
                    .iter()
                    .map(|v| match v {
                        Some(v) => distinct.partition_point(|d| d < v) as u32,
                        None => MISSING,
                    })
                    .collect();
                let mut ref_below = Vec::with_capacity(distinct.len());
                let mut ref_at_or_below = Vec::with_capacity(distinct.len());
                let mut i = 0;
                for &d in &distinct {
                    while i < sorted_ref.len() && sorted_ref[i] < d {
                        i += 1;
                    }
                    ref_below.push(i);
                    while i < sorted_ref.len() && sorted_ref[i] <= d {
                        i += 1;
                    }
                    ref_at_or_below.push(i);
                }
                Ok(Self::Continuous {
                    codes,
                    ref_below,
                    ref_at_or_below,
                    ref_len: sorted_ref.len(),
                })
            }
            (
                MetricKind::CategoricalChi2,
                ReferenceSample::Categorical {
                    counts,
                    pseudo_count,
                },
            ) => {
                if window.is_empty() {
                    return Err(WindowError::EmptyEffectiveSample(metric.metric_id.clone()));
                }
                let window_categories: Vec<&str> =
                    window.exams.iter().map(|e| metric.category(e)).collect();
                let proportions: BTreeMap<String, f64> = match pseudo_count {
                    Some(pc) => stats::smoothed_proportions(
                        counts,
                        window_categories.iter().map(|c| c.to_string()),
                        *pc,
                    ),
                    None => {
                        let total: u64 = counts.values().sum();
                        counts
                            .iter()
                            .map(|(k, &c)| (k.clone(), c as f64 / total as f64))
                            .collect()
                    }
                };
                let index: BTreeMap<&str, u32> = proportions
                    .keys()
                    .enumerate()
                    .map(|(i, k)| (k.as_str(), i as u32))
                    .collect();
                // Categories unknown to an unsmoothed reference get their own
                // code with probability zero.
                let mut extra = proportions.len() as u32;
                let mut extra_codes: BTreeMap<&str, u32> = BTreeMap::new();
                let codes = window_categories
                    .iter()
                    .map(|c| match index.get(c) {
                        Some(&code) => code,
                        None => *extra_codes.entry(c).or_insert_with(|| {
                            extra += 1;
                            extra - 1
                        }),
                    })
                    .collect();
                let proportions = proportions
                    .values()
                    .enumerate()
                    .map(|(i, &p)| (i as u32, p))
                    .collect();
                Ok(Self::Categorical { codes, proportions })
            }
            _ => Err(WindowError::BadReference(metric.metric_id.clone())),
        }
    }

    /// Statistic on one with-replacement draw; `None` when the draw holds
    /// no usable values.
    fn draw(
        &self,
        rng: &mut ChaCha8Rng,
        k: usize,
        counts: &mut Vec<usize>,
    ) -> Result<Option<f64>, WindowError> {
        match self {
            Self::Continuous {
                codes,
                ref_below,
                ref_at_or_below,
                ref_len,
            } => {
                counts.clear();
                counts.resize(ref_below.len(), 0);
                let mut m = 0usize;
                for _ in 0..k {
                    let code = codes[rng.random_range(0..codes.len())];
                    if code != MISSING {
                        counts[code as usize] += 1;
                        m += 1;
                    }
                }
                if m == 0 {
                    return Ok(None);
                }
                let (n, mf) = (*ref_len as f64, m as f64);
                let mut cum = 0usize;
                let mut d = 0.0f64;
                for (idx, &c) in counts.iter().enumerate() {
                    let before = (ref_below[idx] as f64 / n - cum as f64 / mf).abs();
                    cum += c;
                    let at = (ref_at_or_below[idx] as f64 / n - cum as f64 / mf).abs();
                    d = d.max(before).max(at);
                }
                Ok(Some(d))
            }
            Self::Categorical { codes, proportions } => {
                let mut observed: BTreeMap<u32, u64> = BTreeMap::new();
                for _ in 0..k {
                    let code = codes[rng.random_range(0..codes.len())];
                    *observed.entry(code).or_insert(0) += 1;
                }
                Ok(Some(stats::chi2_statistic(proportions, &observed)?))
            }
        }
    }
}

/// Bootstrap estimate of one metric on one window: the mean of the
/// statistic over `repeats` draws of `samples` exams with replacement.
///
/// Draws without any usable value (every drawn exam missing the field) are
/// left out of the mean.
pub fn bootstrap_metric(
    window: &DetectionWindow<'_>,
    metric: &MetricDescriptor,
    reference: &ReferenceSample,
    spec: &BootstrapSpec,
) -> Result<f64, WindowError> {
    let sampler = Sampler::new(window, metric, reference)?;
    let mut counts = Vec::new();
    let mut sum = 0.0;
    let mut used = 0usize;
    for j in 0..spec.repeats {
        let mut rng = draw_rng(spec, &metric.metric_id, window.index_date, j);
        if let Some(v) = sampler.draw(&mut rng, spec.samples, &mut counts)? {
            sum += v;
            used += 1;
        }
    }
    if used == 0 {
        return Err(WindowError::EmptyEffectiveSample(metric.metric_id.clone()));
    }
    Ok(sum / used as f64)
}
