//! Deterministic synthetic exam streams and drift injection.
//!
//! Exams are generated in a factor space and rotated into the latent by a
//! fixed orthonormal basis: one factor per label (shifted by `signal` for
//! positives), one shared image-quality factor, one lateral-view factor,
//! one out-of-population factor and pure-noise factors for any remaining
//! dimensions. Each label's prediction is a squashed noisy linear read-out
//! of the latent (its label factor plus `quality_weight` times the quality
//! factor), so prediction quality and latent drift stay coupled the way a
//! real encoder and classifier would be.
//!
//! Structural randomness (basis, category order) comes from
//! `structure_seed`; sampling randomness from the per-call seed. Two streams
//! with different seeds therefore share one population.

use std::collections::BTreeMap;

use chrono::{Datelike, Days, NaiveDate, NaiveDateTime, NaiveTime};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CategoricalFeature, ContinuousFeature, ExamRecord, FeatureSchema, ModelError};
use crate::stats;
use crate::window::splitmix64;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid population spec: {0}")]
    InvalidSpec(String),
    #[error("invalid scenario dates: {0}")]
    InvalidScenarioDates(String),
    #[error("quantile {0} outside (0, 1]")]
    InvalidQuantile(f64),
    #[error("hard-mining pool is empty")]
    EmptyPool,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub name: String,
    pub prevalence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedCategory {
    pub name: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalSpec {
    pub name: String,
    pub categories: Vec<WeightedCategory>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ContinuousDist {
    /// Normal clamped to `[min, max]`, rounded to `round_to` when positive.
    Normal {
        mean: f64,
        std: f64,
        min: f64,
        max: f64,
        #[serde(default)]
        round_to: f64,
    },
    LogNormal {
        mu: f64,
        sigma: f64,
    },
}

impl ContinuousDist {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Self::Normal {
                mean,
                std,
                min,
                max,
                round_to,
            } => {
                let v: f64 = mean + std * rng.sample::<f64, _>(StandardNormal);
                let v = v.clamp(min, max);
                if round_to > 0.0 {
                    (v / round_to).round() * round_to
                } else {
                    v
                }
            }
            Self::LogNormal { mu, sigma } => {
                LogNormal::new(mu, sigma).expect("validated").sample(rng)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousSpec {
    pub name: String,
    pub unit: String,
    pub dist: ContinuousDist,
}

/// Read-out from latent to soft prediction: `sigmoid(slope * (score -
/// signal / 2) + noise * e + logit(prevalence))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionModel {
    pub slope: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyVolume {
    pub weekday_mean: f64,
    pub weekend_mean: f64,
    /// Chance that a day is a low-volume day.
    pub low_day_probability: f64,
    pub low_day_mean: f64,
}

/// Lateral-view subpopulation injected by the metadata-filter-failure scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LateralSpec {
    pub view_feature: String,
    pub view_category: String,
    /// Shift along the lateral latent factor.
    pub latent_shift: f64,
    pub prediction: PredictionModel,
}

/// Out-of-population set injected by the no-metadata scenario: every
/// metadata field missing, one annotated label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodSpec {
    pub label: String,
    pub prevalence: f64,
    pub latent_shift: f64,
    pub prediction: PredictionModel,
    pub pool_size: usize,
}

/// Fields left out of a config document take their default values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationSpec {
    pub labels: Vec<LabelSpec>,
    pub categorical: Vec<CategoricalSpec>,
    pub continuous: Vec<ContinuousSpec>,
    pub latent_dim: usize,
    /// Latent shift of a positive label's factor.
    pub signal: f64,
    pub quality_weight: f64,
    pub prediction: PredictionModel,
    pub daily: DailyVolume,
    pub lateral: LateralSpec,
    pub ood: OodSpec,
    pub structure_seed: u64,
}

fn cats(name: &str, items: &[(&str, f64)]) -> CategoricalSpec {
    CategoricalSpec {
        name: name.into(),
        categories: items
            .iter()
            .map(|(n, w)| WeightedCategory {
                name: (*n).into(),
                weight: *w,
            })
            .collect(),
    }
}

pub const DEFAULT_LABELS: [&str; 10] = [
    "atelectasis",
    "cardiomegaly",
    "consolidation",
    "edema",
    "lesion",
    "no_finding",
    "opacity",
    "pleural_abnormalities",
    "pleural_effusion",
    "pneumonia",
];

const DEFAULT_PREVALENCE: [f64; 10] = [0.06, 0.10, 0.03, 0.02, 0.04, 0.35, 0.12, 0.08, 0.05, 0.05];

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            labels: DEFAULT_LABELS
                .iter()
                .zip(DEFAULT_PREVALENCE)
                .map(|(n, p)| LabelSpec {
                    name: (*n).into(),
                    prevalence: p,
                })
                .collect(),
            categorical: vec![
                cats(
                    "view_position",
                    &[
                        ("PA", 0.60),
                        ("AP", 0.27),
                        ("AP_horizontal", 0.10),
                        ("LATERAL", 0.0),
                        ("other", 0.03),
                    ],
                ),
                cats("sex", &[("F", 0.49), ("M", 0.51)]),
                cats(
                    "manufacturer",
                    &[
                        ("vendor_a", 0.45),
                        ("vendor_b", 0.30),
                        ("vendor_c", 0.20),
                        ("vendor_d", 0.05),
                    ],
                ),
                cats("modality", &[("CR", 0.40), ("DX", 0.60)]),
            ],
            continuous: vec![
                ContinuousSpec {
                    name: "age".into(),
                    unit: "years".into(),
                    dist: ContinuousDist::Normal {
                        mean: 62.0,
                        std: 17.0,
                        min: 13.0,
                        max: 103.0,
                        round_to: 1.0,
                    },
                },
                ContinuousSpec {
                    name: "exposure".into(),
                    unit: "mAs".into(),
                    dist: ContinuousDist::LogNormal {
                        mu: 1.2,
                        sigma: 0.5,
                    },
                },
            ],
            latent_dim: 16,
            signal: 2.6,
            quality_weight: 1.0,
            prediction: PredictionModel {
                slope: 1.0,
                noise: 0.3,
            },
            daily: DailyVolume {
                weekday_mean: 200.0,
                weekend_mean: 120.0,
                low_day_probability: 0.02,
                low_day_mean: 15.0,
            },
            lateral: LateralSpec {
                view_feature: "view_position".into(),
                view_category: "LATERAL".into(),
                latent_shift: 2.0,
                prediction: PredictionModel {
                    slope: 0.6,
                    noise: 1.2,
                },
            },
            ood: OodSpec {
                label: "pneumonia".into(),
                prevalence: 0.73,
                latent_shift: 2.5,
                prediction: PredictionModel {
                    slope: 0.8,
                    noise: 0.8,
                },
                pool_size: 5856,
            },
            structure_seed: 20_140_101,
        }
    }
}

/// Which population an exam is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Population {
    Base,
    Lateral,
    OutOfPopulation,
}

/// Stream generator for one population spec.
#[derive(Debug, Clone)]
pub struct Simulator {
    spec: PopulationSpec,
    /// Orthonormal columns; `basis[i][k]` is coordinate `i` of factor `k`.
    basis: Vec<Vec<f64>>,
    biases: Vec<f64>,
    ood_label: usize,
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn keyed_rng(seed: u64, tag: &str, day: Option<NaiveDate>, extra: u64) -> ChaCha8Rng {
    let mut h = splitmix64(seed);
    for b in tag.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    if let Some(d) = day {
        h = splitmix64(h ^ (d.num_days_from_ce() as u64));
    }
    h = splitmix64(h ^ extra);
    ChaCha8Rng::seed_from_u64(h)
}

fn orthonormal_basis(dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while cols.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for c in &cols {
            let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            cols.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    // transpose to row-major coordinates
    (0..dim)
        .map(|i| cols.iter().map(|c| c[i]).collect())
        .collect()
}

impl Simulator {
    pub fn new(spec: PopulationSpec) -> Result<Self, SimError> {
        let bad = |m: String| Err(SimError::InvalidSpec(m));
        if spec.labels.is_empty() {
            return bad("no labels".into());
        }
        if spec
            .labels
            .iter()
            .any(|l| !(0.0..=1.0).contains(&l.prevalence))
        {
            return bad("prevalence outside [0, 1]".into());
        }
        let needed = spec.labels.len() + 3;
        if spec.latent_dim < needed {
            return bad(format!("latent_dim must be >= labels + 3 = {needed}"));
        }
        for c in &spec.categorical {
            let total: f64 = c.categories.iter().map(|w| w.weight).sum();
            if c.categories.iter().any(|w| w.weight < 0.0) || (total - 1.0).abs() > 1e-9 {
                return bad(format!(
                    "weights of `{}` must be non-negative and sum to 1",
                    c.name
                ));
            }
        }
        for c in &spec.continuous {
            let ok = match c.dist {
                ContinuousDist::Normal { std, min, max, .. } => std >= 0.0 && min <= max,
                ContinuousDist::LogNormal { sigma, .. } => sigma >= 0.0,
            };
            if !ok {
                return bad(format!("bad distribution for `{}`", c.name));
            }
        }
        let view = spec
            .categorical
            .iter()
            .find(|c| c.name == spec.lateral.view_feature)
            .ok_or_else(|| {
                SimError::InvalidSpec(format!("no feature `{}`", spec.lateral.view_feature))
            })?;
        if !view
            .categories
            .iter()
            .any(|c| c.name == spec.lateral.view_category)
        {
            return bad(format!(
                "`{}` is not a category of `{}`",
                spec.lateral.view_category, view.name
            ));
        }
        let ood_label = spec
            .labels
            .iter()
            .position(|l| l.name == spec.ood.label)
            .ok_or_else(|| SimError::InvalidSpec(format!("unknown label `{}`", spec.ood.label)))?;
        if !(0.0..=1.0).contains(&spec.ood.prevalence) || spec.ood.pool_size == 0 {
            return bad("bad out-of-population spec".into());
        }
        let d = &spec.daily;
        if d.weekday_mean <= 0.0 || d.weekend_mean <= 0.0 || d.low_day_mean <= 0.0 {
            return bad("daily means must be positive".into());
        }
        let basis = orthonormal_basis(spec.latent_dim, spec.structure_seed);
        let biases = spec.labels.iter().map(|l| logit(l.prevalence)).collect();
        Ok(Self {
            spec,
            basis,
            biases,
            ood_label,
        })
    }

    pub fn spec(&self) -> &PopulationSpec {
        &self.spec
    }

    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema {
            categorical_features: self
                .spec
                .categorical
                .iter()
                .map(|c| CategoricalFeature {
                    name: c.name.clone(),
                    categories: c.categories.iter().map(|w| w.name.clone()).collect(),
                    allow_missing: true,
                })
                .collect(),
            continuous_features: self
                .spec
                .continuous
                .iter()
                .map(|c| ContinuousFeature {
                    name: c.name.clone(),
                    unit: c.unit.clone(),
                })
                .collect(),
            latent_dim: self.spec.latent_dim,
            labels: self.spec.labels.iter().map(|l| l.name.clone()).collect(),
        }
    }

    pub fn label_index(&self, name: &str) -> Option<usize> {
        self.spec.labels.iter().position(|l| l.name == name)
    }

    fn quality_factor(&self) -> usize {
        self.spec.labels.len()
    }

    fn daily_count(&self, date: NaiveDate, seed: u64) -> usize {
        let mut rng = keyed_rng(seed, "volume", Some(date), 0);
        let d = &self.spec.daily;
        let mean = if rng.random::<f64>() < d.low_day_probability {
            d.low_day_mean
        } else if date.weekday().number_from_monday() >= 6 {
            d.weekend_mean
        } else {
            d.weekday_mean
        };
        Poisson::new(mean).expect("validated").sample(&mut rng) as usize
    }

    /// Draws one exam.
    pub fn exam(
        &self,
        rng: &mut ChaCha8Rng,
        exam_id: String,
        timestamp: NaiveDateTime,
        population: Population,
    ) -> ExamRecord {
        let spec = &self.spec;
        let n_labels = spec.labels.len();
        let truth: Vec<bool> = match population {
            Population::OutOfPopulation => (0..n_labels)
                .map(|i| i == self.ood_label && rng.random::<f64>() < spec.ood.prevalence)
                .collect(),
            _ => spec
                .labels
                .iter()
                .map(|l| rng.random::<f64>() < l.prevalence)
                .collect(),
        };

        let mut factors: Vec<f64> = (0..spec.latent_dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        for (f, &y) in factors.iter_mut().zip(&truth) {
            if y {
                *f += spec.signal;
            }
        }
        match population {
            Population::Lateral => factors[n_labels + 1] += spec.lateral.latent_shift,
            Population::OutOfPopulation => factors[n_labels + 2] += spec.ood.latent_shift,
            Population::Base => {}
        }
        let latent: Vec<f64> = self
            .basis
            .iter()
            .map(|row| row.iter().zip(&factors).map(|(b, f)| b * f).sum())
            .collect();

        let model = match population {
            Population::Base => spec.prediction,
            Population::Lateral => spec.lateral.prediction,
            Population::OutOfPopulation => spec.ood.prediction,
        };
        let quality = factors[self.quality_factor()];
        let predictions = (0..n_labels)
            .map(|l| {
                let score = factors[l] + spec.quality_weight * quality;
                let noise: f64 = rng.sample(StandardNormal);
                sigmoid(
                    model.slope * (score - spec.signal / 2.0)
                        + model.noise * noise
                        + self.biases[l],
                )
            })
            .collect();

        let (categorical, continuous, ground_truth) = match population {
            Population::OutOfPopulation => {
                let categorical = spec
                    .categorical
                    .iter()
                    .map(|c| (c.name.clone(), None))
                    .collect();
                let continuous = spec
                    .continuous
                    .iter()
                    .map(|c| (c.name.clone(), None))
                    .collect();
                let gt = truth
                    .iter()
                    .enumerate()
                    .map(|(i, &y)| (i == self.ood_label).then_some(y))
                    .collect();
                (categorical, continuous, gt)
            }
            _ => {
                let mut categorical: BTreeMap<String, Option<String>> = BTreeMap::new();
                for c in &spec.categorical {
                    let value = if population == Population::Lateral
                        && c.name == spec.lateral.view_feature
                    {
                        spec.lateral.view_category.clone()
                    } else {
                        let u: f64 = rng.random();
                        let mut acc = 0.0;
                        let mut pick = &c.categories[c.categories.len() - 1].name;
                        for w in &c.categories {
                            acc += w.weight;
                            if u < acc {
                                pick = &w.name;
                                break;
                            }
                        }
                        pick.clone()
                    };
                    categorical.insert(c.name.clone(), Some(value));
                }
                let continuous = spec
                    .continuous
                    .iter()
                    .map(|c| (c.name.clone(), Some(c.dist.sample(rng))))
                    .collect();
                (
                    categorical,
                    continuous,
                    truth.iter().map(|&y| Some(y)).collect(),
                )
            }
        };
        ExamRecord {
            exam_id,
            timestamp,
            categorical,
            continuous,
            latent,
            predictions,
            ground_truth: Some(ground_truth),
        }
    }

    fn day_exams(
        &self,
        date: NaiveDate,
        count: usize,
        seed: u64,
        tag: &str,
        population: Population,
    ) -> Vec<ExamRecord> {
        let mut rng = keyed_rng(seed, tag, Some(date), 0);
        (0..count)
            .map(|j| {
                let id = format!("{tag}-{}-{j:04}", date.format("%Y%m%d"));
                self.exam(&mut rng, id, time_slot(date, j, count), population)
            })
            .collect()
    }

    /// Base-population stream over `[start, end]`, date-ordered.
    pub fn generate_baseline(
        &self,
        start: NaiveDate,
        end: NaiveDate,
        seed: u64,
    ) -> Vec<ExamRecord> {
        days(start, end)
            .flat_map(|date| {
                let n = self.daily_count(date, seed);
                self.day_exams(date, n, seed, "base", Population::Base)
            })
            .collect()
    }

    /// Finite out-of-population pool.
    pub fn ood_pool(&self, seed: u64) -> Vec<ExamRecord> {
        let mut rng = keyed_rng(seed, "ood-pool", None, 0);
        let t = NaiveDate::from_ymd_opt(2000, 1, 1)
            .unwrap()
            .and_time(NaiveTime::MIN);
        (0..self.spec.ood.pool_size)
            .map(|i| {
                self.exam(
                    &mut rng,
                    format!("ood-{i:05}"),
                    t,
                    Population::OutOfPopulation,
                )
            })
            .collect()
    }
}

fn days(start: NaiveDate, end: NaiveDate) -> impl Iterator<Item = NaiveDate> {
    let mut d = start;
    std::iter::from_fn(move || {
        if d > end {
            return None;
        }
        let out = d;
        d = d + Days::new(1);
        Some(out)
    })
}

/// Spreads `count` exams evenly over 07:00-19:00.
fn time_slot(date: NaiveDate, j: usize, count: usize) -> NaiveDateTime {
    let secs = 7 * 3600 + (j as u64 * 12 * 3600) / count.max(1) as u64;
    date.and_time(NaiveTime::from_num_seconds_from_midnight_opt(secs as u32, 0).unwrap())
}

/// Indices of exams the model gets confidently wrong: per label, positives
/// scoring at or below the label's `q`-quantile among positives and
/// negatives scoring at or above the `(1 - q)`-quantile among negatives.
/// Union over labels, in stream order.
pub fn hard_mine_pool(stream: &[ExamRecord], q: f64) -> Result<Vec<usize>, SimError> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(SimError::InvalidQuantile(q));
    }
    let n_labels = stream
        .iter()
        .map(|e| e.predictions.len())
        .max()
        .unwrap_or(0);
    let mut selected = vec![false; stream.len()];
    for l in 0..n_labels {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (i, e) in stream.iter().enumerate() {
            match e.label(l) {
                Some(true) => pos.push((i, e.predictions[l])),
                Some(false) => neg.push((i, e.predictions[l])),
                None => {}
            }
        }
        if !pos.is_empty() {
            let scores: Vec<f64> = pos.iter().map(|p| p.1).collect();
            let thr = stats::quantile(&scores, q).expect("non-empty, level checked");
            pos.iter()
                .filter(|p| p.1 <= thr)
                .for_each(|p| selected[p.0] = true);
        }
        if !neg.is_empty() {
            let scores: Vec<f64> = neg.iter().map(|p| p.1).collect();
            let thr = stats::quantile(&scores, 1.0 - q).expect("non-empty, level checked");
            neg.iter()
                .filter(|p| p.1 >= thr)
                .for_each(|p| selected[p.0] = true);
        }
    }
    let pool: Vec<usize> = selected
        .iter()
        .enumerate()
        .filter_map(|(i, &s)| s.then_some(i))
        .collect();
    if pool.is_empty() {
        return Err(SimError::EmptyPool);
    }
    Ok(pool)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioKind {
    Baseline,
    /// From `point_a` on, every exam is replaced by a draw from the
    /// hard-mined pool, keeping daily counts.
    HardMining {
        q: f64,
        point_a: NaiveDate,
    },
    /// Lateral exams mixed in from `point_a` at `lateral_ratio` per base
    /// exam; base exams dropped from `point_b`.
    MetadataFilterFailure {
        point_a: NaiveDate,
        point_b: NaiveDate,
        lateral_ratio: f64,
    },
    /// Out-of-population exams added from `point_a` at `ood_ratio` per base
    /// exam; base exams dropped from `point_b`.
    NoMetadataOod {
        point_a: NaiveDate,
        point_b: NaiveDate,
        ood_ratio: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidScenarioDates(m.into()));
        if self.start > self.end {
            return bad("start after end");
        }
        let inside = |d: NaiveDate| d >= self.start && d <= self.end;
        match self.kind {
            ScenarioKind::Baseline => Ok(()),
            ScenarioKind::HardMining { q, point_a } => {
                if !(q > 0.0 && q <= 1.0) {
                    return Err(SimError::InvalidQuantile(q));
                }
                if !inside(point_a) {
                    return bad("point A outside the stream range");
                }
                Ok(())
            }
            ScenarioKind::MetadataFilterFailure {
                point_a,
                point_b,
                lateral_ratio: ratio,
            }
            | ScenarioKind::NoMetadataOod {
                point_a,
                point_b,
                ood_ratio: ratio,
            } => {
                if !(inside(point_a) && inside(point_b)) {
                    return bad("change points outside the stream range");
                }
                if point_a >= point_b {
                    return bad("point A must precede point B");
                }
                if !(ratio > 0.0) {
                    return Err(SimError::InvalidSpec(
                        "injection ratio must be positive".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Change points, in order.
    pub fn change_points(&self) -> Vec<NaiveDate> {
        match self.kind {
            ScenarioKind::Baseline => vec![],
            ScenarioKind::HardMining { point_a, .. } => vec![point_a],
            ScenarioKind::MetadataFilterFailure {
                point_a, point_b, ..
            }
            | ScenarioKind::NoMetadataOod {
                point_a, point_b, ..
            } => vec![point_a, point_b],
        }
    }
}

fn group_by_day(stream: &[ExamRecord]) -> BTreeMap<NaiveDate, Vec<&ExamRecord>> {
    let mut out: BTreeMap<NaiveDate, Vec<&ExamRecord>> = BTreeMap::new();
    for e in stream {
        out.entry(e.date()).or_default().push(e);
    }
    out
}

/// Applies a drift scenario to a base stream. The base stream's own dates
/// drive daily counts; injected exams are spread over each day and the
/// result is sorted by timestamp.
pub fn apply_scenario(
    base: &[ExamRecord],
    scenario: &ScenarioSpec,
    sim: &Simulator,
    seed: u64,
) -> Result<Vec<ExamRecord>, SimError> {
    scenario.validate()?;
    let mut out: Vec<ExamRecord> = match &scenario.kind {
        ScenarioKind::Baseline => base.to_vec(),
        &ScenarioKind::HardMining { q, point_a } => {
            let pool = hard_mine_pool(base, q)?;
            let mut out = Vec::with_capacity(base.len());
            for (date, exams) in group_by_day(base) {
                if date < point_a {
                    out.extend(exams.into_iter().cloned());
                    continue;
                }
                let mut rng = keyed_rng(seed, "hard-mining", Some(date), 0);
                for slot in exams {
                    let drawn = &base[pool[rng.random_range(0..pool.len())]];
                    let mut e = drawn.clone();
                    e.exam_id = format!("{}~{}", slot.exam_id, drawn.exam_id);
                    e.timestamp = slot.timestamp;
                    out.push(e);
                }
            }
            out
        }
        &ScenarioKind::MetadataFilterFailure {
            point_a,
            point_b,
            lateral_ratio,
        } => {
            let mut out = Vec::with_capacity(base.len() * 2);
            for (date, exams) in group_by_day(base) {
                if date >= point_a {
                    let n = (lateral_ratio * exams.len() as f64).round() as usize;
                    out.extend(sim.day_exams(date, n, seed, "lateral", Population::Lateral));
                }
                if date < point_b {
                    out.extend(exams.into_iter().cloned());
                }
            }
            out
        }
        &ScenarioKind::NoMetadataOod {
            point_a,
            point_b,
            ood_ratio,
        } => {
            let pool = sim.ood_pool(seed);
            let mut order: Vec<usize> = (0..pool.len()).collect();
            let mut shuffle_rng = keyed_rng(seed, "ood-shuffle", None, 0);
            order.shuffle(&mut shuffle_rng);
            let mut cursor = 0usize;
            let mut cycle = 0usize;
            let mut out = Vec::with_capacity(base.len() * 4);
            for (date, exams) in group_by_day(base) {
                if date >= point_a {
                    let n = (ood_ratio * exams.len() as f64).round() as usize;
                    for j in 0..n {
                        if cursor == order.len() {
                            // pool exhausted: reset and reshuffle
                            order.shuffle(&mut shuffle_rng);
                            cursor = 0;
                            cycle += 1;
                        }
                        let mut e = pool[order[cursor]].clone();
                        cursor += 1;
                        e.exam_id = format!("{}-c{cycle}", e.exam_id);
                        e.timestamp = time_slot(date, j, n);
                        out.push(e);
                    }
                }
                if date < point_b {
                    out.extend(exams.into_iter().cloned());
                }
            }
            out
        }
    };
    out.sort_by_key(|e| e.timestamp);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_record;

    fn d(m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2014, m, day).unwrap()
    }

    fn small_sim() -> Simulator {
        let mut spec = PopulationSpec::default();
        spec.daily.weekday_mean = 40.0;
        spec.daily.weekend_mean = 30.0;
        spec.ood.pool_size = 50;
        Simulator::new(spec).unwrap()
    }

    #[test]
    fn baseline_is_deterministic_and_valid() {
        let sim = small_sim();
        let a = sim.generate_baseline(d(1, 1), d(1, 10), 7);
        let b = sim.generate_baseline(d(1, 1), d(1, 10), 7);
        assert_eq!(a, b);
        assert_ne!(a, sim.generate_baseline(d(1, 1), d(1, 10), 8));
        let schema = sim.schema();
        for e in &a {
            validate_record(e.clone(), &schema).unwrap();
        }
        assert!(a.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
    }

    #[test]
    fn zero_prevalence_gives_no_positives() {
        let mut spec = PopulationSpec::default();
        spec.labels[0].prevalence = 0.0;
        let sim = Simulator::new(spec).unwrap();
        let s = sim.generate_baseline(d(1, 1), d(1, 5), 1);
        assert!(!s.is_empty());
        assert!(s.iter().all(|e| e.label(0) == Some(false)));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let spec = PopulationSpec {
            latent_dim: 8,
            ..PopulationSpec::default()
        };
        assert!(Simulator::new(spec).is_err());
        let mut spec = PopulationSpec::default();
        spec.categorical[1].categories[0].weight = 0.9;
        assert!(Simulator::new(spec).is_err());
        let mut spec = PopulationSpec::default();
        spec.ood.label = "nope".into();
        assert!(Simulator::new(spec).is_err());
    }

    fn exam_with(pred: f64, truth: bool) -> ExamRecord {
        ExamRecord {
            exam_id: String::new(),
            timestamp: d(1, 1).and_time(NaiveTime::MIN),
            categorical: BTreeMap::new(),
            continuous: BTreeMap::new(),
            latent: vec![0.0],
            predictions: vec![pred],
            ground_truth: Some(vec![Some(truth)]),
        }
    }

    #[test]
    fn hard_mining_quantile_rule() {
        let stream = vec![exam_with(0.1, true), exam_with(0.9, true)];
        assert_eq!(hard_mine_pool(&stream, 0.25).unwrap(), vec![0]);
        assert_eq!(hard_mine_pool(&stream, 1.0).unwrap(), vec![0, 1]);
        assert!(matches!(
            hard_mine_pool(&stream, 0.0),
            Err(SimError::InvalidQuantile(_))
        ));
        let unlabeled = vec![ExamRecord {
            ground_truth: None,
            ..exam_with(0.5, true)
        }];
        assert!(matches!(
            hard_mine_pool(&unlabeled, 0.5),
            Err(SimError::EmptyPool)
        ));
    }

    #[test]
    fn full_quantile_pool_is_whole_stream_and_small_q_hurts_auroc() {
        let sim = small_sim();
        let s = sim.generate_baseline(d(1, 1), d(1, 20), 3);
        let all = hard_mine_pool(&s, 1.0).unwrap();
        assert_eq!(all.len(), s.len());
        let pool = hard_mine_pool(&s, 0.25).unwrap();
        let pool_refs: Vec<&ExamRecord> = pool.iter().map(|&i| &s[i]).collect();
        let all_refs: Vec<&ExamRecord> = s.iter().collect();
        let pool_auc = stats::micro_auroc(&pool_refs, None).unwrap();
        let all_auc = stats::micro_auroc(&all_refs, None).unwrap();
        assert!(pool_auc < all_auc, "{pool_auc} vs {all_auc}");
    }

    #[test]
    fn baseline_scenario_is_identity() {
        let sim = small_sim();
        let s = sim.generate_baseline(d(1, 1), d(1, 10), 3);
        let spec = ScenarioSpec {
            kind: ScenarioKind::Baseline,
            start: d(1, 1),
            end: d(1, 10),
        };
        assert_eq!(apply_scenario(&s, &spec, &sim, 3).unwrap(), s);
    }

    #[test]
    fn lateral_scenario_removes_frontal_after_b() {
        let sim = small_sim();
        let s = sim.generate_baseline(d(1, 1), d(1, 20), 3);
        let spec = ScenarioSpec {
            kind: ScenarioKind::MetadataFilterFailure {
                point_a: d(1, 8),
                point_b: d(1, 15),
                lateral_ratio: 1.0,
            },
            start: d(1, 1),
            end: d(1, 20),
        };
        let out = apply_scenario(&s, &spec, &sim, 3).unwrap();
        let frontal = ["PA", "AP", "AP_horizontal"];
        for e in &out {
            let view = e.category("view_position");
            if e.date() >= d(1, 15) {
                assert!(!frontal.contains(&view));
                assert_eq!(view, "LATERAL");
            }
            if e.date() < d(1, 8) {
                assert_ne!(view, "LATERAL");
            }
        }
        let mid = out.iter().filter(|e| e.date() == d(1, 10)).count();
        let before = s.iter().filter(|e| e.date() == d(1, 10)).count();
        assert_eq!(mid, 2 * before);
    }

    #[test]
    fn ood_scenario_ratio_and_pool_reset() {
        let sim = small_sim();
        let s = sim.generate_baseline(d(1, 1), d(1, 20), 3);
        let spec = ScenarioSpec {
            kind: ScenarioKind::NoMetadataOod {
                point_a: d(1, 8),
                point_b: d(1, 15),
                ood_ratio: 3.0,
            },
            start: d(1, 1),
            end: d(1, 20),
        };
        let out = apply_scenario(&s, &spec, &sim, 3).unwrap();
        for day in 8..15 {
            let date = d(1, day);
            let orig = s.iter().filter(|e| e.date() == date).count();
            let ood = out
                .iter()
                .filter(|e| e.date() == date && e.exam_id.starts_with("ood-"))
                .count();
            assert_eq!(ood, 3 * orig);
        }
        assert!(out
            .iter()
            .filter(|e| e.date() >= d(1, 15))
            .all(|e| e.exam_id.starts_with("ood-")));
        // 50-exam pool is exhausted many times over
        assert!(out.iter().any(|e| e.exam_id.ends_with("-c3")));
        let ood: Vec<&ExamRecord> = out
            .iter()
            .filter(|e| e.exam_id.starts_with("ood-"))
            .collect();
        assert!(ood
            .iter()
            .all(|e| e.categorical.values().all(Option::is_none)));
        let pneumonia = sim.label_index("pneumonia").unwrap();
        assert!(ood.iter().all(|e| {
            let gt = e.ground_truth.as_ref().unwrap();
            gt.iter()
                .enumerate()
                .all(|(i, g)| g.is_some() == (i == pneumonia))
        }));
        assert_eq!(apply_scenario(&s, &spec, &sim, 3).unwrap(), out);
    }

    #[test]
    fn scenario_dates_validated() {
        let sim = small_sim();
        let s = sim.generate_baseline(d(1, 1), d(1, 5), 3);
        let spec = ScenarioSpec {
            kind: ScenarioKind::NoMetadataOod {
                point_a: d(1, 4),
                point_b: d(1, 2),
                ood_ratio: 3.0,
            },
            start: d(1, 1),
            end: d(1, 5),
        };
        assert!(matches!(
            apply_scenario(&s, &spec, &sim, 1),
            Err(SimError::InvalidScenarioDates(_))
        ));
    }

    #[test]
    fn population_spec_round_trip_and_partial_documents() {
        let spec = PopulationSpec::default();
        let json = serde_json::to_string(&spec).unwrap();
        let back: PopulationSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        let partial: PopulationSpec = serde_json::from_str(r#"{"signal": 3.0}"#).unwrap();
        assert_eq!(partial.signal, 3.0);
        assert_eq!(partial.labels, spec.labels);
    }
}
