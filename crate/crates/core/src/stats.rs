//! Two-sample statistics and performance measures.
//!
//! Only test statistics are produced; p-values are deliberately absent
//! since they are too noisy to be used as a similarity measure.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::ExamRecord;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("empty sample")]
    EmptySample,
    #[error("empty window")]
    EmptyWindow,
    #[error("category `{0}` has zero expected frequency")]
    ZeroExpected(String),
    #[error("labels contain a single class")]
    DegenerateLabels,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("zero variance")]
    ZeroVariance,
    #[error("non-finite value in sample")]
    NonFinite,
    #[error("quantile level {0} outside [0, 1]")]
    InvalidLevel(f64),
}

fn sorted_finite<T: Scalar>(values: &[T]) -> Result<Vec<T>, StatsError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut out = values.to_vec();
    out.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    Ok(out)
}

/// Two-sample Kolmogorov-Smirnov statistic: the largest absolute gap
/// between the two empirical CDFs, evaluated at every pooled value.
pub fn ks_statistic<T: Scalar>(reference: &[T], window: &[T]) -> Result<T, StatsError> {
    if reference.is_empty() || window.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let a = sorted_finite(reference)?;
    let b = sorted_finite(window)?;
    Ok(ks_sorted(&a, &b))
}

/// [`ks_statistic`] on inputs that are already sorted ascending and non-empty.
pub fn ks_sorted<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = T::of_usize(a.len());
    let m = T::of_usize(b.len());
    let (mut i, mut j) = (0, 0);
    let mut d = T::zero();
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        let gap = (T::of_usize(i) / n - T::of_usize(j) / m).abs();
        if gap > d {
            d = gap;
        }
    }
    d
}

/// Pearson chi-square goodness-of-fit statistic of `observed` counts
/// against `expected` proportions.
///
/// Categories absent from `expected` count as probability zero; a
/// zero-probability category that was observed is an error.
pub fn chi2_statistic<K: Ord + ToString, T: Scalar>(
    expected: &BTreeMap<K, T>,
    observed: &BTreeMap<K, u64>,
) -> Result<T, StatsError> {
    let total: u64 = observed.values().sum();
    if total == 0 {
        return Err(StatsError::EmptyWindow);
    }
    let n = T::of(total as f64);
    let mut stat = T::zero();
    for (category, &count) in observed {
        let p = expected.get(category).copied().unwrap_or_else(T::zero);
        if p <= T::zero() {
            if count > 0 {
                return Err(StatsError::ZeroExpected(category.to_string()));
            }
            continue;
        }
        let e = n * p;
        let diff = T::of(count as f64) - e;
        stat = stat + diff * diff / e;
    }
    for (category, &p) in expected {
        if !observed.contains_key(category) && p > T::zero() {
            // observed zero: (0 - np)^2 / np = np
            stat = stat + n * p;
        }
    }
    Ok(stat)
}

/// Reference proportions with `pseudo_count` added to every category in
/// the union of the reference and the window categories.
pub fn smoothed_proportions<K, T, I>(
    reference_counts: &BTreeMap<K, u64>,
    window_categories: I,
    pseudo_count: f64,
) -> BTreeMap<K, T>
where
    K: Ord + Clone,
    T: Scalar,
    I: IntoIterator<Item = K>,
{
    let mut counts: BTreeMap<K, f64> = reference_counts
        .iter()
        .map(|(k, &c)| (k.clone(), c as f64))
        .collect();
    for k in window_categories {
        counts.entry(k).or_insert(0.0);
    }
    let total: f64 = counts.values().map(|c| c + pseudo_count).sum();
    counts
        .into_iter()
        .map(|(k, c)| (k, T::of((c + pseudo_count) / total)))
        .collect()
}

/// Area under the ROC curve, as the tie-aware Mann-Whitney statistic
/// `(concordant + 0.5 * tied) / (positives * negatives)`.
pub fn auroc<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<T, StatsError> {
    if scores.len() != labels.len() {
        return Err(StatsError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let positives = labels.iter().filter(|&&l| l).count() as u128;
    let negatives = labels.len() as u128 - positives;
    if positives == 0 || negatives == 0 {
        return Err(StatsError::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));

    // Twice the Mann-Whitney U, kept integral.
    let mut twice_u: u128 = 0;
    let mut negatives_below: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let score = scores[order[start]];
        let mut end = start;
        let (mut pos, mut neg) = (0u128, 0u128);
        while end < order.len() && scores[order[end]] == score {
            if labels[order[end]] {
                pos += 1;
            } else {
                neg += 1;
            }
            end += 1;
        }
        twice_u += 2 * pos * negatives_below + pos * neg;
        negatives_below += neg;
        start = end;
    }
    Ok(T::of(twice_u as f64) / T::of((2 * positives * negatives) as f64))
}

/// Micro-averaged AUROC over the pooled (exam, label) pairs that carry an
/// annotation. `labels` restricts the pool to a subset of label indices.
pub fn micro_auroc(exams: &[&ExamRecord], labels: Option<&[usize]>) -> Result<f64, StatsError> {
    let mut scores = Vec::new();
    let mut truth = Vec::new();
    for exam in exams {
        let Some(gt) = &exam.ground_truth else {
            continue;
        };
        for (i, (&score, label)) in exam.predictions.iter().zip(gt).enumerate() {
            if labels.is_some_and(|ls| !ls.contains(&i)) {
                continue;
            }
            if let Some(label) = label {
                scores.push(score);
                truth.push(*label);
            }
        }
    }
    auroc(&scores, &truth)
}

/// Product-moment correlation.
pub fn pearson_corr<T: Scalar>(x: &[T], y: &[T]) -> Result<T, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::EmptySample);
    }
    let n = T::of_usize(x.len());
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy = sxy + da * db;
        sxx = sxx + da * da;
        syy = syy + db * db;
    }
    if sxx <= T::zero() || syy <= T::zero() {
        return Err(StatsError::ZeroVariance);
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Ok(r.max(-T::one()).min(T::one()))
}

/// Mid-ranks (1-based), ties sharing the average rank.
pub fn ranks<T: Scalar>(values: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut out = vec![T::zero(); values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = T::of((start + end + 1) as f64 / 2.0);
        for &i in &order[start..end] {
            out[i] = rank;
        }
        start = end;
    }
    out
}

/// Spearman rank correlation, the rank-based alternative to
/// [`pearson_corr`] for weight calibration.
pub fn spearman_corr<T: Scalar>(x: &[T], y: &[T]) -> Result<T, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    pearson_corr(&ranks(x), &ranks(y))
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile<T: Scalar>(values: &[T], q: f64) -> Result<T, StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(StatsError::InvalidLevel(q));
    }
    let sorted = sorted_finite(values)?;
    Ok(quantile_sorted(&sorted, q))
}

pub(crate) fn quantile_sorted<T: Scalar>(sorted: &[T], q: f64) -> T {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = T::of(h - lo as f64);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Mean and population standard deviation (divide by n).
pub fn mean_std<T: Scalar>(values: &[T]) -> Result<(T, T), StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let n = T::of_usize(values.len());
    let mean = values.iter().copied().sum::<T>() / n;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    Ok((mean, var.sqrt()))
}
