use mmc_core::concordance::{
    aggregate, alpha_from_series, standardization_from_values, standardize, Correlation,
};
use mmc_core::stats::mean_std;
use mmc_core::WeightMode;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn tracking_metric_outweighs_noise_over_twenty_seeds() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho: Vec<f64> = (0..200).map(|_| rng.random_range(0.70..0.95)).collect();
        let tracking: Vec<f64> = rho.iter().map(|r| (-4.0 * r).exp()).collect();
        let noise: Vec<f64> = (0..200).map(|_| rng.sample(StandardNormal)).collect();
        let a1 = alpha_from_series(&tracking, &rho, Correlation::Pearson).unwrap();
        let a2 = alpha_from_series(&noise, &rho, Correlation::Pearson).unwrap();
        assert!(a1 > 0.9 && a2 < 0.3, "seed {seed}: {a1} {a2}");
    }
}

fn terms() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-10.0f64..10.0, 0.01f64..1.0), 1..12)
}

proptest! {
    #[test]
    fn normalized_score_ignores_weight_scale(t in terms(), c in 0.1f64..10.0) {
        let a: Vec<(f64, Option<f64>)> = t.iter().map(|&(s, w)| (s, Some(w))).collect();
        let b: Vec<(f64, Option<f64>)> = t.iter().map(|&(s, w)| (s, Some(w * c))).collect();
        let (m0a, wa) = aggregate(&a, WeightMode::Normalized).unwrap();
        let (m0b, wb) = aggregate(&b, WeightMode::Normalized).unwrap();
        prop_assert_eq!(m0a, m0b);
        prop_assert!((wa.unwrap() - wb.unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn scores_lie_within_the_flipped_terms(t in terms()) {
        let a: Vec<(f64, Option<f64>)> = t.iter().map(|&(s, w)| (s, Some(w))).collect();
        let (m0, mw) = aggregate(&a, WeightMode::Normalized).unwrap();
        let lo = t.iter().map(|p| -p.0).fold(f64::INFINITY, f64::min) - 1e-9;
        let hi = t.iter().map(|p| -p.0).fold(f64::NEG_INFINITY, f64::max) + 1e-9;
        prop_assert!(m0 >= lo && m0 <= hi);
        let mw = mw.unwrap();
        prop_assert!(mw >= lo && mw <= hi);
    }

    #[test]
    fn calibrated_columns_standardize_to_unit_normal(
        rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 3..40),
    ) {
        let st = standardization_from_values(&rows, 3).unwrap();
        for (i, s) in st.iter().enumerate() {
            if s.is_degenerate() {
                continue;
            }
            let col: Vec<f64> = rows.iter().map(|r| standardize(r[i], s.zeta, s.eta).unwrap()).collect();
            let (mu, sd) = mean_std(&col).unwrap();
            prop_assert!(mu.abs() <= 1e-9 && (sd - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn alpha_is_a_bounded_absolute_correlation(
        xy in prop::collection::vec((-5.0f64..5.0, 0.5f64..1.0), 3..40),
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
        for c in [Correlation::Pearson, Correlation::Spearman] {
            let a = alpha_from_series(&x, &y, c).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            let flipped: Vec<f64> = x.iter().map(|v| -v).collect();
            prop_assert!((alpha_from_series(&flipped, &y, c).unwrap() - a).abs() <= 1e-12);
        }
    }
}
