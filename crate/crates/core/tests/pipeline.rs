use chrono::NaiveDate;
use mmc_core::concordance::{
    calibrate, reference_window_values, reference_windows, run_series, CalibrationOptions,
    MetricGroups, MetricSet, ReferenceSet, Scorer, SeriesOptions,
};
use mmc_core::model::{ContinuousFeature, DetectionWindow, FeatureSchema};
use mmc_core::report::{segment_of, summarize};
use mmc_core::sim::apply_scenario;
use mmc_core::stats::{mean_std, micro_auroc};
use mmc_core::window::{bootstrap_metric, roll_windows, ReferenceSample};
use mmc_core::{
    BootstrapSpec, ConcordanceError, ExamRecord, MetricDescriptor, PopulationSpec, ScenarioKind,
    ScenarioSpec, Simulator, WindowSpec,
};

fn d(m: u32, day: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(2014, m, day).unwrap()
}

fn quick() -> CalibrationOptions {
    CalibrationOptions {
        bootstrap_spec: BootstrapSpec::new(300, 4, 5).unwrap(),
        ..CalibrationOptions::default()
    }
}

fn sim() -> Simulator {
    Simulator::new(PopulationSpec::default()).unwrap()
}

#[test]
fn bootstrap_is_identical_across_thread_counts() {
    let s = sim();
    let stream = s.generate_baseline(d(1, 1), d(3, 31), 4);
    let metrics = MetricSet::from_schema(&s.schema());
    let reference = ReferenceSet::new(stream.clone(), &metrics).unwrap();
    let windows = roll_windows(&stream, &WindowSpec::default(), d(3, 1), d(3, 10)).unwrap();
    let spec = BootstrapSpec::new(500, 5, 17).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let refs: Vec<&DetectionWindow<'_>> = windows.iter().collect();
            reference_window_values(&refs, &WindowSpec::default(), &metrics, &reference, &spec)
                .unwrap()
        })
    };
    let one = run(1);
    let four = run(4);
    let bits = |v: &Vec<Vec<f64>>| v.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&one), bits(&four));
    assert_eq!(bits(&one), bits(&run(1)));
}

#[test]
fn more_repeats_reduce_across_seed_variance() {
    let s = sim();
    let a = s.generate_baseline(d(1, 1), d(1, 31), 1);
    let b = s.generate_baseline(d(2, 1), d(3, 2), 2);
    let metric = MetricDescriptor::continuous("age");
    let reference = ReferenceSample::from_exams(&metric, &a).unwrap();
    let window = DetectionWindow::new(d(3, 2), b.iter().collect());
    let spread = |n: usize| {
        let v: Vec<f64> = (0..100)
            .map(|seed| {
                bootstrap_metric(
                    &window,
                    &metric,
                    &reference,
                    &BootstrapSpec::new(2500, n, seed).unwrap(),
                )
                .unwrap()
            })
            .collect();
        mean_std(&v).unwrap().1
    };
    let (s1, s20) = (spread(1), spread(20));
    assert!(s20 < s1, "N=20 std {s20} vs N=1 std {s1}");
}

#[test]
fn standardized_reference_windows_are_unit_normal() {
    let s = sim();
    let reference = ReferenceSet::new(
        s.generate_baseline(d(1, 1), d(3, 31), 1),
        &MetricSet::from_schema(&s.schema()),
    )
    .unwrap();
    let options = quick();
    let cal = calibrate(&s.schema(), &reference, &options).unwrap();
    let scorer = Scorer::new(&cal, &reference, MetricGroups::ALL).unwrap();
    let windows = reference_windows(&reference, &options.window_spec).unwrap();
    let usable: Vec<&DetectionWindow<'_>> = windows
        .iter()
        .filter(|w| !w.is_skipped(&options.window_spec))
        .collect();
    assert_eq!(usable.len(), cal.reference_windows);
    let raw = reference_window_values(
        &usable,
        &options.window_spec,
        scorer.metrics(),
        &reference,
        &options.bootstrap_spec,
    )
    .unwrap();
    let standardized: Vec<Vec<Option<f64>>> = raw
        .into_iter()
        .map(|r| scorer.score_values(r).unwrap().standardized)
        .collect();
    for (i, m) in cal.metrics.iter().enumerate() {
        if m.excluded {
            continue;
        }
        let column: Vec<f64> = standardized.iter().map(|row| row[i].unwrap()).collect();
        let (mu, sd) = mean_std(&column).unwrap();
        assert!(mu.abs() <= 1e-9, "{}: mean {mu}", m.metric_id);
        assert!((sd - 1.0).abs() <= 1e-9, "{}: std {sd}", m.metric_id);
    }
}

fn with_difficulty(exams: &mut [ExamRecord]) {
    for e in exams {
        let gt = e.ground_truth.as_ref().unwrap();
        let errs: Vec<f64> = e
            .predictions
            .iter()
            .zip(gt)
            .filter_map(|(p, t)| t.map(|t| (p - if t { 1.0 } else { 0.0 }).abs()))
            .collect();
        let v = errs.iter().sum::<f64>() / errs.len() as f64;
        e.continuous.insert("difficulty".into(), Some(v));
    }
}

#[test]
fn planted_performance_tracker_gets_the_largest_weight() {
    let s = sim();
    let mut schema = s.schema();
    schema.continuous_features.push(ContinuousFeature {
        name: "difficulty".into(),
        unit: String::new(),
    });
    let schema = FeatureSchema::new(
        schema.categorical_features,
        schema.continuous_features,
        schema.latent_dim,
        schema.labels,
    )
    .unwrap();
    let mut exams = s.generate_baseline(d(1, 1), d(3, 31), 1);
    with_difficulty(&mut exams);
    let reference = ReferenceSet::new(exams, &MetricSet::from_schema(&schema)).unwrap();
    let cal = calibrate(&schema, &reference, &quick()).unwrap();
    let tracker = cal.entry("cont:difficulty").unwrap().alpha.unwrap();
    for m in &cal.metrics {
        assert!(
            m.alpha.unwrap() <= tracker,
            "{} {:?} > {tracker}",
            m.metric_id,
            m.alpha
        );
    }
}

#[test]
fn reference_without_truth_gives_unweighted_calibration() {
    let s = sim();
    let mut exams = s.generate_baseline(d(1, 1), d(2, 28), 1);
    exams.iter_mut().for_each(|e| e.ground_truth = None);
    let reference = ReferenceSet::new(exams, &MetricSet::from_schema(&s.schema())).unwrap();
    let cal = calibrate(&s.schema(), &reference, &quick()).unwrap();
    assert!(!cal.has_weights());
    assert_eq!(cal.alpha_windows, 0);
    let back = mmc_core::Calibration::from_json(&cal.to_json().unwrap()).unwrap();
    assert_eq!(back, cal);
}

#[test]
fn scorer_rejects_foreign_reference() {
    let s = sim();
    let metrics = MetricSet::from_schema(&s.schema());
    let a = ReferenceSet::new(s.generate_baseline(d(1, 1), d(2, 28), 1), &metrics).unwrap();
    let b = ReferenceSet::new(s.generate_baseline(d(1, 1), d(2, 28), 2), &metrics).unwrap();
    let cal = calibrate(&s.schema(), &a, &quick()).unwrap();
    assert!(matches!(
        Scorer::new(&cal, &b, MetricGroups::ALL),
        Err(ConcordanceError::CalibrationMismatch { .. })
    ));
}

#[test]
fn low_volume_week_is_skipped_exactly() {
    let s = sim();
    let reference = ReferenceSet::new(
        s.generate_baseline(d(1, 1), d(2, 28), 1),
        &MetricSet::from_schema(&s.schema()),
    )
    .unwrap();
    let cal = calibrate(&s.schema(), &reference, &quick()).unwrap();
    let scorer = Scorer::new(&cal, &reference, MetricGroups::ALL)
        .unwrap()
        .with_window_spec(WindowSpec::new(7, 1, 150).unwrap());
    let mut stream = s.generate_baseline(d(3, 1), d(4, 30), 2);
    stream.retain(|e| !(e.date() >= d(3, 20) && e.date() < d(3, 27)) || e.exam_id.ends_with('0'));
    let series = run_series(
        &stream,
        &scorer,
        d(3, 7),
        d(4, 30),
        &SeriesOptions::default(),
    )
    .unwrap();
    let mut skipped = 0;
    for row in &series.rows {
        assert_eq!(row.skipped, row.n_exams < 150, "{}", row.index_date);
        assert_eq!(row.skipped, row.mmc0.is_none());
        skipped += usize::from(row.skipped);
    }
    assert!(skipped > 0);
}

#[test]
fn quick_baseline_stays_near_zero() {
    let s = sim();
    let reference = ReferenceSet::new(
        s.generate_baseline(d(1, 1), d(3, 31), 1),
        &MetricSet::from_schema(&s.schema()),
    )
    .unwrap();
    let cal = calibrate(&s.schema(), &reference, &quick()).unwrap();
    let scorer = Scorer::new(&cal, &reference, MetricGroups::ALL).unwrap();
    let stream = s.generate_baseline(d(4, 1), d(6, 30), 2);
    let series = run_series(
        &stream,
        &scorer,
        d(4, 30),
        d(6, 30),
        &SeriesOptions::default(),
    )
    .unwrap();
    let report = summarize(&series, &[], 30);
    let mmcw = report.segments[0].mmcw_mean.unwrap();
    assert!(mmcw.abs() < 0.5, "baseline MMC_w mean {mmcw}");
}

fn segment_auroc(stream: &[ExamRecord], cps: &[NaiveDate], labels: Option<&[usize]>) -> Vec<f64> {
    let windows = roll_windows(stream, &WindowSpec::default(), d(5, 30), d(10, 31)).unwrap();
    let mut sums = vec![(0.0, 0usize); cps.len() + 1];
    for w in &windows {
        if let Some(i) = segment_of(w.index_date, cps, 30) {
            sums[i].0 += micro_auroc(&w.exams, labels).unwrap();
            sums[i].1 += 1;
        }
    }
    sums.into_iter().map(|(s, n)| s / n as f64).collect()
}

#[test]
fn lateral_injection_lowers_auroc_in_two_steps() {
    let s = sim();
    let base = s.generate_baseline(d(5, 1), d(10, 31), 2);
    let (a, b) = (d(7, 1), d(9, 1));
    let scenario = ScenarioSpec {
        kind: ScenarioKind::MetadataFilterFailure {
            point_a: a,
            point_b: b,
            lateral_ratio: 1.0,
        },
        start: d(5, 1),
        end: d(10, 31),
    };
    let stream = apply_scenario(&base, &scenario, &s, 3).unwrap();
    let au = segment_auroc(&stream, &[a, b], None);
    assert!(au[0] - au[1] > 0.02 && au[1] - au[2] > 0.02, "{au:?}");
}

#[test]
fn ood_injection_hides_three_quarters_of_metadata() {
    let s = sim();
    let base = s.generate_baseline(d(5, 1), d(10, 31), 2);
    let (a, b) = (d(7, 1), d(9, 1));
    let scenario = ScenarioSpec {
        kind: ScenarioKind::NoMetadataOod {
            point_a: a,
            point_b: b,
            ood_ratio: 3.0,
        },
        start: d(5, 1),
        end: d(10, 31),
    };
    let stream = apply_scenario(&base, &scenario, &s, 3).unwrap();
    let windows = roll_windows(
        &stream,
        &WindowSpec::default(),
        a + chrono::Days::new(29),
        b - chrono::Days::new(1),
    )
    .unwrap();
    for w in &windows {
        for f in &s.schema().categorical_features {
            let missing = w
                .exams
                .iter()
                .filter(|e| e.categorical.get(&f.name).cloned().flatten().is_none())
                .count();
            let rate = missing as f64 / w.len() as f64;
            assert!(
                (rate - 0.75).abs() <= 0.02,
                "{} {}: {rate}",
                w.index_date,
                f.name
            );
        }
    }
    let again = apply_scenario(&base, &scenario, &s, 3).unwrap();
    assert_eq!(stream, again);
}
