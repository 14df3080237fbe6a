use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context};
use chrono::{DateTime, Days, NaiveDate};
use log::{info, warn};
use mmc_core::concordance::{Correlation, WeightOptions};
use mmc_core::images::{two_population_set, GrayImage, PatternPopulation};
use mmc_core::report::summarize;
use mmc_core::sim::apply_scenario;
use mmc_core::window::substream_seed;
use mmc_core::{
    calibrate as run_calibration, run_series, BootstrapSpec, Calibration, CalibrationOptions,
    ConcordanceError, ConcordanceSeries, FeatureSchema, MetricGroups, MetricSet, PopulationSpec,
    ReferenceSet, ScenarioKind, ScenarioSpec, Scorer, SeriesOptions, Simulator, Vae, VaeConfig,
    WeightMode, WindowSpec,
};
use serde::{Deserialize, Serialize};

use crate::io::{self, write_atomic};
use crate::{
    CalibrateArgs, Classify, CorrelationArg, EncodeArgs, Failure, ImageSource, MonitorArgs,
    ReportArgs, ReportFormat, ScenarioArg, SimulateArgs, TrainVaeArgs,
};

type Outcome = Result<(), Failure>;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SimulateConfig {
    seed: Option<u64>,
    population: PopulationSpec,
    scenario: Option<ScenarioSpec>,
}

/// Written next to a simulated stream so `report` can find the change points.
#[derive(Debug, Serialize, Deserialize)]
struct ScenarioRecord {
    seed: u64,
    scenario: ScenarioSpec,
    change_points: Vec<NaiveDate>,
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .config()?;
    toml::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .config()
}

fn default_range() -> (NaiveDate, NaiveDate) {
    (
        NaiveDate::from_ymd_opt(2014, 5, 1).unwrap(),
        NaiveDate::from_ymd_opt(2014, 10, 31).unwrap(),
    )
}

fn build_scenario(args: &SimulateArgs, from_config: Option<&ScenarioSpec>) -> ScenarioSpec {
    let (d_start, d_end) = from_config.map_or_else(default_range, |s| (s.start, s.end));
    let start = args.start.unwrap_or(d_start);
    let end = args.end.unwrap_or(d_end);
    let span = (end - start).num_days().max(0) as u64;
    let cfg_kind = from_config.map(|s| &s.kind);
    let (cfg_a, cfg_b) = match cfg_kind {
        Some(&ScenarioKind::HardMining { point_a, .. }) => (Some(point_a), None),
        Some(&ScenarioKind::MetadataFilterFailure {
            point_a, point_b, ..
        })
        | Some(&ScenarioKind::NoMetadataOod {
            point_a, point_b, ..
        }) => (Some(point_a), Some(point_b)),
        _ => (None, None),
    };
    let point_a = args
        .point_a
        .or(cfg_a)
        .unwrap_or(start + Days::new(span / 3));
    let point_b = args
        .point_b
        .or(cfg_b)
        .unwrap_or(start + Days::new(2 * span / 3));
    let chosen = args.scenario.unwrap_or(match cfg_kind {
        Some(ScenarioKind::HardMining { .. }) => ScenarioArg::HardMining,
        Some(ScenarioKind::MetadataFilterFailure { .. }) => ScenarioArg::MetadataFilterFailure,
        Some(ScenarioKind::NoMetadataOod { .. }) => ScenarioArg::NoMetadataOod,
        _ => ScenarioArg::Baseline,
    });
    let kind = match chosen {
        ScenarioArg::Baseline => ScenarioKind::Baseline,
        ScenarioArg::HardMining => {
            let cfg_q = match cfg_kind {
                Some(&ScenarioKind::HardMining { q, .. }) => Some(q),
                _ => None,
            };
            ScenarioKind::HardMining {
                q: args.q.or(cfg_q).unwrap_or(0.25),
                point_a,
            }
        }
        ScenarioArg::MetadataFilterFailure => {
            let cfg_ratio = match cfg_kind {
                Some(&ScenarioKind::MetadataFilterFailure { lateral_ratio, .. }) => {
                    Some(lateral_ratio)
                }
                _ => None,
            };
            ScenarioKind::MetadataFilterFailure {
                point_a,
                point_b,
                lateral_ratio: args.ratio.or(cfg_ratio).unwrap_or(1.0),
            }
        }
        ScenarioArg::NoMetadataOod => {
            let cfg_ratio = match cfg_kind {
                Some(&ScenarioKind::NoMetadataOod { ood_ratio, .. }) => Some(ood_ratio),
                _ => None,
            };
            ScenarioKind::NoMetadataOod {
                point_a,
                point_b,
                ood_ratio: args.ratio.or(cfg_ratio).unwrap_or(3.0),
            }
        }
    };
    ScenarioSpec { kind, start, end }
}

pub fn simulate(args: SimulateArgs) -> Outcome {
    let config: SimulateConfig = match &args.config {
        Some(p) => read_toml(p)?,
        None => SimulateConfig::default(),
    };
    let scenario = build_scenario(&args, config.scenario.as_ref());
    scenario.validate().config()?;
    let seed = args.seed.or(config.seed).unwrap_or(0);
    let sim = Simulator::new(config.population).config()?;
    let base = sim.generate_baseline(
        scenario.start,
        scenario.end,
        substream_seed(seed, "simulate-base", scenario.start, 0),
    );
    let scenario_seed = substream_seed(seed, "simulate-scenario", scenario.start, 0);
    let stream = apply_scenario(&base, &scenario, &sim, scenario_seed).data()?;

    write_atomic(&args.out, &io::stream_bytes(&stream).data()?).data()?;
    let schema = serde_json::to_string_pretty(&sim.schema()).data()?;
    write_atomic(&io::schema_path(&args.out), schema.as_bytes()).data()?;
    let record = ScenarioRecord {
        seed,
        change_points: scenario.change_points(),
        scenario: scenario.clone(),
    };
    let record = serde_json::to_string_pretty(&record).data()?;
    write_atomic(&io::scenario_path(&args.out), record.as_bytes()).data()?;

    println!(
        "wrote {} exams over {}..{} to {}",
        stream.len(),
        scenario.start,
        scenario.end,
        args.out.display()
    );
    match &scenario.kind {
        ScenarioKind::Baseline => println!("scenario: baseline"),
        ScenarioKind::HardMining { q, point_a } => {
            println!("scenario: hard_mining, q = {q}");
            println!("pool replacement starts {point_a}");
        }
        ScenarioKind::MetadataFilterFailure {
            point_a,
            point_b,
            lateral_ratio,
        } => {
            println!("scenario: metadata_filter_failure, lateral ratio {lateral_ratio}");
            println!("change points: A {point_a}, B {point_b}");
        }
        ScenarioKind::NoMetadataOod {
            point_a,
            point_b,
            ood_ratio,
        } => {
            println!("scenario: no_metadata_ood, ratio {ood_ratio}");
            println!("change points: A {point_a}, B {point_b}");
        }
    }
    Ok(())
}

fn load_images(
    source: &ImageSource,
    config: &VaeConfig,
    seed: u64,
) -> Result<Vec<(String, GrayImage)>, Failure> {
    match (&source.images, source.synthetic) {
        (Some(dir), _) => io::read_image_dir(dir, config.width, config.height).data(),
        (None, Some(n)) => {
            if config.width != config.height {
                return Err(Failure::Config(anyhow!(
                    "generated images are square; got {}x{}",
                    config.width,
                    config.height
                )));
            }
            Ok(two_population_set(n, config.height, seed)
                .into_iter()
                .enumerate()
                .map(|(i, (pop, img))| {
                    let tag = match pop {
                        PatternPopulation::A => "a",
                        PatternPopulation::B => "b",
                    };
                    (format!("synthetic-{i:05}-{tag}"), img)
                })
                .collect())
        }
        (None, None) => Err(Failure::Config(anyhow!("give --images or --synthetic"))),
    }
}

pub fn train_vae(args: TrainVaeArgs) -> Outcome {
    let mut config: VaeConfig = match &args.config {
        Some(p) => read_toml(p)?,
        None => VaeConfig::default(),
    };
    if let Some(v) = args.latent_dim {
        config.latent_dim = v;
    }
    if let Some(v) = args.epochs {
        config.max_epochs = v;
    }
    if let Some(v) = args.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = args.kl_coeff {
        config.kl_coeff = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    config.validate().config()?;
    let images = load_images(&args.source, &config, config.seed)?;
    let pixels: Vec<Vec<f64>> = images.into_iter().map(|(_, img)| img.pixels).collect();
    let mut vae = Vae::new(config).config()?;
    info!("training on {} images", pixels.len());
    let history = vae.train(&pixels).data()?;
    for h in &history {
        info!(
            "epoch {:>3}  loss {:.6}  recon {:.6}  kl {:.4}  lr {:.2e}",
            h.epoch, h.loss, h.reconstruction, h.kl, h.learning_rate
        );
    }
    write_atomic(&args.out, vae.to_json().data()?.as_bytes()).data()?;
    if let Some(path) = &args.history {
        let mut csv = String::from("epoch,loss,reconstruction,kl,learning_rate\n");
        for h in &history {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                h.epoch, h.loss, h.reconstruction, h.kl, h.learning_rate
            ));
        }
        write_atomic(path, csv.as_bytes()).data()?;
    }
    let (first, last) = (history.first().unwrap().loss, history.last().unwrap().loss);
    println!(
        "trained {} epochs, loss {first:.6} -> {last:.6}; wrote {}",
        history.len() - 1,
        args.out.display()
    );
    Ok(())
}

pub fn encode(args: EncodeArgs) -> Outcome {
    let text = fs::read_to_string(&args.vae)
        .with_context(|| format!("reading {}", args.vae.display()))
        .config()?;
    let vae = Vae::from_json(&text).config()?;
    let images = load_images(&args.source, vae.config(), args.seed)?;
    let mut out = String::new();
    for (name, img) in &images {
        let z = vae.latent(&img.pixels).data()?;
        out.push_str(&serde_json::json!({ "image": name, "latent": z }).to_string());
        out.push('\n');
    }
    write_atomic(&args.out, out.as_bytes()).data()?;
    println!("encoded {} images to {}", images.len(), args.out.display());
    Ok(())
}

fn label_indices(schema: &FeatureSchema, names: &[String]) -> Result<Option<Vec<usize>>, Failure> {
    if names.is_empty() {
        return Ok(None);
    }
    names
        .iter()
        .map(|n| {
            schema
                .label_index(n)
                .ok_or_else(|| Failure::Config(anyhow!("unknown label `{n}`")))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

/// Creation stamp from `SOURCE_DATE_EPOCH`, so that reruns stay byte-identical.
fn created_at() -> Result<Option<String>, Failure> {
    let Ok(raw) = std::env::var("SOURCE_DATE_EPOCH") else {
        return Ok(None);
    };
    let secs: i64 = raw
        .trim()
        .parse()
        .map_err(|_| Failure::Config(anyhow!("SOURCE_DATE_EPOCH `{raw}` is not an integer")))?;
    let t = DateTime::from_timestamp(secs, 0)
        .ok_or_else(|| Failure::Config(anyhow!("SOURCE_DATE_EPOCH out of range")))?;
    Ok(Some(t.to_rfc3339()))
}

fn concordance_failure(e: ConcordanceError) -> Failure {
    match e {
        ConcordanceError::CalibrationMismatch { .. } => Failure::Mismatch(e.to_string()),
        ConcordanceError::NoMetrics => Failure::Config(e.into()),
        other => Failure::Data(other.into()),
    }
}

pub fn calibrate(args: CalibrateArgs) -> Outcome {
    let schema_path = args
        .schema
        .clone()
        .unwrap_or_else(|| io::schema_path(&args.reference));
    let schema = io::read_schema(&schema_path).config()?;
    let w = &args.window;
    let options = CalibrationOptions {
        window_spec: WindowSpec::new(w.window_days, w.stride_days, w.min_exams).config()?,
        bootstrap_spec: BootstrapSpec::new(w.bootstrap_k, w.bootstrap_n, w.seed).config()?,
        hard_mining_q: args.q,
        alpha_ratio: args.alpha_ratio,
        weights: WeightOptions {
            correlation: match args.correlation {
                CorrelationArg::Pearson => Correlation::Pearson,
                CorrelationArg::Spearman => Correlation::Spearman,
            },
            auroc_labels: label_indices(&schema, &args.auroc_labels)?,
        },
        weight_mode: if args.raw_weights {
            WeightMode::Raw
        } else {
            WeightMode::Normalized
        },
    };
    if !(args.q > 0.0 && args.q <= 1.0) || !(args.alpha_ratio >= 0.0) {
        return Err(Failure::Config(anyhow!(
            "--q must be in (0, 1] and --alpha-ratio >= 0"
        )));
    }
    let exams = io::read_stream(&args.reference, &schema).data()?;
    let reference =
        ReferenceSet::new(exams, &MetricSet::from_schema(&schema)).map_err(concordance_failure)?;
    let mut cal = run_calibration(&schema, &reference, &options).map_err(concordance_failure)?;
    cal.created_at = created_at()?;
    write_atomic(&args.out, cal.to_json().data()?.as_bytes()).data()?;

    let excluded: Vec<&str> = cal
        .metrics
        .iter()
        .filter(|m| m.excluded)
        .map(|m| m.metric_id.as_str())
        .collect();
    println!(
        "calibrated {} metrics over {} reference windows ({} weight windows); wrote {}",
        cal.metrics.len(),
        cal.reference_windows,
        cal.alpha_windows,
        args.out.display()
    );
    if !excluded.is_empty() {
        println!(
            "excluded (constant over the reference): {}",
            excluded.join(", ")
        );
    }
    if cal.has_weights() {
        let mut ranked: Vec<_> = cal
            .metrics
            .iter()
            .filter_map(|m| m.alpha.map(|a| (a, &m.metric_id)))
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
        for (a, id) in ranked.iter().take(5) {
            println!("  {id:<28} alpha {a:.3}");
        }
    } else {
        println!("no ground truth in the reference: weights unset, only the unweighted score is available");
    }
    Ok(())
}

pub fn monitor(args: MonitorArgs) -> Outcome {
    let paths: BTreeSet<_> = [&args.stream, &args.reference, &args.calibration, &args.out]
        .into_iter()
        .collect();
    if paths.len() != 4 {
        return Err(Failure::Config(anyhow!(
            "--stream, --reference, --calibration and --out must all differ"
        )));
    }
    let groups = MetricGroups {
        metadata: !args.no_metadata,
        latent: !args.no_latent,
        prediction: !args.no_predictions,
    };
    if !groups.any() {
        return Err(Failure::Config(anyhow!("every metric group is disabled")));
    }
    let text = fs::read_to_string(&args.calibration)
        .with_context(|| format!("reading {}", args.calibration.display()))
        .data()?;
    let cal = Calibration::from_json(&text).map_err(concordance_failure)?;
    let schema = cal.schema.clone();
    let reference = io::read_stream(&args.reference, &schema).data()?;
    let reference = ReferenceSet::new(reference, &MetricSet::from_schema(&schema))
        .map_err(concordance_failure)?;

    let mut window_spec = cal.window_spec;
    if let Some(v) = args.window_days {
        if v != window_spec.length_days {
            warn!(
                "window length {v} differs from the calibrated {}; scales may not carry over",
                window_spec.length_days
            );
        }
        window_spec.length_days = v;
    }
    if let Some(v) = args.stride_days {
        window_spec.stride_days = v;
    }
    if let Some(v) = args.min_exams {
        window_spec.min_exams = v;
    }
    let window_spec = WindowSpec::new(
        window_spec.length_days,
        window_spec.stride_days,
        window_spec.min_exams,
    )
    .config()?;
    let b = cal.bootstrap_spec;
    let bootstrap = BootstrapSpec::new(
        args.bootstrap_k.unwrap_or(b.samples),
        args.bootstrap_n.unwrap_or(b.repeats),
        args.seed.unwrap_or(b.seed),
    )
    .config()?;
    let scorer = Scorer::new(&cal, &reference, groups)
        .map_err(concordance_failure)?
        .with_window_spec(window_spec)
        .with_bootstrap(bootstrap);
    if scorer.metrics().len() < MetricSet::from_schema(&schema).len() {
        info!(
            "scoring {} of the calibrated metrics",
            scorer.metrics().len()
        );
    }

    let stream = io::read_stream(&args.stream, &schema).data()?;
    let first = stream.iter().map(|e| e.date()).min();
    let last = stream.iter().map(|e| e.date()).max();
    let mut series = match (first, last) {
        (Some(first), Some(last)) => {
            let start = args
                .start
                .unwrap_or(first + Days::new(u64::from(window_spec.length_days) - 1));
            let end = args.end.unwrap_or(last);
            let options = SeriesOptions {
                auroc_labels: label_indices(&schema, &args.auroc_labels)?,
            };
            run_series(&stream, &scorer, start, end, &options).map_err(concordance_failure)?
        }
        _ => {
            warn!("stream is empty");
            ConcordanceSeries::new(scorer.metrics().ids(), Vec::new())
        }
    };
    if args.unweighted {
        series.rows.iter_mut().for_each(|r| r.mmcw = None);
    }
    let mut buf = Vec::new();
    series.write_csv(&mut buf).data()?;
    write_atomic(&args.out, &buf).data()?;

    let scored: Vec<_> = series.scored().collect();
    let mean = |f: &dyn Fn(&&mmc_core::SeriesRow) -> Option<f64>| {
        let v: Vec<f64> = scored.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let show = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    println!(
        "{} windows ({} scored, {} skipped, {} failed); wrote {}",
        series.rows.len(),
        scored.len(),
        series.rows.iter().filter(|r| r.skipped).count(),
        series.rows.iter().filter(|r| r.error.is_some()).count(),
        args.out.display()
    );
    println!(
        "mean mmcw {}  mmc0 {}  auroc {}",
        show(mean(&|r| r.mmcw)),
        show(mean(&|r| r.mmc0)),
        show(mean(&|r| r.auroc))
    );
    Ok(())
}

pub fn report(args: ReportArgs) -> Outcome {
    let file = fs::File::open(&args.series)
        .with_context(|| format!("opening {}", args.series.display()))
        .data()?;
    let series = ConcordanceSeries::read_csv(file)
        .with_context(|| format!("parsing {}", args.series.display()))
        .data()?;
    let mut change_points = args.change_points.clone();
    if let Some(path) = &args.scenario_file {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .config()?;
        let record: ScenarioRecord = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))
            .config()?;
        change_points.extend(record.change_points);
    }
    change_points.sort();
    change_points.dedup();
    let report = summarize(&series, &change_points, args.window_days);
    let text = match args.format {
        ReportFormat::Text => report.to_text(),
        ReportFormat::Json => serde_json::to_string_pretty(&report).data()? + "\n",
    };
    match &args.out {
        Some(path) => write_atomic(path, text.as_bytes()).data()?,
        None => print!("{text}"),
    }
    Ok(())
}
