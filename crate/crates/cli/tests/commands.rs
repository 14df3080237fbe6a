use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn mmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmc"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("SOURCE_DATE_EPOCH")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = mmc(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn records(p: &str) -> Vec<Value> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn reference(dir: &Path) -> String {
    let r = path(dir, "ref.jsonl");
    ok(&[
        "simulate",
        "--start",
        "2014-01-01",
        "--end",
        "2014-02-28",
        "--seed",
        "1",
        "--out",
        &r,
    ]);
    r
}

fn quick_calibration(dir: &Path, reference: &str) -> String {
    let c = path(dir, "cal.json");
    ok(&[
        "calibrate",
        "--reference",
        reference,
        "--bootstrap-k",
        "200",
        "--bootstrap-n",
        "2",
        "--out",
        &c,
    ]);
    c
}

#[test]
fn simulate_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (path(dir.path(), "a.jsonl"), path(dir.path(), "b.jsonl"));
    ok(&[
        "simulate",
        "--scenario",
        "baseline",
        "--seed",
        "7",
        "--end",
        "2014-05-20",
        "--out",
        &a,
    ]);
    ok(&[
        "simulate",
        "--scenario",
        "baseline",
        "--seed",
        "7",
        "--end",
        "2014-05-20",
        "--out",
        &b,
    ]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(Path::new(&format!("{a}.schema.json")).exists());
}

#[test]
fn hard_mining_starts_at_the_configured_date() {
    let dir = tempfile::tempdir().unwrap();
    let s = path(dir.path(), "s.jsonl");
    let stdout = ok(&[
        "simulate",
        "--scenario",
        "hard_mining",
        "--q",
        "0.25",
        "--end",
        "2014-06-30",
        "--point-a",
        "2014-06-10",
        "--out",
        &s,
    ]);
    assert!(
        stdout.contains("pool replacement starts 2014-06-10"),
        "{stdout}"
    );
    for r in records(&s) {
        let replaced = r["exam_id"].as_str().unwrap().contains('~');
        let after = r["timestamp"].as_str().unwrap() >= "2014-06-10";
        assert_eq!(replaced, after, "{}", r["exam_id"]);
    }
}

#[test]
fn scenario_config_document_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.toml");
    fs::write(
        &cfg,
        "seed = 4\n[population]\nsignal = 3.0\n[scenario]\nstart = \"2014-03-01\"\nend = \"2014-04-30\"\n[scenario.kind]\nkind = \"metadata_filter_failure\"\npoint_a = \"2014-03-20\"\npoint_b = \"2014-04-10\"\nlateral_ratio = 0.5\n",
    )
    .unwrap();
    let s = path(dir.path(), "s.jsonl");
    let stdout = ok(&["simulate", "--config", &cfg.to_string_lossy(), "--out", &s]);
    assert!(
        stdout.contains("lateral ratio 0.5") && stdout.contains("A 2014-03-20, B 2014-04-10"),
        "{stdout}"
    );
    let sidecar: Value =
        serde_json::from_str(&fs::read_to_string(format!("{s}.scenario.json")).unwrap()).unwrap();
    assert_eq!(sidecar["seed"], 4);
}

#[test]
fn ood_records_have_missing_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let s = path(dir.path(), "s.jsonl");
    ok(&[
        "simulate",
        "--scenario",
        "no_metadata_ood",
        "--end",
        "2014-06-30",
        "--point-a",
        "2014-05-20",
        "--point-b",
        "2014-06-10",
        "--out",
        &s,
    ]);
    let ood: Vec<Value> = records(&s)
        .into_iter()
        .filter(|r| r["exam_id"].as_str().unwrap().starts_with("ood-"))
        .collect();
    assert!(!ood.is_empty());
    for r in ood {
        assert!(r["timestamp"].as_str().unwrap() >= "2014-05-20");
        assert!(r["categorical"]
            .as_object()
            .unwrap()
            .values()
            .all(Value::is_null));
    }
}

#[test]
fn bad_inputs_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmc(&[
        "simulate",
        "--scenario",
        "hard_mining",
        "--point-a",
        "2013-01-01",
        "--out",
        &path(dir.path(), "x.jsonl"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let garbage = path(dir.path(), "garbage.csv");
    fs::write(&garbage, "not,a,series\n1,2,3\n").unwrap();
    assert_eq!(mmc(&["report", &garbage]).status.code(), Some(3));
}

#[test]
fn calibration_guards_its_reference() {
    let dir = tempfile::tempdir().unwrap();
    let r = reference(dir.path());
    let c = quick_calibration(dir.path(), &r);
    let other = path(dir.path(), "other.jsonl");
    ok(&[
        "simulate",
        "--start",
        "2014-01-01",
        "--end",
        "2014-02-28",
        "--seed",
        "2",
        "--out",
        &other,
    ]);
    let out = mmc(&[
        "monitor",
        "--stream",
        &other,
        "--reference",
        &other.replace("other", "other2"),
        "--calibration",
        &c,
        "--out",
        &path(dir.path(), "s.csv"),
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "missing reference file is a data error"
    );
    fs::copy(&other, path(dir.path(), "other2.jsonl")).unwrap();
    let out = mmc(&[
        "monitor",
        "--stream",
        &r,
        "--reference",
        &path(dir.path(), "other2.jsonl"),
        "--calibration",
        &c,
        "--out",
        &path(dir.path(), "s.csv"),
    ]);
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn reference_without_truth_calibrates_unweighted() {
    let dir = tempfile::tempdir().unwrap();
    let r = reference(dir.path());
    let stripped: String = records(&r)
        .into_iter()
        .map(|mut v| {
            v["ground_truth"] = Value::Null;
            v.to_string() + "\n"
        })
        .collect();
    let r2 = path(dir.path(), "nogt.jsonl");
    fs::write(&r2, stripped).unwrap();
    let c = path(dir.path(), "cal.json");
    let out = mmc(&[
        "calibrate",
        "--reference",
        &r2,
        "--schema",
        &format!("{r}.schema.json"),
        "--bootstrap-k",
        "200",
        "--bootstrap-n",
        "2",
        "--out",
        &c,
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no ground truth"));
    let cal: Value = serde_json::from_str(&fs::read_to_string(&c).unwrap()).unwrap();
    assert!(cal["metrics"]
        .as_array()
        .unwrap()
        .iter()
        .all(|m| m["alpha"].is_null()));
}

#[test]
fn monitor_toggles_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let r = reference(dir.path());
    let c = quick_calibration(dir.path(), &r);
    let s = path(dir.path(), "s.jsonl");
    ok(&[
        "simulate",
        "--start",
        "2014-03-01",
        "--end",
        "2014-04-15",
        "--seed",
        "3",
        "--out",
        &s,
    ]);
    let series = path(dir.path(), "series.csv");
    ok(&[
        "monitor",
        "--stream",
        &s,
        "--reference",
        &r,
        "--calibration",
        &c,
        "--out",
        &series,
        "--no-metadata",
        "--unweighted",
    ]);
    let text = fs::read_to_string(&series).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.contains("latent:z_0") && header.contains("pred:pneumonia"));
    assert!(!header.contains("cat:") && !header.contains("cont:"));
    let mmcw_col = header.split(',').position(|h| h == "mmcw").unwrap();
    assert!(text
        .lines()
        .skip(1)
        .all(|l| l.split(',').nth(mmcw_col) == Some("")));
    let report = ok(&["report", &series, "--change-point", "2014-04-05"]);
    assert!(
        report.contains("[pre_a]") && report.contains("delta pre_a -> post_a"),
        "{report}"
    );
}

#[test]
fn empty_stream_gives_empty_report_with_notice() {
    let dir = tempfile::tempdir().unwrap();
    let r = reference(dir.path());
    let c = quick_calibration(dir.path(), &r);
    let empty = path(dir.path(), "empty.jsonl");
    fs::write(&empty, "").unwrap();
    let series = path(dir.path(), "series.csv");
    ok(&[
        "monitor",
        "--stream",
        &empty,
        "--reference",
        &r,
        "--calibration",
        &c,
        "--out",
        &series,
    ]);
    let report = ok(&["report", &series]);
    assert!(report.starts_with("NOTICE"), "{report}");
}

#[test]
fn train_and_encode_small_images() {
    let dir = tempfile::tempdir().unwrap();
    let cfg: PathBuf = dir.path().join("vae.toml");
    fs::write(
        &cfg,
        "height = 8\nwidth = 8\nhidden = [8]\nlatent_dim = 2\nmax_epochs = 2\nbatch_size = 4\n",
    )
    .unwrap();
    let params = path(dir.path(), "vae.json");
    let history = path(dir.path(), "history.csv");
    ok(&[
        "train-vae",
        "--synthetic",
        "24",
        "--config",
        &cfg.to_string_lossy(),
        "--history",
        &history,
        "--out",
        &params,
    ]);
    assert_eq!(fs::read_to_string(&history).unwrap().lines().count(), 4);
    let latents = path(dir.path(), "z.jsonl");
    ok(&[
        "encode",
        "--vae",
        &params,
        "--synthetic",
        "5",
        "--out",
        &latents,
    ]);
    let rows = records(&latents);
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[0]["latent"].as_array().unwrap().len(), 2);
}
