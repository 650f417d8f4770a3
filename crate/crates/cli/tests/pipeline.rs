use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ccnf::conformal::RecordFile;
use ccnf::data::{parse_csv, DatasetMetadata, Provenance};
use ccnf::flow::{standard_normal_log_pdf, ModelFile};
use ccnf::regions::{read_points_csv, RegionFile};
use ccnf_cli::commands::CoverageReport;

const SMALL: &str = r#"
seed = 11
[data]
n = 240
context_len = 6
horizon = 1
[split]
train = 120
calibration = 80
[model]
layers = 2
hidden_width = 8
gru_hidden = 4
[train]
epochs = 3
batch_size = 32
[region]
cells = 20
median_samples = 100
"#;

fn ccnf(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccnf"))
        .args(args)
        .current_dir(dir)
        .env_remove("CCNF_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = ccnf(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn fails_with(dir: &Path, args: &[&str], code: i32) -> String {
    let out = ccnf(dir, args);
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    assert_eq!(out.status.code(), Some(code), "{args:?}: {err}");
    err
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

fn pipeline(dir: &Path, extra: &[&str]) {
    for cmd in ["simulate", "train", "calibrate"] {
        let mut args = vec![cmd, "--config", "run.toml", "--out", "o"];
        args.extend_from_slice(extra);
        ok(dir, &args);
    }
}

#[test]
fn simulate_writes_matching_metadata_and_is_repeatable() {
    let dir = setup(SMALL);
    let d = dir.path();
    ok(d, &["simulate", "--config", "run.toml", "--out", "a"]);
    ok(d, &["simulate", "--config", "run.toml", "--out", "b"]);
    let meta = DatasetMetadata::from_json_str(&fs::read_to_string(d.join("a/dataset.json")).unwrap()).unwrap();
    assert_eq!((meta.n, meta.context_len, meta.horizon, meta.dim), (240, 6, 1, 2));
    match &meta.provenance {
        Provenance::Generator { name, params, .. } => {
            assert_eq!(name, "particle");
            assert_eq!(params["sigma"], 0.05);
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(fs::read(d.join("a/dataset.csv")).unwrap(), fs::read(d.join("b/dataset.csv")).unwrap());
    ok(d, &["simulate", "--config", "run.toml", "--out", "c", "--seed", "12"]);
    assert_ne!(fs::read(d.join("a/dataset.csv")).unwrap(), fs::read(d.join("c/dataset.csv")).unwrap());
}

#[test]
fn bimodal_simulation_has_balanced_modes() {
    let dir = setup("[data]\nsource = \"bimodal\"\nn = 4000\nhorizon = 1\n");
    ok(dir.path(), &["simulate", "--config", "run.toml", "--out", "o"]);
    let meta = DatasetMetadata::from_json_str(&fs::read_to_string(dir.path().join("o/dataset.json")).unwrap()).unwrap();
    let ds = parse_csv(fs::File::open(dir.path().join("o/dataset.csv")).unwrap(), meta.schema()).unwrap();
    let plus = (0..ds.len()).filter(|&i| ds.future_flat(i)[0] > 0.0).count() as f64 / ds.len() as f64;
    // Binomial standard deviation at n = 4000 is below 0.008.
    assert!((plus - 0.5).abs() < 0.03, "{plus}");
}

#[test]
fn zero_epochs_gives_identity_flow_and_planted_scores() {
    let dir = setup(&SMALL.replace("epochs = 3", "epochs = 0"));
    let d = dir.path();
    pipeline(d, &[]);
    let model = ModelFile::load(&d.join("o/model.json")).unwrap().model;
    let trace = fs::read_to_string(d.join("o/loss_trace.csv")).unwrap();
    assert_eq!(trace, "epoch,mean_nll\n");
    let record = RecordFile::load(&d.join("o/calibration.json")).unwrap().record;
    assert_eq!(record.len(), 80);

    // Identity flow: every score is the standard-normal log-pdf of the standardised future.
    let meta = DatasetMetadata::from_json_str(&fs::read_to_string(d.join("o/dataset.json")).unwrap()).unwrap();
    let ds = parse_csv(fs::File::open(d.join("o/dataset.csv")).unwrap(), meta.schema()).unwrap();
    let mut all: Vec<f64> = (0..ds.len())
        .map(|i| {
            let y = ds.future_flat(i);
            let z: Vec<f64> = y
                .iter()
                .enumerate()
                .map(|(j, v)| (v - model.stats.label_mean[j]) / model.stats.label_std[j])
                .collect();
            standard_normal_log_pdf(&z)
        })
        .collect();
    all.sort_by(f64::total_cmp);
    for s in &record.scores {
        assert!(all.iter().any(|a| (a - s).abs() < 1e-12), "{s}");
    }
}

#[test]
fn training_and_calibration_are_repeatable() {
    let dir = setup(SMALL);
    let d = dir.path();
    pipeline(d, &[]);
    let trace = fs::read(d.join("o/loss_trace.csv")).unwrap();
    let model = fs::read(d.join("o/model.json")).unwrap();
    let record = fs::read(d.join("o/calibration.json")).unwrap();
    ok(d, &["train", "--config", "run.toml", "--out", "o"]);
    ok(d, &["calibrate", "--config", "run.toml", "--out", "o"]);
    assert_eq!(trace, fs::read(d.join("o/loss_trace.csv")).unwrap());
    assert_eq!(model, fs::read(d.join("o/model.json")).unwrap());
    assert_eq!(record, fs::read(d.join("o/calibration.json")).unwrap());
    assert_eq!(String::from_utf8(trace).unwrap().lines().count(), 4);
}

#[test]
fn region_exports_round_trip_and_include_all_fills_grid() {
    let dir = setup(SMALL);
    let d = dir.path();
    pipeline(d, &[]);
    ok(d, &["region", "--config", "run.toml", "--out", "o"]);
    let file = RegionFile::load(&d.join("o/region.json")).unwrap();
    let points = read_points_csv(fs::File::open(d.join("o/region_points.csv")).unwrap(), 2).unwrap();
    assert_eq!(points, file.region.points);
    assert!(file.provenance["bonferroni_box"].is_object());
    assert_eq!(file.provenance["config"]["seed"], 11);

    // l = 80: any ε ≤ 1/81 accepts every label.
    ok(d, &["region", "--config", "run.toml", "--out", "o", "--epsilon", "0.01"]);
    let full = RegionFile::load(&d.join("o/region.json")).unwrap().region;
    assert!(full.threshold.include_all);
    assert_eq!(full.points.len(), 400);
    assert_eq!(full.n_components, 1);

    ok(d, &["region", "--config", "run.toml", "--out", "o", "--mode", "samples", "--n-samples", "500"]);
    let s = RegionFile::load(&d.join("o/region.json")).unwrap().region;
    assert_eq!(s.n_samples, Some(500));
}

#[test]
fn coverage_accounts_for_every_test_series() {
    let dir = setup(SMALL);
    let d = dir.path();
    pipeline(d, &[]);
    ok(d, &["coverage", "--config", "run.toml", "--out", "o"]);
    let report: CoverageReport = serde_json::from_str(&fs::read_to_string(d.join("o/coverage.json")).unwrap()).unwrap();
    assert_eq!(report.rows.len(), 2);
    for r in &report.rows {
        assert_eq!(r.total, 40);
        assert!((0.0..=1.0).contains(&r.coverage));
        assert_eq!(r.coverage, r.hits as f64 / 40.0);
    }
    let csv = fs::read_to_string(d.join("o/coverage.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    ok(d, &["coverage", "--config", "run.toml", "--out", "o", "--epsilon", "0.01"]);
    let report: CoverageReport = serde_json::from_str(&fs::read_to_string(d.join("o/coverage.json")).unwrap()).unwrap();
    assert_eq!(report.rows[0].coverage, 1.0);
}

#[test]
fn mismatched_artifacts_are_refused() {
    let dir = setup(SMALL);
    let d = dir.path();
    pipeline(d, &[]);
    let err = fails_with(d, &["calibrate", "--config", "run.toml", "--out", "o", "--epochs", "4"], 6);
    assert!(err.contains("rerun train"), "{err}");

    let path = d.join("o/calibration.json");
    let text = fs::read_to_string(&path).unwrap();
    let mut file = RecordFile::from_json_str(&text).unwrap();
    file.record.model_hash = "0".repeat(64);
    fs::write(&path, file.to_json_string()).unwrap();
    fails_with(d, &["coverage", "--config", "run.toml", "--out", "o"], 6);
    fails_with(d, &["region", "--config", "run.toml", "--out", "o"], 6);
}

#[test]
fn exit_codes_by_failure_class() {
    let dir = setup(SMALL);
    let d = dir.path();
    let err = fails_with(d, &["simulate", "--config", "run.toml", "--epsilon", "2"], 2);
    assert!(err.contains("epsilon"), "{err}");
    fs::write(d.join("bad.toml"), "[data]\nsigma = 0.0\n").unwrap();
    let err = fails_with(d, &["simulate", "--config", "bad.toml"], 2);
    assert!(err.contains("data.sigma"), "{err}");
    fails_with(d, &["simulate", "--config", "missing.toml"], 2);
    fails_with(d, &["train", "--config", "run.toml", "--out", "empty"], 5);

    ok(d, &["simulate", "--config", "run.toml", "--out", "o"]);
    fs::write(d.join("o/dataset.csv"), "series_id,t,v0,v1\n0,0,1,x\n").unwrap();
    let err = fails_with(d, &["train", "--config", "run.toml", "--out", "o"], 3);
    assert!(err.contains("line 2"), "{err}");

    let lr = SMALL.replace("batch_size = 32", "batch_size = 32\nlearning_rate = 1e300");
    let dir = setup(&lr);
    let d = dir.path();
    ok(d, &["simulate", "--config", "run.toml", "--out", "o"]);
    let err = fails_with(d, &["train", "--config", "run.toml", "--out", "o"], 4);
    assert!(err.contains("last finite epoch"), "{err}");
}

#[test]
fn grid_mode_refuses_high_dimensional_labels() {
    let dir = setup(&SMALL.replace("horizon = 1", "horizon = 2"));
    let d = dir.path();
    pipeline(d, &[]);
    let err = fails_with(d, &["region", "--config", "run.toml", "--out", "o"], 3);
    assert!(err.contains("sample mode"), "{err}");
    ok(d, &["region", "--config", "run.toml", "--out", "o", "--mode", "samples", "--n-samples", "300"]);
}

#[test]
fn output_directory_from_environment() {
    let dir = setup(SMALL);
    let out = Command::new(env!("CARGO_BIN_EXE_ccnf"))
        .args(["simulate", "--config", "run.toml"])
        .current_dir(dir.path())
        .env("CCNF_OUT_DIR", "env_out")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("env_out/dataset.csv").exists());
}

#[test]
fn csv_source_is_ingested() {
    let dir = setup(SMALL);
    let d = dir.path();
    ok(d, &["simulate", "--config", "run.toml", "--out", "gen"]);
    let cfg = SMALL.replace("horizon = 1", "horizon = 1\nsource = \"csv\"\npath = \"gen/dataset.csv\"");
    fs::write(d.join("csv.toml"), cfg).unwrap();
    ok(d, &["simulate", "--config", "csv.toml", "--out", "o"]);
    assert_eq!(fs::read(d.join("gen/dataset.csv")).unwrap(), fs::read(d.join("o/dataset.csv")).unwrap());
    ok(d, &["train", "--config", "csv.toml", "--out", "o"]);
}
