use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use relyap::estimate::{EstimateReport, Verdict};
use relyap::experiment::{read_report, ExperimentKind};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn relyap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relyap"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run(name: &str, out: &Path, extra: &[&str]) -> Output {
    let cfg = config(name);
    let mut args = vec!["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    relyap(&args)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn exit_status_per_experiment_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&str, &[&str], i32); 12] = [
        ("simulate.toml", &[], 0),
        ("validate-sampler.toml", &["--reps", "20000"], 0),
        ("drift-check.toml", &[], 0),
        ("hitting-moments.toml", &["--reps", "2000"], 0),
        ("theorem-part1.toml", &[], 0),
        ("theorem-part2.toml", &["--reps", "2000"], 0),
        ("theorem-part3.toml", &["--reps", "2000"], 0),
        ("dynkin-check.toml", &["--reps", "5000"], 0),
        ("stationary.toml", &[], 0),
        ("regeneration.toml", &["--reps", "2000"], 0),
        ("fault-drift.toml", &[], 2),
        ("fault-sampler.toml", &[], 2),
    ];
    for (name, extra, expected) in cases {
        let o = run(name, dir.path(), extra);
        assert_eq!(
            code(&o),
            expected,
            "{name}: {}{}",
            String::from_utf8_lossy(&o.stdout),
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

#[test]
fn inconclusive_exits_three() {
    // E tau^1 around 6.6 against a bound inside its confidence interval
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config("hitting-moments.toml"))
        .unwrap()
        .replace("bound = 41.0", "bound = 6.6");
    let cfg = dir.path().join("straddle.toml");
    fs::write(&cfg, text).unwrap();
    let o = relyap(&[
        "run",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--reps",
        "1000",
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn drift_check_writes_empty_violation_table() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run("drift-check.toml", dir.path(), &[])), 0);
    let csv = fs::read_to_string(dir.path().join("drift-check-3-violations.csv")).unwrap();
    let body: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body, vec!["i,x,j,y,LV,bound,margin,pass"]);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let read_all = || {
        let mut files: Vec<_> = fs::read_dir(&out)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name(), fs::read(e.path()).unwrap())
            })
            .collect();
        files.sort();
        files
    };
    assert_eq!(code(&run("theorem-part1.toml", &out, &["--reps", "500"])), 0);
    let first = read_all();
    assert_eq!(first.len(), 3);
    assert_eq!(code(&run("theorem-part1.toml", &out, &["--reps", "500"])), 0);
    assert_eq!(read_all(), first);
}

#[test]
fn report_round_trips_and_embeds_provenance() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&run(
            "theorem-part2.toml",
            dir.path(),
            &["--reps", "300", "--seed", "77"]
        )),
        0
    );
    let report = read_report(&dir.path().join("theorem-check-77.json")).unwrap();
    assert_eq!(report.experiment, ExperimentKind::TheoremCheck);
    assert_eq!(
        (report.seed, report.config.seed, report.config.params.reps),
        (77, 77, 300)
    );
    let est: EstimateReport = serde_json::from_value(report.result["estimate"].clone()).unwrap();
    assert_eq!(est.n, 300);
    assert_eq!(est.seed, 77);
    assert_eq!(est.verdict, Verdict::Consistent);
    let text = fs::read_to_string(dir.path().join("theorem-check-77.json")).unwrap();
    let again: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(again, serde_json::to_value(&report).unwrap());
    let csv = fs::read_to_string(dir.path().join("theorem-check-77.csv")).unwrap();
    assert!(csv.contains("# seed = 77"));
    assert!(csv.contains("# experiment = \"theorem-check\""));
    // the saved config reproduces the run
    let saved = dir.path().join("theorem-check-77.config.toml");
    let before = fs::read(dir.path().join("theorem-check-77.csv")).unwrap();
    assert_eq!(code(&relyap(&["run", saved.to_str().unwrap()])), 0);
    assert_eq!(fs::read(dir.path().join("theorem-check-77.csv")).unwrap(), before);
}

#[test]
fn validate_reports_constraints_without_running() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(
        &bad,
        r#"experiment = "theorem-check"
seed = 1
output_dir = "out"
[intensity]
gamma = 1.0
Gamma = 1.0
lambda = { kind = "reciprocal", params = { a = 0.0, b = 1.0 } }
mu = { kind = "reciprocal", params = { a = 0.0, b = 1.0 } }
[params]
part = 1
m0 = 1.0
"#,
    )
    .unwrap();
    let o = relyap(&["validate", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("γ > 2m0 fails"));
    let o = relyap(&[
        "run",
        bad.to_str().unwrap(),
        "--out",
        dir.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1);
    assert!(!dir.path().join("x").exists());

    let o = relyap(&["validate", config("simulate.toml").to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let echoed = String::from_utf8_lossy(&o.stdout);
    assert!(echoed.contains("time_cap = 1000000.0"), "{echoed}");
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&relyap(&["run", "/nonexistent/config.toml"])), 1);
    assert_eq!(code(&relyap(&["frobnicate"])), 1);
    // output directory below a regular file cannot be created
    let file = dir.path().join("plain");
    fs::write(&file, "x").unwrap();
    let o = run("simulate.toml", &file.join("sub"), &[]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("i/o error"));
}
