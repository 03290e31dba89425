use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lppl_pm::changepoint::Direction;
use lppl_pm::evaluation::load_alerts;
use lppl_pm::series::{from_ordinal, to_ordinal};
use tempfile::TempDir;

const QUICK: &[&str] = &["--l-min", "31", "--l-max", "60", "--n-starts", "8", "--min-history", "61"];

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lppl-pm"));
    cmd.env_remove("LPPL_PM_SEED");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn lppl-pm")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name).display().to_string()
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("series.csv");
    let mut args = vec!["synth", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    for (flag, default) in [("--length", "55"), ("--prefix", "80")] {
        if !extra.contains(&flag) {
            args.extend([flag, default]);
        }
    }
    let res = run(&args);
    assert!(res.status.success(), "{}", stderr(&res));
    out
}

#[test]
fn help_lists_defaults() {
    let out = run(&["backtest", "--help"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for needle in ["[default: 31]", "[default: 100]", "[default: 6e-5]", "[default: 90]", "[default: 3]", "LPPL_PM_SEED"] {
        assert!(text.contains(needle), "missing {needle} in\n{text}");
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["backtest", "--input", "x.csv", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["fit", "--input", "x.csv", "--transform", "sqrt"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn malformed_csv_names_the_line() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "date,value\n2020-01-01,1.0\n2020-01-02,abc\n").unwrap();
    let out = run(&["fit", "--input", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn missing_input_is_a_data_error() {
    let out = run(&["fit", "--input", "/nonexistent/series.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn infeasible_fit_exits_3() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("flat.csv");
    let mut text = String::from("date,value\n");
    let start = to_ordinal("2021-01-01").unwrap();
    for i in 0..120 {
        text.push_str(&format!("{},0.5\n", from_ordinal(start + i)));
    }
    fs::write(&path, text).unwrap();
    let out = run(&["fit", "--input", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn evaluate_fixture_kpis() {
    let out = run(&["evaluate", "--alerts", &fixture("compressor_alerts.json"), "--events", &fixture("compressor_events.csv")]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("TP=4 FP=2 FN=1 precision=0.667 recall=0.800"), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("TP ")).count(), 4);
}

#[test]
fn fit_json_output() {
    let dir = TempDir::new().unwrap();
    let series = synth(dir.path(), &["--noise", "0", "--prefix-noise", "0.02"]);
    let out = run(&["fit", "--input", series.to_str().unwrap(), "--json", "--l-max", "60"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["params"]["l_max"], 55);
    assert!(v["mse"].as_f64().unwrap() < 1e-10);
    assert!((v["params"]["m"].as_f64().unwrap() - 0.5).abs() < 0.05);
}

#[test]
fn synth_then_backtest() {
    let dir = TempDir::new().unwrap();
    let series = synth(dir.path(), &[]);
    let truth: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("series.truth.json")).unwrap()).unwrap();
    let ib_day = to_ordinal(truth["ib_day"].as_str().unwrap()).unwrap();

    let out_dir = dir.path().join("bt");
    let mut args = vec!["backtest", "--input", series.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()];
    args.extend_from_slice(QUICK);
    let out = run(&args);
    assert!(out.status.success(), "{}", stderr(&out));

    let alerts = load_alerts(out_dir.join("alerts.json")).unwrap();
    assert!(alerts.iter().any(|a| (a.date - ib_day).abs() <= 10), "{alerts:?}");
    assert!(alerts.iter().all(|a| a.params.is_none()));

    let fits = fs::read_to_string(out_dir.join("fits.csv")).unwrap();
    assert!(fits.starts_with("date,mse,l_max,ib_flag\n"));
    assert_eq!(fits.lines().count(), 1 + 135 - 60);
    let plot = fs::read_to_string(out_dir.join("plot.csv")).unwrap();
    assert_eq!(plot.lines().count(), 1 + 135);
}

#[test]
fn seeded_backtest_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let series = synth(dir.path(), &["--length", "45", "--prefix", "30"]);
    let outputs: Vec<Vec<Vec<u8>>> = [("1", "out_a"), ("1", "out_b"), ("4", "out_c")]
        .iter()
        .map(|(jobs, name)| {
            let out_dir = dir.path().join(name);
            let mut args = vec![
                "--seed",
                "7",
                "--jobs",
                jobs,
                "backtest",
                "--input",
                series.to_str().unwrap(),
                "--out-dir",
                out_dir.to_str().unwrap(),
            ];
            args.extend_from_slice(QUICK);
            let out = run(&args);
            assert!(out.status.success(), "{}", stderr(&out));
            ["alerts.json", "fits.csv", "plot.csv"].iter().map(|f| fs::read(out_dir.join(f)).unwrap()).collect()
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn seed_from_environment() {
    let dir = TempDir::new().unwrap();
    let series = synth(dir.path(), &[]);
    let fit = |env: Option<&str>, flag: Option<&str>| {
        let mut cmd = bin();
        if let Some(s) = env {
            cmd.env("LPPL_PM_SEED", s);
        }
        if let Some(s) = flag {
            cmd.args(["--seed", s]);
        }
        let out = cmd.args(["fit", "--input", series.to_str().unwrap(), "--json", "--l-max", "40"]).output().unwrap();
        assert!(out.status.success());
        out.stdout
    };
    assert_eq!(fit(Some("11"), None), fit(None, Some("11")));
}

#[test]
fn baseline_negation_mirrors_directions() {
    let dir = TempDir::new().unwrap();
    let series = synth(dir.path(), &["--noise", "0.01"]);
    let read = |negate: bool| -> Vec<(String, String)> {
        let out_path = dir.path().join(if negate { "neg.csv" } else { "pos.csv" });
        let mut args = vec!["baseline", "--input", series.to_str().unwrap(), "--out", out_path.to_str().unwrap()];
        if negate {
            args.push("--negate");
        }
        let out = run(&args);
        assert!(out.status.success(), "{}", stderr(&out));
        let text = fs::read_to_string(out_path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("date,direction,statistic"));
        lines
            .map(|l| {
                let mut parts = l.split(',');
                (parts.next().unwrap().to_string(), parts.next().unwrap().to_string())
            })
            .collect()
    };
    let swap = |d: &str| {
        if d == Direction::Left.as_str() {
            Direction::Right.as_str().to_string()
        } else {
            Direction::Left.as_str().to_string()
        }
    };
    let plain = read(false);
    assert!(!plain.is_empty());
    let mut mirrored: Vec<_> = read(true).into_iter().map(|(date, d)| (date, swap(&d))).collect();
    let mut expected = plain.clone();
    mirrored.sort();
    expected.sort();
    assert_eq!(mirrored, expected);
}
