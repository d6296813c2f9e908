use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hml_core::Domain;
use hml_lab::config::{Case, Experiment, ExperimentConfig};
use hml_lab::report::CSV_HEADER;
use hml_lab::run::SweepReport;

fn hml(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hml")).args(args).env("HML_THREADS", "1").output().expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let mut cfg = ExperimentConfig::new(Experiment::BoundsReport, 4.0, 1.0 / 32.0);
    cfg.truncation = 2.0;
    cfg.cases.push(Case::new("square", Domain::rectangle([0.0, 0.0], [2.0, 2.0]).unwrap()));
    let path = dir.join("exp.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_writes_all_three_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let json = dir.path().join("out/report.json");
    let csv = dir.path().join("out/report.csv");
    let svg = dir.path().join("out/report.svg");
    let out = hml(&["run", "--config", &cfg, "--json", json.to_str().unwrap(), "--csv", csv.to_str().unwrap(), "--svg", svg.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}\n{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("PASS bracket:square [universal-bracket]"), "{stdout}");

    let report: SweepReport = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(report.rows.len(), 3);
    assert!(report.figure.is_some());
    let again = serde_json::to_string_pretty(&report).unwrap();
    assert_eq!(serde_json::from_str::<SweepReport>(&again).unwrap(), report);

    let csv = fs::read_to_string(&csv).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    assert_eq!(lines.count(), 3);

    let svg = fs::read_to_string(&svg).unwrap();
    for level in 1..=9 {
        assert!(svg.contains(&format!("data-level=\"0.{level}\"")), "level 0.{level}");
    }
    assert_eq!(svg.matches("class=\"outline\"").count(), 1);
}

#[test]
fn reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    assert!(hml(&["run", "--config", &cfg, "--json", a.to_str().unwrap()]).status.success());
    assert!(hml(&["run", "--config", &cfg, "--json", b.to_str().unwrap()]).status.success());
    assert_eq!(fs::read_to_string(a).unwrap(), fs::read_to_string(b).unwrap());
}

#[test]
fn validate_reports_findings() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(Experiment::ConeSweep, 1.5, 0.05);
    cfg.sweep = vec![2.0, 1.8];
    let path = dir.path().join("bad.json");
    fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = hml(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("requires p > n"), "{text}");
    assert!(text.contains("strictly increasing"), "{text}");

    let out = hml(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn presets_round_trip_through_validate() {
    let dir = tempfile::tempdir().unwrap();
    for (name, extra) in [("pacman", vec!["--phi", "2.618"]), ("notched-square", vec![]), ("indented-disk", vec!["--depth", "0.2"]), ("epigraph-bump", vec![])] {
        let path = dir.path().join(format!("{name}.json"));
        let mut args = vec!["preset", name, "--out", path.to_str().unwrap()];
        args.extend(extra);
        assert!(hml(&args).status.success(), "{name}");
        assert_eq!(hml(&["validate", "--config", path.to_str().unwrap()]).status.code(), Some(0), "{name}");
    }
    assert_eq!(hml(&["preset", "dumbbell"]).status.code(), Some(1));
    assert_eq!(hml(&["preset", "pacman", "--phi", "1.0"]).status.code(), Some(1));
}

#[test]
fn oracles_print_closed_forms() {
    let out = hml(&["oracle", "beta0", "--p", "3"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["beta0"].as_f64().unwrap() - 1.0 / 3f64.sqrt()).abs() < 1e-12);

    let out = hml(&["oracle", "oned", "--a", "0", "--b", "3", "--y", "1", "--p", "4"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["energy"].as_f64(), Some(1.125));
}

#[test]
fn lambda_and_potential_on_a_domain_file() {
    let dir = tempfile::tempdir().unwrap();
    let dom = dir.path().join("disk.json");
    fs::write(&dom, serde_json::to_string(&Domain::ball(vec![0.0, 0.0], 1.0).unwrap()).unwrap()).unwrap();
    let est = dir.path().join("est.json");
    let out = hml(&["lambda", "--domain", dom.to_str().unwrap(), "--h", "0.0625", "--search", "radial", "--origin", "0,0", "--out", est.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(est).unwrap()).unwrap();
    let lambda = v["value"].as_f64().unwrap();
    assert!(lambda > 0.5 && lambda < 1.5, "{lambda}");

    let field = dir.path().join("w.bin");
    let csv = dir.path().join("w.csv");
    let out = hml(&["solve-potential", "--domain", dom.to_str().unwrap(), "--h", "0.125", "--y", "0.25,0", "--out", field.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["converged"], serde_json::Value::Bool(true));
    assert!(fs::metadata(field).unwrap().len() > 0);
    assert!(fs::read_to_string(csv).unwrap().lines().count() > 1);
}
