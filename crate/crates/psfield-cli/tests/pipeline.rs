//! End-to-end pipeline runs over the bundled synthetic corpus.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_psfield")
}

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn copy_fixtures(to: &Path) {
    for entry in walk(&fixture_dir()) {
        let rel = entry.strip_prefix(fixture_dir()).unwrap();
        if rel.starts_with("out") {
            continue;
        }
        let dest = to.join(rel);
        std::fs::create_dir_all(dest.parent().unwrap()).unwrap();
        std::fs::copy(&entry, &dest).unwrap();
    }
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

fn run(dir: &Path, cmd: &str) -> std::process::Output {
    Command::new(bin())
        .current_dir(dir)
        .args([cmd, "-c", "config.toml"])
        .output()
        .expect("spawn psfield")
}

fn run_ok(dir: &Path, cmd: &str) {
    let out = run(dir, cmd);
    assert!(
        out.status.success(),
        "`psfield {cmd}` failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn full_pipeline_on_synthetic_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    copy_fixtures(tmp.path());

    for cmd in ["ingest", "variogram", "fit", "predict", "validate", "pstest", "report"] {
        run_ok(tmp.path(), cmd);
    }
    let out = tmp.path().join("out");
    for file in [
        "observations.csv",
        "timelines.csv",
        "yearly_summary.csv",
        "variogram_params.csv",
        "variogram_params.json",
        "variogram_quantiles.csv",
        "model.json",
        "validation.csv",
        "validation.json",
        "pstest.csv",
        "pstest.json",
        "report.txt",
    ] {
        assert!(out.join(file).exists(), "missing {file}");
    }
    for year in [2017, 2018, 2019] {
        assert!(out.join(format!("variograms/variogram_{year}.csv")).exists());
        assert!(out.join(format!("surfaces/surface_{year}.csv")).exists());
        assert!(out.join(format!("surfaces/surface_{year}.svg")).exists());
        assert!(out.join(format!("pstest_hist_{year}.csv")).exists());
    }

    // per-year observation counts match the corpus layout: 12 original
    // sites in 2017, two added in 2018, one removed before 2019
    let obs = std::fs::read_to_string(out.join("observations.csv")).unwrap();
    let mut counts = std::collections::BTreeMap::new();
    for line in obs.lines().skip(1) {
        let year: i32 = line.split(',').nth(3).unwrap().parse().unwrap();
        *counts.entry(year).or_insert(0usize) += 1;
    }
    assert_eq!(counts.get(&2017), Some(&12));
    assert_eq!(counts.get(&2018), Some(&14));
    assert_eq!(counts.get(&2019), Some(&13));

    // the events-excluded variant must win for site 4002 in 2018: POC 1 at
    // the base level, POC 2 at base + 0.8 rather than base + 5.5
    let row_4002: Vec<&str> = obs
        .lines()
        .find(|l| l.starts_with("06-037-4002,") && l.contains(",2018,"))
        .expect("site 4002 year 2018 present")
        .split(',')
        .collect();
    let pm: f64 = row_4002[4].parse().unwrap();
    let base = 40.0 * (1.0 - 0.035) + (-117.25f64 * 12.3 + 33.70 * 7.7 + 2018.0).sin() * 2.2;
    let expect = (base + (base + 0.8)) / 2.0;
    assert!(
        (pm - expect).abs() < 1e-6,
        "events-included row leaked into the aggregate: pm {pm} vs {expect}"
    );

    // quantile table carries the standard 12 rows
    let quant = std::fs::read_to_string(out.join("variogram_quantiles.csv")).unwrap();
    assert_eq!(quant.lines().count(), 13);

    // report lists exactly the four retention categories
    let report = std::fs::read_to_string(out.join("report.txt")).unwrap();
    for label in ["continuous", "added", "removed", "added-then-removed"] {
        assert!(report.contains(label), "report lacks {label}");
    }
}

#[test]
fn empty_data_dir_is_an_explicit_error() {
    let tmp = tempfile::tempdir().unwrap();
    copy_fixtures(tmp.path());
    let annual = tmp.path().join("annual");
    for f in std::fs::read_dir(&annual).unwrap() {
        std::fs::remove_file(f.unwrap().path()).unwrap();
    }
    let out = run(tmp.path(), "ingest");
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("no input files"), "stderr: {stderr}");
}

#[test]
fn missing_upstream_names_the_prerequisite_command() {
    let tmp = tempfile::tempdir().unwrap();
    copy_fixtures(tmp.path());
    run_ok(tmp.path(), "ingest");
    // pstest before predict: must point at the predict command
    let out = run(tmp.path(), "pstest");
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("psfield predict"), "stderr: {stderr}");
}

#[test]
fn config_errors_exit_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    copy_fixtures(tmp.path());
    let cfg = tmp.path().join("config.toml");
    let text = std::fs::read_to_string(&cfg).unwrap();
    std::fs::write(&cfg, text.replace("holdout_fraction = 0.1", "holdout_fraction = 0.9"))
        .unwrap();
    let out = run(tmp.path(), "ingest");
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("holdout_fraction"), "stderr: {stderr}");
}

#[test]
fn smoke_pstest_json_matches_schema() {
    let tmp = tempfile::tempdir().unwrap();
    copy_fixtures(tmp.path());
    // m = 10 smoke configuration
    let cfg = tmp.path().join("config.toml");
    let text = std::fs::read_to_string(&cfg).unwrap();
    std::fs::write(&cfg, text.replace("m = 1000", "m = 10")).unwrap();
    for cmd in ["ingest", "fit", "predict", "pstest"] {
        run_ok(tmp.path(), cmd);
    }
    let doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/pstest.json")).unwrap())
            .unwrap();
    assert_eq!(doc["m"], 10);
    assert_eq!(doc["k"], 3);
    let entries = doc["series"]["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 3);
    for e in entries {
        assert!(e["kind"] == "tested" || e["kind"] == "skipped" || e["kind"] == "interpolated");
        if e["kind"] == "tested" {
            let p = e["p_lower"].as_f64().unwrap();
            assert!(p > 0.0 && p <= 1.0);
            assert!(e["rho_obs"].as_f64().unwrap().abs() <= 1.0);
        }
    }
}
