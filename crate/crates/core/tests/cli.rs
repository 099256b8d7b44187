use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tunnelscout::wind::WindCalibration;
use tunnelscout::Vec3;

const SHORT_RUN: &str = "rng_seed = 4\ntimeout = 3.0\n\n[tunnel]\nlength = 8.0\nwidth = 4.0\nheight = 3.0\n";

fn tunnelscout(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tunnelscout")).args(args).output().expect("binary runs")
}

fn write_calibration(dir: &Path) {
    let cal = WindCalibration { noise_force: Vec3::new(5.0, 7.0, 0.0), gain: 0.17, seeds: vec![0, 1, 2, 3, 4] };
    fs::write(dir.join("calibration.toml"), toml::to_string(&cal).unwrap()).unwrap();
}

#[test]
fn short_run_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.toml");
    fs::write(&cfg, SHORT_RUN).unwrap();
    let out = dir.path().join("out");
    let o = tunnelscout(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    // a 3 s budget cannot finish the mission, so the timeout code is expected
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trajectory.csv", "map.txt", "report.toml"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(csv.lines().count() > 10);
    let report = fs::read_to_string(out.join("report.toml")).unwrap();
    assert!(report.contains("seed = 4"));
}

#[test]
fn invalid_config_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[tunnel]\nlength = -1.0\nwidth = 4.0\nheight = 3.0\n").unwrap();
    let out = dir.path().join("out");
    let o = tunnelscout(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tunnel.length"));
    assert!(!out.join("trajectory.csv").exists());
}

#[test]
fn same_seed_same_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.toml");
    fs::write(&cfg, SHORT_RUN).unwrap();
    let mut csvs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = tunnelscout(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "9"]);
        assert!(o.status.code().is_some());
        csvs.push(fs::read(out.join("trajectory.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn windtest_requires_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let o = tunnelscout(&["windtest", "--mode", "hover", "--level", "high", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("calibrat"));
}

#[test]
fn windtest_rejects_unknown_level() {
    let dir = tempfile::tempdir().unwrap();
    write_calibration(dir.path());
    let o = tunnelscout(&["windtest", "--mode", "hover", "--level", "gale", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn hover_high_prints_row() {
    let dir = tempfile::tempdir().unwrap();
    write_calibration(dir.path());
    let o = tunnelscout(&["windtest", "--mode", "hover", "--level", "high", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let row = stdout.lines().nth(1).unwrap();
    assert!(row.starts_with("High (3.24m/s)\t"), "{row}");
    assert_eq!(row.split('\t').count(), 3);
    assert!(dir.path().join("drift.toml").is_file());
    assert!(dir.path().join("trajectory.csv").is_file());
}

#[test]
fn straight_none_columns() {
    let dir = tempfile::tempdir().unwrap();
    write_calibration(dir.path());
    let o = tunnelscout(&["windtest", "--mode", "straight", "--level", "none", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let mut lines = stdout.lines();
    let header = lines.next().unwrap();
    let row = lines.next().unwrap();
    assert_eq!(header.split('\t').count(), row.split('\t').count());
    assert!(row.starts_with("No wind\t"), "{row}");
}

#[test]
fn exported_config_parses() {
    let o = tunnelscout(&["export", "default-config"]);
    assert_eq!(o.status.code(), Some(0));
    let sc = tunnelscout::config::parse_scenario(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(sc.obstacles.len(), 2);
}
