//! Command-line behaviour of the `cfsim` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = "\
num_ues = 4
num_orus = 16
num_odus = 4
antennas_per_oru = 2
serving_size = 3
measurement_size = 4
tau_p = 4
sim_time_s = 1.0
n_mc = 20
num_setups = 1
";

fn cfsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfsim"))
        .args(args)
        .env_remove("CFSIM_CONFIG")
        .output()
        .unwrap()
}

fn small_config(dir: &TempDir, extra: &str) -> PathBuf {
    let path = dir.path().join("small.toml");
    fs::write(&path, format!("{SMALL}{extra}")).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_prints_defaults_without_config() {
    let out = cfsim(&["validate"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("num_orus = 36"), "{text}");
    assert!(text.contains("seed = 1"), "{text}");
}

#[test]
fn validate_round_trips_its_own_output() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(&dir, "");
    let dumped = dir.path().join("dump.toml");
    assert!(cfsim(&["validate", "--config", s(&cfg), "--out", s(&dumped)]).status.success());
    let again = cfsim(&["validate", "--config", s(&dumped)]);
    assert!(again.status.success());
    assert_eq!(String::from_utf8(again.stdout).unwrap(), fs::read_to_string(&dumped).unwrap());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    let unknown = small_config(&dir, "bogus_key = 3\n");
    let out = cfsim(&["validate", "--config", s(&unknown)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_key"));

    let bad_strategy = small_config(&dir, "strategy = \"teleport\"\n");
    assert_eq!(cfsim(&["validate", "--config", s(&bad_strategy)]).status.code(), Some(2));

    let cfg = small_config(&dir, "");
    assert!(cfsim(&["validate", "--config", s(&cfg)]).status.success());
    let out = cfsim(&["run", "--config", s(&cfg), "--strategy", "teleport"]);
    assert_eq!(out.status.code(), Some(2));
    let out = cfsim(&["sweep", "--config", s(&cfg), "--speeds", "-5"]);
    assert_eq!(out.status.code(), Some(2));

    // clap usage error
    assert_eq!(cfsim(&["run", "--no-such-flag"]).status.code(), Some(2));
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(&dir, "");
    let target = dir.path().join("missing").join("out.csv");
    let out = cfsim(&["run", "--config", s(&cfg), "--out", s(&target)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn run_is_reproducible_for_a_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(&dir, "");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let events = dir.path().join("events.csv");
    for path in [&a, &b] {
        let out = cfsim(&[
            "run", "--config", s(&cfg), "--seed", "7", "--strategy", "opportunistic", "--speed-kmh", "120",
            "--events", s(&events), "--out", s(path),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let first = fs::read_to_string(&a).unwrap();
    assert_eq!(first, fs::read_to_string(&b).unwrap());

    let mut rdr = csv::Reader::from_reader(first.as_bytes());
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        ["setup", "t", "ue", "se", "primary", "handovers"]
    );
    // steps 1..=2 for each of 4 UEs
    assert_eq!(rdr.records().count(), 8);
    let events = fs::read_to_string(&events).unwrap();
    assert!(events.starts_with("setup,t,ue,kind,old,new"));
}

#[test]
fn sweep_writes_one_row_per_speed() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(&dir, "");
    let out = cfsim(&[
        "sweep", "--config", s(&cfg), "--strategy", "fixed", "--threshold-db", "2", "--speeds", "3,30,60,120",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    assert_eq!(
        rdr.headers().unwrap().iter().collect::<Vec<_>>(),
        [
            "strategy", "threshold_db", "speed_kmh", "mean_se", "se_stderr", "ho_freq", "ho_stderr", "ric_msgs",
            "inter_odu_samples"
        ]
    );
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 4);
    for (row, speed) in rows.iter().zip([3.0, 30.0, 60.0, 120.0]) {
        assert_eq!(&row[0], "fixed");
        assert_eq!(row[1].parse::<f64>().unwrap(), 2.0);
        assert_eq!(row[2].parse::<f64>().unwrap(), speed);
        let se: f64 = row[3].parse().unwrap();
        assert!(se.is_finite() && se > 0.0);
    }
}

#[test]
fn selftest_passes() {
    let out = cfsim(&["selftest"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}
