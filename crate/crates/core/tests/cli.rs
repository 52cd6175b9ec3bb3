use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use spikefilter::io::{read_beliefs, Table};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spikefilter"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

const SMALL: &str = "model.a = -0.1\nmodel.d = 0.5\nmodel.init = steady\nencoder.lambda0 = 20\nrun.horizon = 2\nrun.window = [1, 2]\nrun.trials = 4\n";

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.cfg");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn presets_are_listed() {
    let out = run(&["presets"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in [
        "compare-uniform",
        "center-rate",
        "population-wide",
        "variance-mse",
        "oracle",
    ] {
        assert!(text.contains(name), "{text}");
    }
}

#[test]
fn filter_writes_tables_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    ok(&["filter", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let path = Table::read_from(fs::File::open(out.join("path.csv")).unwrap()).unwrap();
    assert_eq!(path.header, ["t", "x_1"]);
    assert_eq!(path.rows.len(), 2001);
    let (times, beliefs) = read_beliefs(fs::File::open(out.join("beliefs.csv")).unwrap()).unwrap();
    assert_eq!(times.len(), 2001);
    assert_eq!(beliefs[0].cov.get(0, 0), 1.25);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "filter");
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn filtering_a_spike_file_matches_the_simulated_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["filter", "--config", &cfg, "--trial", "2", "--out", a.to_str().unwrap()]);
    let spikes = a.join("spikes.csv");
    ok(&[
        "filter",
        "--config",
        &cfg,
        "--spikes",
        spikes.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
    ]);
    assert_eq!(
        fs::read(a.join("beliefs.csv")).unwrap(),
        fs::read(b.join("beliefs.csv")).unwrap()
    );
}

#[test]
fn overrides_change_outputs_and_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["simulate", "--config", &cfg, "--out", a.to_str().unwrap()]);
    ok(&[
        "simulate",
        "--config",
        &cfg,
        "--seed",
        "5",
        "--dt",
        "0.01",
        "--out",
        b.to_str().unwrap(),
    ]);
    let rows = |d: &Path| {
        Table::read_from(fs::File::open(d.join("path.csv")).unwrap())
            .unwrap()
            .rows
            .len()
    };
    assert_eq!(rows(&a), 2001);
    assert_eq!(rows(&b), 201);
    assert_ne!(
        fs::read(a.join("manifest.json")).unwrap(),
        fs::read(b.join("manifest.json")).unwrap()
    );
}

#[test]
fn sweep_outputs_have_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!("{SMALL}sweep.c = [0, 0.5, 1]\nsweep.lambda0 = [10, 40]\n"),
    );
    let out = dir.path().join("out");
    ok(&[
        "sweep-center",
        "--config",
        &cfg,
        "--trials",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    let cells = Table::read_from(fs::File::open(out.join("sweep_cells.csv")).unwrap()).unwrap();
    assert_eq!(cells.rows.len(), 6);
    assert_eq!(cells.column("trials_ok").unwrap(), vec![2.0; 6]);
    let rows = Table::read_from(fs::File::open(out.join("sweep_rows.csv")).unwrap()).unwrap();
    assert_eq!(rows.header, ["lambda0", "c_opt", "c_m"]);
}

#[test]
fn bad_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "model.a = -0.1\nencoder.sigma_tc2 = oops\n");
    let out = run(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("encoder.sigma_tc2"), "{err}");

    let out = run(&[
        "simulate",
        "--preset",
        "nope",
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}
