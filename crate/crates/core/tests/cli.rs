use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dyndml::cli::schema::{validate_error_json, validate_run};
use dyndml::data::write_csv;
use dyndml::simulation::{simulate_dgp, DgpConfig};
use serde_json::Value;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dyndml"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn listed(out: &Output) -> Vec<String> {
    String::from_utf8(out.stdout.clone())
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

fn panel(dir: &Path, with_s: bool) -> PathBuf {
    let mut data = simulate_dgp(&DgpConfig::new(600, 5, 42)).unwrap();
    if with_s {
        let s = (0..600).map(|i| i % 3 == 0).collect();
        data = data.with_subgroup(s).unwrap();
    }
    let path = dir.join("panel.csv");
    write_csv(&data, &path).unwrap();
    path
}

fn ok_run(args: &[&str], out: &Path) -> Vec<String> {
    let res = bin(args);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let files = listed(&res);
    validate_run(out, &files).unwrap();
    files
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn estimate_mode_writes_valid_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let input = panel(tmp.path(), false);
    let out = tmp.path().join("est");
    let files = ok_run(
        &[
            "--mode",
            "estimate",
            "--input",
            input.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "3",
        ],
        &out,
    );
    for f in [
        "effects.json",
        "potential_outcomes.json",
        "overlap_11_p1.csv",
        "overlap_00_p2.csv",
        "trimming.csv",
        "manifest.json",
    ] {
        assert!(files.iter().any(|x| x == f), "missing {f}");
    }
    let effects = read_json(&out.join("effects.json"));
    let e = &effects[0];
    for key in [
        "estimate",
        "se",
        "ci_low",
        "ci_high",
        "p_value",
        "n_used",
        "n_trimmed",
    ] {
        assert!(!e[key].is_null(), "{key}");
    }
    let est = e["estimate"].as_f64().unwrap();
    assert!((est - 2.0).abs() < 0.5, "{est}");
}

#[test]
fn weighted_mode_default_and_column_subgroups() {
    let tmp = tempfile::tempdir().unwrap();
    let input = panel(tmp.path(), true);
    let out = tmp.path().join("w1");
    ok_run(
        &[
            "--mode",
            "weighted",
            "--input",
            input.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        &out,
    );
    let e = read_json(&out.join("effects.json"));
    assert_eq!(e[0]["subgroup"], "D1 in {1,0}");

    let out = tmp.path().join("w2");
    ok_run(
        &[
            "--mode",
            "weighted",
            "--input",
            input.to_str().unwrap(),
            "--s-col",
            "s",
            "--out",
            out.to_str().unwrap(),
        ],
        &out,
    );
    let e = read_json(&out.join("effects.json"));
    assert_eq!(e[0]["subgroup"], "column s");
}

#[test]
fn placebo_mode_with_pseudo_treatment_column() {
    let tmp = tempfile::tempdir().unwrap();
    let input = panel(tmp.path(), true);
    let out = tmp.path().join("pl");
    ok_run(
        &[
            "--mode",
            "placebo",
            "--input",
            input.to_str().unwrap(),
            "--s-col",
            "s",
            "--out",
            out.to_str().unwrap(),
        ],
        &out,
    );
    let e = read_json(&out.join("effects.json"));
    assert_eq!(e[0]["kind"], "placebo");
}

#[test]
fn montecarlo_mode_from_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("mc");
    let cfg = tmp.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "mode = \"montecarlo\"\nout = \"{}\"\nseed = 5\n[montecarlo]\ngrid = [\"5x300\", \"5x400:3\"]\nreps = 2\n",
            out.display()
        ),
    )
    .unwrap();
    let files = ok_run(&["--config", cfg.to_str().unwrap()], &out);
    assert!(files.iter().any(|f| f == "montecarlo.csv"));
    let csv = std::fs::read_to_string(out.join("montecarlo.csv")).unwrap();
    // Two cells times two estimators plus the header.
    assert_eq!(csv.lines().count(), 5);
    let reps = std::fs::read_to_string(out.join("replications.csv")).unwrap();
    assert_eq!(reps.lines().count(), 1 + 2 * (2 + 3));
}

#[test]
fn audit_mode_without_input() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("audit");
    let cfg = tmp.path().join("audit.toml");
    std::fs::write(&cfg, "mode = \"audit\"\n[audit]\nn = 800\np = 10\n").unwrap();
    ok_run(
        &[
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        &out,
    );
    let a = read_json(&out.join("audit.json"));
    assert!(a["pseudo_r2_d1"].as_f64().unwrap() > 0.0);
}

fn failing(args: &[&str], out: &Path) -> Value {
    let res = bin(args);
    assert!(!res.status.success());
    let text = std::fs::read_to_string(out.join("error.json")).unwrap();
    validate_error_json(&text).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn same_first_treatment_contrast_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let input = panel(tmp.path(), false);
    let out = tmp.path().join("bad");
    let err = failing(
        &[
            "--mode",
            "estimate",
            "--input",
            input.to_str().unwrap(),
            "--arm-a",
            "1,1",
            "--arm-b",
            "1,0",
            "--out",
            out.to_str().unwrap(),
        ],
        &out,
    );
    assert_eq!(err["kind"], "invalid_contrast");
    assert!(err["message"]
        .as_str()
        .unwrap()
        .contains("same first-period treatment; use static/placebo mode"));
}

#[test]
fn missing_input_file_is_a_file_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("missing");
    let err = failing(
        &[
            "--mode",
            "estimate",
            "--input",
            tmp.path().join("nope.csv").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        &out,
    );
    assert_eq!(err["kind"], "file");
}

#[test]
fn empty_stratum_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let input = panel(tmp.path(), false);
    let out = tmp.path().join("strat");
    // No observation has a first treatment of 2.
    let err = failing(
        &[
            "--mode",
            "estimate",
            "--input",
            input.to_str().unwrap(),
            "--arm-a",
            "2,1",
            "--arm-b",
            "0,0",
            "--out",
            out.to_str().unwrap(),
        ],
        &out,
    );
    let kind = err["kind"].as_str().unwrap();
    assert!(matches!(kind, "no_variation" | "empty_stratum"), "{kind}");
}
