//! End-to-end checks of the `onebit` binary: exit codes, documented examples,
//! output formats, config/env handling and figure bundles.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use onebit_core::record::read_csv;
use onebit_core::ExperimentRecord;

fn onebit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_onebit"))
        .args(args)
        .env_remove("ONEBIT_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = onebit(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn records(csv: &str) -> Vec<ExperimentRecord> {
    read_csv(csv.as_bytes()).unwrap()
}

/// Column `name` of the first data row of a CSV text.
fn column(csv: &str, name: &str) -> String {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    row[k].to_string()
}

#[test]
fn least_squares_theory_example() {
    let recs = records(&ok(&["theory", "--loss", "ls", "--delta", "2", "--eps", "0"]));
    assert_eq!(recs.len(), 1);
    assert!((recs[0].theory_corr.unwrap() - 0.79788).abs() < 1e-4);
    assert!(recs[0].dominated(1e-3));
}

#[test]
fn unbounded_cells_are_reported_not_dropped() {
    // Unbounded is an answer, so even --strict succeeds.
    let recs = records(&ok(&["theory", "--loss", "hinge", "--delta", "5", "--eps", "0", "--strict"]));
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].status, "unbounded");
    assert!(recs[0].theory_corr.is_none());
}

#[test]
fn records_are_ordered_by_loss_delta_eps() {
    let recs = records(&ok(&["theory", "--loss", "ls,lad", "--delta", "2:4:2", "--eps", "0,0.1"]));
    let keys: Vec<(String, f64, f64)> = recs.iter().map(|r| (r.loss.clone(), r.delta, r.epsilon)).collect();
    let expected = [
        ("ls", 2.0, 0.0),
        ("ls", 2.0, 0.1),
        ("ls", 4.0, 0.0),
        ("ls", 4.0, 0.1),
        ("lad", 2.0, 0.0),
        ("lad", 2.0, 0.1),
        ("lad", 4.0, 0.0),
        ("lad", 4.0, 0.1),
    ];
    assert_eq!(keys.len(), expected.len());
    for (k, e) in keys.iter().zip(expected) {
        assert_eq!((k.0.as_str(), k.1, k.2), e);
    }
    assert!(recs.iter().all(|r| r.dominated(1e-3)));
}

#[test]
fn usage_errors_exit_with_status_2() {
    for args in [
        &["theory", "--delta", "1"][..],
        &["bound", "--eps", "0.6"],
        &["simulate", "--trials", "0"],
        &["figure", "fig9"],
        &["theory", "--loss", "l3"],
        &["theory", "--nodes", "1"],
        &["theory", "--bogus"],
    ] {
        let out = onebit(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn strict_mode_exits_with_status_3_after_writing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let args = ["theory", "--loss", "ls", "--delta", "1.001", "--eps", "0.49", "--out", path.to_str().unwrap()];
    assert_eq!(onebit(&args).status.code(), Some(0));
    let mut strict = args.to_vec();
    strict.push("--strict");
    assert_eq!(onebit(&strict).status.code(), Some(3));
    let recs: Vec<ExperimentRecord> = read_csv(fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(recs[0].status, "diverged");
}

#[test]
fn bound_and_threshold_examples() {
    let csv = ok(&["bound", "--eps", "0.5", "--delta", "2"]);
    let v: f64 = column(&csv, "corr_upper").parse().unwrap();
    assert!((v - 0.70711).abs() < 1e-4);

    let csv = ok(&["bound", "--eps", "0", "--delta", "4"]);
    let numeric: f64 = column(&csv, "corr_upper").parse().unwrap();
    let analytic: f64 = column(&csv, "analytic_corr_upper").parse().unwrap();
    assert!(numeric > 0.0 && analytic > 0.0);

    let csv = ok(&["threshold", "--eps", "0"]);
    assert_eq!(column(&csv, "delta_star"), "inf");
    let json = ok(&["threshold", "--eps", "0.5", "--format", "json"]);
    let rows: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert!((rows[0]["value"].as_f64().unwrap() - 2.0).abs() < 1e-3);
}

#[test]
fn simulate_example_is_accurate_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let path = dir.path().join(name);
        ok(&[
            "simulate", "--loss", "ls", "--n", "128", "--delta", "4", "--eps", "0", "--trials", "25", "--seed", "1",
            "--out", path.to_str().unwrap(),
        ]);
        fs::read(path).unwrap()
    };
    let (a, b) = (run("a.csv"), run("b.csv"));
    assert_eq!(a, b, "reruns must be byte-identical");
    let recs: Vec<ExperimentRecord> = read_csv(&a[..]).unwrap();
    let r = &recs[0];
    assert!((r.empirical_mean.unwrap() - 0.91630).abs() < 0.02);
    assert_eq!((r.trials, r.failed_count, r.seeds.as_str()), (25, 0, "1:25"));
}

#[test]
fn csv_and_json_carry_the_same_records() {
    let args = ["simulate", "--loss", "ls,hinge", "--delta", "3", "--eps", "0.1", "--n", "16", "--trials", "3"];
    let csv = records(&ok(&args));
    let mut json_args = args.to_vec();
    json_args.extend(["--format", "json"]);
    let json: Vec<ExperimentRecord> = serde_json::from_str(&ok(&json_args)).unwrap();
    assert_eq!(csv, json);
    // And the CSV text itself round-trips.
    let mut buf = Vec::new();
    onebit_core::record::write_csv(&csv, &mut buf).unwrap();
    assert_eq!(records(std::str::from_utf8(&buf).unwrap()), csv);
}

#[test]
fn config_supplies_flags_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "loss = \"lad\"\ndelta = [2, 3]\neps = 0.1\nformat = \"json\"\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let from_cfg: Vec<ExperimentRecord> = serde_json::from_str(&ok(&["theory", "--config", cfg])).unwrap();
    assert_eq!(from_cfg.len(), 2);
    assert!(from_cfg.iter().all(|r| r.loss == "lad" && r.epsilon == 0.1));
    let overridden = records(&ok(&["theory", "--config", cfg, "--delta", "4", "--format", "csv"]));
    assert_eq!(overridden.len(), 1);
    assert_eq!((overridden[0].loss.as_str(), overridden[0].delta), ("lad", 4.0));

    fs::write(dir.path().join("bad.toml"), "colour = 3\n").unwrap();
    let bad = dir.path().join("bad.toml");
    assert_eq!(onebit(&["theory", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn environment_sets_default_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_onebit"))
        .args(["bound", "--delta", "2", "--eps", "0.5"])
        .env("ONEBIT_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    assert!(fs::read_to_string(dir.path().join("bound.csv")).unwrap().starts_with("delta,"));
}

fn files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
}

#[test]
fn figure_bundles_are_complete_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, out: &str| {
        let path = dir.path().join(out);
        ok(&[
            "figure", name, "--delta", "4,8", "--n", "16", "--trials", "2", "--empirical-points", "1", "--out",
            path.to_str().unwrap(),
        ]);
        path
    };
    let fig3 = run("fig3", "a");
    assert_eq!(
        files(&fig3),
        [
            "bound.csv",
            "empirical_hinge.csv",
            "empirical_lad.csv",
            "empirical_ls.csv",
            "manifest.json",
            "theory_hinge.csv",
            "theory_lad.csv",
            "theory_ls.csv",
            "threshold.csv"
        ]
    );
    let again = run("fig3", "b");
    for f in files(&fig3).iter().filter(|f| *f != "manifest.json") {
        assert_eq!(fs::read(fig3.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(fig3.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["figure"], "fig3");
    assert_eq!(manifest["curves"].as_array().unwrap().len(), 8);
    assert_eq!(manifest["dominance_violations"], 0);
    assert!(manifest["generated_at"].is_string());
    for f in ["theory_ls.csv", "theory_lad.csv", "theory_hinge.csv"] {
        let recs: Vec<ExperimentRecord> = read_csv(fs::File::open(fig3.join(f)).unwrap()).unwrap();
        assert_eq!(recs.len(), 2);
        assert!(recs.iter().all(|r| r.status == "ok" && r.dominated(1e-3)));
    }

    let fig2 = run("fig2", "c");
    assert!(!files(&fig2).iter().any(|f| f.contains("hinge") || f.starts_with("threshold")));
    assert!(files(&fig2).contains(&"theory_lad.csv".to_string()));
}

#[test]
fn default_figure_grid_starts_above_threshold_for_hinge() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig");
    // Theory-heavy run with the smallest possible empirical part.
    ok(&[
        "figure", "fig4", "--loss", "hinge", "--n", "8", "--trials", "1", "--empirical-points", "1", "--out",
        out.to_str().unwrap(),
    ]);
    let recs: Vec<ExperimentRecord> = read_csv(fs::File::open(out.join("theory_hinge.csv")).unwrap()).unwrap();
    assert_eq!(recs.len(), 40);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    let dstar = manifest["threshold"].as_f64().unwrap();
    assert!((recs[0].delta - (dstar + 0.25)).abs() < 1e-12);
    assert_eq!(recs[39].delta, 30.0);
    assert!(recs.iter().all(|r| r.status == "ok" && r.dominated(1e-3)));
}

#[test]
fn sigma_and_threshold_figures() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sigma");
    ok(&["figure", "sigma", "--out", out.to_str().unwrap()]);
    for e in ["0", "0.1", "0.25"] {
        let text = fs::read_to_string(out.join(format!("sigma_eps{e}.csv"))).unwrap();
        let h: Vec<f64> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
            .collect();
        assert_eq!(h.len(), 60);
        assert!(h.windows(2).all(|w| w[0] < w[1]), "eps={e}");
        assert!(h.iter().all(|v| (0.0..1.0).contains(v)), "eps={e}");
    }

    let out = dir.path().join("thr");
    ok(&["figure", "threshold", "--out", out.to_str().unwrap()]);
    let text = fs::read_to_string(out.join("threshold.csv")).unwrap();
    let d: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(d.len(), 51);
    assert!(d[0].is_infinite());
    assert!(d.windows(2).all(|w| w[1] < w[0]));
    assert!((d[50] - 2.0).abs() < 1e-3);
}
