//! End-to-end checks of the command-line surface: flag parsing, config-file
//! override semantics, CSV output, and exit codes (0 success, 2 config
//! error, 3 partial cell failure).

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nestquad"))
}

#[test]
fn estimate_prints_value_and_exits_zero() {
    let out = bin()
        .args([
            "estimate",
            "--problem",
            "synthetic",
            "--estimator",
            "nkq",
            "--n",
            "16",
            "--t",
            "16",
            "--seed",
            "3",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("estimate="), "{text}");
    assert!(text.contains("cost=256"), "{text}");
}

#[test]
fn unknown_problem_exits_two() {
    let out = bin()
        .args(["estimate", "--problem", "nonexistent", "--estimator", "nkq", "--n", "4", "--t", "4"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{out:?}");
}

#[test]
fn sweep_writes_csv_and_fit_reads_it() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("runs.csv");
    let out = bin()
        .args([
            "sweep",
            "--problem",
            "synthetic",
            "--estimator",
            "nkq,nmc",
            "--cost-grid",
            "100,1000",
            "--replicates",
            "5",
            "--seed",
            "1",
            "--out",
        ])
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    let text = std::fs::read_to_string(&csv).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(
        header,
        "problem,estimator,point_source,cost,N,T,L,replicate,seed,estimate,abs_error,wall_millis,lambda0_x,lambda0_theta"
    );
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 5);

    let fit = bin().args(["fit", "--input"]).arg(&csv).output().unwrap();
    assert!(fit.status.success());
    let fit_text = String::from_utf8(fit.stdout).unwrap();
    assert!(fit_text.contains("nkq/iid: slope="), "{fit_text}");

    let sum = bin().args(["summarize", "--input"]).arg(&csv).output().unwrap();
    assert!(sum.status.success());
    assert!(String::from_utf8(sum.stdout).unwrap().contains("synthetic-1d"));
}

#[test]
fn config_file_drives_sweep_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sweep.json");
    std::fs::write(
        &cfg,
        r#"{
            "problem": { "name": "synthetic", "d": 1 },
            "estimators": ["nmc"],
            "point_source": "Iid",
            "budget": [ { "n": 4, "t": 4 } ],
            "replicates": 3,
            "base_seed": 9
        }"#,
    )
    .unwrap();
    let csv = dir.path().join("runs.csv");
    let out = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--replicates", "2", "--out"])
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    // flag overrode the config's replicate count
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 1 + 2);
}

#[test]
fn failing_cells_exit_three_but_keep_good_records() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("runs.csv");
    // delta = 2.0 is invalid and fails its cells; the cost cell still runs
    let out = bin()
        .args([
            "sweep",
            "--problem",
            "synthetic",
            "--estimator",
            "nmc",
            "--delta-grid",
            "2.0",
            "--cost-grid",
            "100",
            "--replicates",
            "2",
            "--seed",
            "0",
            "--out",
        ])
        .arg(&csv)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{out:?}");
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 1 + 2);
}

#[test]
fn grid_search_reports_selection() {
    let out = bin()
        .args([
            "grid",
            "--problem",
            "synthetic",
            "--n",
            "8",
            "--t",
            "8",
            "--replicates",
            "2",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{out:?}");
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("selected: lambda0_x="), "{text}");
}
