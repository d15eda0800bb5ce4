//! End-to-end tests of the command-line binary: CSV shapes, determinism,
//! config validation, and exit codes.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_apsde"))
}

fn tmp_path(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("apsde-cli-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn trajectory_row_count_and_header() {
    let out = tmp_path("traj.csv");
    let status = bin()
        .args([
            "trajectory",
            "--model",
            "avg-ex",
            "--scheme",
            "ap-avg",
            "--dt",
            "0.004",
            "--eps",
            "0.001",
            "--T",
            "1",
            "--seed",
            "0",
            "--output",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = read(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,x_0,m");
    // 250 steps plus the initial state.
    assert_eq!(lines.len() - 1, 251, "expected 251 data rows");
    assert!(text.ends_with('\n'));
    assert!(!text.contains('\r'), "LF line endings only");
}

#[test]
fn weak_error_is_deterministic() {
    let run = |path: &Path| {
        let status = bin()
            .args([
                "weak-error",
                "--model",
                "avg-ex",
                "--scheme",
                "ap-avg",
                "--dt-grid",
                "0.0625,0.03125",
                "--eps",
                "0.25",
                "--samples",
                "400",
                "--seed",
                "42",
                "--observable",
                "sin2pix",
                "--output",
            ])
            .arg(path)
            .status()
            .unwrap();
        assert!(status.success());
    };
    let (a, b) = (tmp_path("we-a.csv"), tmp_path("we-b.csv"));
    run(&a);
    run(&b);
    let (ta, tb) = (read(&a), read(&b));
    assert_eq!(ta, tb, "two runs with the same seed must be byte-identical");
    assert!(ta.starts_with("dt,eps,scheme,estimate,std_error,error,error_std,samples"));
}

#[test]
fn empty_eps_grid_is_a_config_error() {
    let out = tmp_path("sweep.csv");
    let output = bin()
        .args([
            "sweep",
            "--model",
            "avg-ex",
            "--scheme",
            "ap-avg",
            "--dt-grid",
            "0.0625",
            "--eps-grid",
            "",
            "--samples",
            "100",
            "--output",
        ])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("eps-grid"),
        "error message should name the offending key, got: {stderr}"
    );
}

#[test]
fn inconsistent_final_time_is_a_config_error() {
    let out = tmp_path("traj-bad.csv");
    let output = bin()
        .args([
            "trajectory",
            "--model",
            "avg-ex",
            "--scheme",
            "ap-avg",
            "--dt",
            "0.3",
            "--eps",
            "0.1",
            "--T",
            "1",
            "--output",
        ])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn unknown_scheme_is_a_config_error() {
    let out = tmp_path("traj-unknown.csv");
    let output = bin()
        .args([
            "trajectory",
            "--model",
            "avg-ex",
            "--scheme",
            "midpoint",
            "--dt",
            "0.004",
            "--eps",
            "0.1",
            "--output",
        ])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("midpoint"), "got: {stderr}");
}

#[test]
fn config_file_is_merged_and_flags_override() {
    let cfg = tmp_path("run.json");
    std::fs::write(
        &cfg,
        r#"{"model": "avg-ex", "scheme": "ap-avg", "dt": 0.01, "eps": 0.5, "T": 0.1, "seed": 3}"#,
    )
    .unwrap();
    let direct = tmp_path("traj-direct.csv");
    let merged = tmp_path("traj-merged.csv");
    // Same run expressed twice: all flags, versus config file plus one
    // overriding flag.
    let status = bin()
        .args([
            "trajectory",
            "--model",
            "avg-ex",
            "--scheme",
            "ap-avg",
            "--dt",
            "0.01",
            "--eps",
            "0.25",
            "--T",
            "0.1",
            "--seed",
            "3",
            "--output",
        ])
        .arg(&direct)
        .status()
        .unwrap();
    assert!(status.success());
    let status = bin()
        .arg("--config")
        .arg(&cfg)
        .args(["trajectory", "--eps", "0.25", "--output"])
        .arg(&merged)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(read(&direct), read(&merged));
}

#[test]
fn preset_writes_one_csv_per_scheme() {
    let base = tmp_path("fig");
    let status = bin()
        .args(["trajectory", "--preset", "fig-av1", "--output"])
        .arg(&base)
        .status()
        .unwrap();
    assert!(status.success());
    let dir = base.parent().unwrap();
    for label in ["ap-avg", "crude-avg", "limit-avg", "ref-avg"] {
        let path = dir.join(format!("fig-{label}.csv"));
        assert!(path.exists(), "missing {}", path.display());
        assert!(read(&path).starts_with("t,x_0,m"));
    }
}
