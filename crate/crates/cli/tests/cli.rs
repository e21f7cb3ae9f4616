use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn cdca_sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdca-sim")).args(args).output().expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_outputs_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("on");
    let cfg = scenario("blocked_lanes.toml");
    let o = cdca_sim(&["run", "--config", path_str(&cfg), "--duration", "150", "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.starts_with("ticks=300 "), "{stdout}");
    for name in ["metrics.csv", "events.csv", "config_echo.toml", "world_final.csv"] {
        assert!(out.join(name).is_file(), "{name}");
    }
    let echo = fs::read_to_string(out.join("config_echo.toml")).unwrap();
    assert!(echo.contains("duration = 150.0"), "{echo}");
}

#[test]
fn overrides_reach_the_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario("table1.toml");
    let code = cdca_sim_cli::cli_main([
        "cdca-sim",
        "run",
        "--config",
        path_str(&cfg),
        "--seed",
        "7",
        "--cdca",
        "off",
        "--duration",
        "20",
        "--no-cessation",
        "--threshold",
        "0.5",
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(code, 0);
    let echo = fs::read_to_string(dir.path().join("config_echo.toml")).unwrap();
    for expected in ["seed = 7", "cdca_enabled = false", "cessation = false", "congestion_threshold = 0.5"] {
        assert!(echo.contains(expected), "{expected} missing from\n{echo}");
    }
}

#[test]
fn missing_config_exits_2() {
    let o = cdca_sim(&["run", "--config", "/nonexistent/x.toml", "--out", "/tmp/never"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/x.toml"));
}

#[test]
fn invalid_values_exit_2_and_name_every_key() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "truck_share = 1.5\ndt = -1\n").unwrap();
    let o = cdca_sim(&["validate", "--config", path_str(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("truck_share") && err.contains("dt"), "{err}");
}

#[test]
fn validate_accepts_the_shipped_scenarios() {
    for name in ["table1.toml", "blocked_lanes.toml"] {
        let o = cdca_sim(&["validate", "--config", path_str(&scenario(name))]);
        assert_eq!(o.status.code(), Some(0), "{name}");
        assert!(String::from_utf8_lossy(&o.stdout).starts_with("ok: 1200 ticks"), "{name}");
    }
}

#[test]
fn plot_overlays_two_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario("blocked_lanes.toml");
    for mode in ["on", "off"] {
        let out = dir.path().join(mode);
        let code = cdca_sim_cli::cli_main([
            "cdca-sim", "run", "--config", path_str(&cfg), "--cdca", mode, "--duration", "150", "--out", path_str(&out),
        ]);
        assert_eq!(code, 0);
    }
    let svg = dir.path().join("cmp.svg");
    let on = dir.path().join("on/metrics.csv");
    let off = dir.path().join("off/metrics.csv");
    let o = cdca_sim(&[
        "plot", "--kind", "congestion_vs_time", "--in", path_str(&on), "--in", path_str(&off), "--out", path_str(&svg),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&svg).unwrap();
    assert!(text.contains(">on<") && text.contains(">off<"));
}

#[test]
fn plot_rejects_foreign_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("other.csv");
    fs::write(&csv, "a,b\n1,2\n").unwrap();
    let code = cdca_sim_cli::cli_main([
        "cdca-sim",
        "plot",
        "--kind",
        "speed_histogram",
        "--in",
        path_str(&csv),
        "--out",
        path_str(&dir.path().join("x.svg")),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn help_and_bad_arguments() {
    assert_eq!(cdca_sim(&["--help"]).status.code(), Some(0));
    assert_eq!(cdca_sim(&["--version"]).status.code(), Some(0));
    assert_eq!(cdca_sim(&["run", "--bogus"]).status.code(), Some(1));
    assert_eq!(cdca_sim(&[]).status.code(), Some(1));
    assert_eq!(cdca_sim(&["plot", "--kind", "pie", "--in", "a", "--out", "b"]).status.code(), Some(1));
}
