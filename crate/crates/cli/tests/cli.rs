use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn underlay(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_underlay"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: &str = "[sweep]\nlatencies_ms = [0.5, 5.0]\njitters_ms = [0.05]\nseeds_per_cell = 1\ntrial_length_s = 4\n";

#[test]
fn sweep_writes_outputs_and_manifest_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let first = dir.path().join("first");
    let o = underlay(&["sweep", "--config", &cfg, "--out", first.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let md = stdout(&o);
    assert!(md.contains("| 0.05 | ✓ | x |"), "{md}");
    for f in ["matrix.csv", "matrix.md", "manifest.json"] {
        assert!(first.join(f).exists(), "{f}");
    }

    let second = dir.path().join("second");
    let manifest = first.join("manifest.json");
    let o = underlay(&[
        "sweep",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let a = fs::read(first.join("matrix.csv")).unwrap();
    let b = fs::read(second.join("matrix.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(stdout(&o).as_bytes(), &b[..]);
}

#[test]
fn seed_and_length_flags_reach_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("o");
    let o = underlay(&[
        "sweep",
        "--config",
        &cfg,
        "--seed",
        "42",
        "--trial-length",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seeds"], serde_json::json!([42]));
    assert_eq!(m["config"]["sweep"]["trial_length_s"], 3.0);
}

#[test]
fn bad_config_fails_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[sweep]\nseeds_per_cell = 1\nwhat = 3\n");
    let o = underlay(&["sweep", "--config", &cfg]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let cfg = write(dir.path(), "invalid.toml", "[loops.default]\nservo_period_us = 0\n");
    let o = underlay(&["sweep", "--config", &cfg]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("servo period"), "{}", stderr(&o));
}

#[test]
fn calibration_failure_exits_nonzero_with_confusion() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "cal.toml",
        "[sweep]\nseeds_per_cell = 1\ntrial_length_s = 2\n\n[calibration]\nkp = [140.0]\nfollowing_error_mm = [0.001]\nadapted_watchdog_us = [1550]\n",
    );
    let o = underlay(&["calibrate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("calibration failed"), "{err}");
    assert!(err.contains("confusion"), "{err}");
}

#[test]
fn trial_prints_verdict_and_exports_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    let o = underlay(&[
        "trial",
        "--latency-ms",
        "0.5",
        "--jitter-ms",
        "0.05",
        "--trial-length",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["verdict"]["outcome"], "pass");
    let csv = fs::read_to_string(out.join("trial.csv")).unwrap();
    assert!(csv.starts_with("time_us,setpoint_mm,feedback_mm,command_mm_s,following_error_mm"));
    assert!(fs::metadata(out.join("events.ndjson")).unwrap().len() > 0);
    let commands = fs::read_to_string(out.join("commands.csv")).unwrap();
    assert!(commands.lines().count() > 1000, "{}", commands.lines().count());
    assert!(fs::read_to_string(out.join("feedback.csv")).unwrap().lines().count() > 1000);
    assert!(v["urllc_ring"]["delivered"].as_u64().unwrap() > 0);
}

#[test]
fn trial_takes_channel_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "ch.toml",
        "[channel]\nmean_delay_ms = 5.0\njitter_ms = 0.05\n\n[sweep]\ntrial_length_s = 3\n",
    );
    let o = underlay(&["trial", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["verdict"]["outcome"], "fail");
}

#[test]
fn spectrum_requests_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "sp.toml",
        "[spectrum]\nstatic_plan = true\n\n[[spectrum.requests]]\ntime_ms = 1.0\nrequester = \"agv\"\nx = 0.0\ny = 0.0\nradius = 5.0\nbandwidth_mhz = 10.0\n",
    );
    let o = underlay(&["spectrum", "--config", &cfg]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("granted 3, rejected 1"), "{}", stdout(&o));
    assert!(!underlay(&["spectrum"]).status.success());
}

#[test]
fn severed_trial_reports_watchdog() {
    let o = underlay(&[
        "trial",
        "--latency-ms",
        "1",
        "--jitter-ms",
        "0.05",
        "--trial-length",
        "4",
        "--sever-at-ms",
        "2500",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["verdict"]["cause"], "watchdog");
}

#[test]
fn spectrum_script_runs_and_reports_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let script = write(
        dir.path(),
        "s.txt",
        "band 3700 3800\n0 static-plan\n5 request extra 0 0 10 10\n6 request far 900 0 10 10\n",
    );
    let out = dir.path().join("audit");
    let o = underlay(&["spectrum", &script, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("rejected: no contiguous free block"), "{text}");
    assert!(text.contains("granted 4, rejected 1"), "{text}");
    let audit = fs::read_to_string(out.join("audit.ndjson")).unwrap();
    assert_eq!(audit.lines().count(), 5);

    let bad = write(dir.path(), "bad.txt", "0 static-plan\n1 request a 0 0\n");
    let o = underlay(&["spectrum", &bad]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn render_converts_matrix_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "small.toml", SMALL);
    let o = underlay(&["sweep", "--config", &cfg, "--format", "csv"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = write(dir.path(), "m.csv", &stdout(&o));
    let o = underlay(&["render", &csv, "--format", "structured"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let last = stdout(&o).lines().last().unwrap().to_string();
    let summary: serde_json::Value = serde_json::from_str(&last).unwrap();
    assert_eq!(summary["summary"]["pass"], 1);
    assert_eq!(summary["summary"]["fail"], 1);

    let tampered = fs::read_to_string(&csv).unwrap().replacen(",pass,", ",fail,", 1);
    let bad = write(dir.path(), "t.csv", &tampered);
    let o = underlay(&["render", &bad]);
    assert!(!o.status.success());
}
