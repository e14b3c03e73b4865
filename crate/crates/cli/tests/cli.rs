use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mre(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mre"))
        .args(args)
        .env_remove("MRE_THREADS")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn out_of_range_gamma_is_a_config_error() {
    let out = mre(&["audit", "--gamma", "2.3", "--points", "5"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("(1, 2)"), "{}", stderr(&out));
}

#[test]
fn audit_is_reproducible_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = mre(&["audit", "--seed", "7", "--points", "30", "--out", path_str(d)]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let (ja, jb) = (fs::read(a.join("audit.json")).unwrap(), fs::read(b.join("audit.json")).unwrap());
    assert_eq!(ja, jb);
    assert_eq!(json(&a.join("audit.json"))["passed"], true);
}

#[test]
fn impossible_tolerance_fails_the_audit() {
    let out = mre(&["audit", "--points", "10", "--tol", "1e-16"]);
    assert_eq!(code(&out), 6);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], false);
}

#[test]
fn missing_config_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mre(&["run", "--config", path_str(&dir.path().join("nope.toml"))]);
    assert_eq!(code(&out), 1);
}

#[test]
fn unknown_scenario_is_a_config_error() {
    assert_eq!(code(&mre(&["run", "--scenario", "relax-nothing"])), 2);
    assert_eq!(code(&mre(&["scenarios", "--show", "relax-nothing"])), 2);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[step]\nt_end = 0.1\ncfl_number = 0.3\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = mre(&["run", "--config", path_str(&cfg), "--out", path_str(&out_dir)]);
    assert_eq!(code(&out), 2);
    let summary = json(&out_dir.join("summary.json"));
    assert_eq!(summary["exit_code"], 2);
    assert!(summary["error"].is_string());
}

#[test]
fn short_run_writes_its_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(
        &cfg,
        "scenario = \"relax-bbar\"\n[grid]\nn = 32\n[step]\nt_end = 0.1\n[diagnostics]\ncadence = 0.05\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = mre(&["run", "--config", path_str(&cfg), "--out", path_str(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["timeseries.csv", "summary.json", "config.toml", "snapshot_t0.csv"] {
        assert!(out_dir.join(f).is_file(), "missing {f}");
    }
    let summary = json(&out_dir.join("summary.json"));
    assert_eq!(summary["scenario"], "relax-bbar");
    assert_eq!(summary["exit_code"], 0);
    assert_eq!(summary["records"], 3);
}

#[test]
fn stiffness_collapse_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[grid]\nn = 32\n[step]\nt_end = 0.2\ndt_min = 0.05\ndt_max = 0.1\n").unwrap();
    let out = mre(&["run", "--config", path_str(&cfg)]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn levels_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = mre(&["levels", "--n-rho", "21", "--n-b", "21", "--out", path_str(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["w_levels.csv", "z_levels.csv"] {
        let text = fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(text.starts_with("rho,b,value,branch\n"), "{f}");
        assert!(text.lines().count() > 21 * 21);
    }
    let report = json(&dir.path().join("levels.json"));
    assert!(report["w_bounded"].is_boolean());
}

#[test]
fn converge_single_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(
        &cfg,
        "scenario = \"converge-wide\"\n[converge]\nns = [32]\nreference_n = 64\nepsilons = [0.0]\n",
    )
    .unwrap();
    let out = mre(&["converge", "--config", path_str(&cfg), "--out", path_str(dir.path())]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json(&dir.path().join("converge.json"));
    assert_eq!(report["spatial"]["errors"].as_array().unwrap().len(), 1);
    assert!(report["spatial"]["min_order"].is_null());
}

#[test]
fn shown_scenario_runs_as_a_config() {
    let listing = mre(&["scenarios"]);
    assert_eq!(code(&listing), 0);
    let names = String::from_utf8(listing.stdout).unwrap();
    for name in ["relax-b0", "relax-bbar", "probe-large", "converge-wide"] {
        assert!(names.contains(name));
    }

    let shown = mre(&["scenarios", "--show", "relax-bbar"]);
    assert_eq!(code(&shown), 0);
    let mut text = String::from_utf8(shown.stdout).unwrap();
    // shrink the run; later keys in a repeated table would be rejected, so edit in place
    text = text.replace("t_end = 20.0", "t_end = 0.05").replace("n = 128", "n = 32");
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, &text).unwrap();
    let out = mre(&["run", "--config", path_str(&cfg)]);
    assert_eq!(code(&out), 0, "{}\n{text}", stderr(&out));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["scenario"], "relax-bbar");
    assert_eq!(summary["t_final"], 0.05);
}
