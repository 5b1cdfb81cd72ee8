use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn germforge(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_germforge"));
    cmd.args(args).env_remove("GERMFORGE_OUT");
    if let Some(p) = out_env {
        cmd.env("GERMFORGE_OUT", p);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn cones_writes_table_and_events() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("reports");
    let o = germforge(&["cones", "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let table = fs::read_to_string(out.join("cones-diag-plane.csv")).unwrap();
    let header: Vec<&str> = table.lines().next().unwrap().split(',').collect();
    let row: Vec<&str> = table.lines().nth(1).unwrap().split(',').collect();
    let at = |name: &str| row[header.iter().position(|h| *h == name).unwrap()];
    assert_eq!(at("quadrant"), "true");
    assert_eq!(at("rays"), "2");
    let events = fs::read_to_string(out.join("events.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(events.lines().last().unwrap()).unwrap();
    assert_eq!(last["event"], "run");
    assert_eq!(last["passed"], true);
}

#[test]
fn environment_overrides_out_flag() {
    let flag = tempfile::tempdir().unwrap();
    let env = tempfile::tempdir().unwrap();
    let o = germforge(&["degree", "--out", flag.path().to_str().unwrap()], Some(env.path()));
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(env.path().join("degree-cubic.csv").exists());
    assert!(!flag.path().join("degree-cubic.csv").exists());
}

#[test]
fn config_file_models_and_flags_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("models.ini");
    fs::write(&cfg, "[run]\nseed = 11\n\n# two degree models\n[cubic]\n[sq]\nregistry = square-minus-one\n").unwrap();
    let mut tables = Vec::new();
    for sub in ["a", "b"] {
        let out = dir.path().join(sub);
        let o = germforge(
            &["degree", "--config", cfg.to_str().unwrap(), "--trials", "4", "--out", out.to_str().unwrap()],
            None,
        );
        assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
        assert!(stdout(&o).contains("[PASS] degree sq"));
        tables.push((fs::read(out.join("degree-cubic.csv")).unwrap(), fs::read(out.join("degree-sq.csv")).unwrap()));
    }
    assert_eq!(tables[0], tables[1]);
}

#[test]
fn config_errors_exit_two_with_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("[c]\nregistry = cubic\nbogus = 1\n", "line 3"),
        ("[c]\nregistry = no-such-model\n", "line 1"),
        ("[c]\nregistry = circle\nparams = -1\n", "radius must be positive"),
        ("[run]\ntol = 0\n", "line 2"),
    ];
    for (text, needle) in cases {
        let cfg = dir.path().join("bad.ini");
        fs::write(&cfg, text).unwrap();
        let o = germforge(&["parametrize", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], None);
        let err = String::from_utf8_lossy(&o.stderr);
        assert_eq!(o.status.code(), Some(2), "{text}: {err}");
        assert!(err.contains(needle), "{text}: {err}");
    }
    let missing = germforge(&["cones", "--config", "/nonexistent/models.ini"], None);
    assert_eq!(missing.status.code(), Some(2));
    let bad_flag = germforge(&["cones", "--tol", "-1"], None);
    assert_eq!(bad_flag.status.code(), Some(2));
    // A germ model has nothing for `cones` to run.
    fs::write(dir.path().join("germ.ini"), "[cosine]\n").unwrap();
    let o = germforge(&["cones", "--config", dir.path().join("germ.ini").to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unattainable_tolerance_exits_one() {
    // Residuals cannot reach below machine precision.
    let dir = tempfile::tempdir().unwrap();
    let o = germforge(&["parametrize", "--tol", "1e-300", "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("[FAIL] parametrize circle"));
    assert!(dir.path().join("parametrize-circle.csv").exists());
}

#[test]
fn selftest_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = germforge(&["selftest", "--out", dir.path().to_str().unwrap()], None);
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert!(text.contains("c10-determinism"), "{text}");
    assert!(!text.contains("[FAIL]"));
}
