use std::process::Command;

use serde_json::Value;

fn run(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_biconformal"))
        .args(args)
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn report(args: &[&str]) -> (i32, Value) {
    let (code, stdout, stderr) = run(args);
    let v = serde_json::from_str(&stdout).unwrap_or_else(|e| panic!("{e}: {stdout} {stderr}"));
    (code, v)
}

#[test]
fn bound_seven_three_is_twenty_five() {
    let (code, r) = report(&["bound", "--n", "7", "--p", "3"]);
    assert_eq!(code, 0);
    assert_eq!(r["checks"][0]["details"]["bound"], 25);
    assert_eq!(r["tool"], "biconformal");
}

#[test]
fn bound_five_two_is_flagged_infinite() {
    let (code, r) = report(&["bound", "--n", "5", "--p", "2"]);
    assert_eq!(code, 0);
    assert_eq!(r["checks"][0]["details"]["bound"], "infinite-possible");
    assert!(r["checks"][0]["details"]["reason"].is_string());
}

#[test]
fn expanding_congruence_reports_unit_gauges() {
    let (code, r) = report(&["--builtin", "rw-expanding", "check-bcvf", "xi"]);
    assert_eq!(code, 0);
    let c = &r["checks"][0];
    assert_eq!(c["status"], "pass");
    assert_eq!(c["points"], 32);
    for (key, want) in [("alpha", 1.0), ("beta", -1.0)] {
        for v in c["details"][key].as_array().unwrap() {
            assert!((v.as_f64().unwrap() - want).abs() < 1e-8);
        }
    }
    assert_eq!(r["manifest"]["name"], "rw-expanding");
}

#[test]
fn reports_are_byte_identical() {
    let args = ["--builtin", "twisted-3-4", "--points", "8", "integrability", "xi"];
    let (c1, a, _) = run(&args);
    let (c2, b, _) = run(&args);
    assert_eq!((c1, c2), (0, 0));
    assert_eq!(a, b);
}

#[test]
fn failing_field_exits_one() {
    let (code, r) = report(&["--builtin", "flat-split", "--points", "4", "check-bcvf", "control"]);
    assert_eq!(code, 1);
    assert_eq!(r["checks"][0]["status"], "fail");
}

#[test]
fn usage_and_manifest_errors_exit_two() {
    assert_eq!(run(&["check-root"]).0, 2);
    assert_eq!(run(&["frobnicate"]).0, 2);
    let (code, _, err) = run(&["--builtin", "rw-expanding", "check-bcvf", "eta"]);
    assert_eq!(code, 2);
    assert!(err.contains("unknown field 'eta'"), "{err}");
    let (code, _, err) = run(&["--builtin", "flat-split", "normal-system", "control"]);
    assert_eq!(code, 2);
    assert!(err.contains("alpha and beta"), "{err}");
}

#[test]
fn bad_manifest_names_the_field() {
    let dir = std::env::temp_dir().join(format!("biconformal-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bad.json");
    std::fs::write(
        &path,
        r#"{"schema": 1, "name": "bad", "dim": 2, "coordinates": ["x", "y"],
            "metric": [["1", "0"], ["0", "y +"]]}"#,
    )
    .unwrap();
    let (code, _, err) = run(&["--manifest", path.to_str().unwrap(), "check-metric"]);
    assert_eq!(code, 2);
    assert!(err.contains("metric[1][1]"), "{err}");
}

#[test]
fn json_out_writes_the_report() {
    let dir = std::env::temp_dir().join(format!("biconformal-out-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("report.json");
    let (code, stdout, _) = run(&["--json-out", path.to_str().unwrap(), "bound", "--n", "7", "--p", "3"]);
    assert_eq!(code, 0);
    assert!(stdout.contains("25"), "{stdout}");
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["checks"][0]["details"]["bound"], 25);
}

#[test]
fn every_builtin_passes_its_metric_checks() {
    let (_, r) = report(&["builtins"]);
    for c in r["checks"].as_array().unwrap() {
        let name = c["check"].as_str().unwrap();
        let (code, rep) = report(&["--builtin", name, "--points", "3", "check-metric"]);
        assert_eq!(code, 0, "{name}: {rep}");
    }
}
