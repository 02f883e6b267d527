use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pluripot"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn counterexample_bundle() {
    let out = tempfile::tempdir().unwrap();
    let o = bin().arg("run").arg(scenario("counterexample.json")).arg("--out").arg(out.path()).arg("--csv").output().unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let printed: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let on_disk: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(printed, on_disk);
    assert_eq!(printed["schema_version"], 1);
    assert_eq!(printed["checks"]["capacities_growing"], true);
    for f in printed["files"].as_array().unwrap() {
        assert!(out.path().join(f.as_str().unwrap()).exists());
    }

    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.path().join("counterexample.json")).unwrap()).unwrap();
    let rows = report["report"]["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    for r in rows {
        let (got, want) = (r["deviation_capacity"].as_f64().unwrap(), r["closed_form"].as_f64().unwrap());
        assert!((got - want).abs() <= 1e-6 * want);
    }
}

#[test]
fn unknown_function_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "bad.json",
        r#"{"name": "bad", "domain": {"dim": 1}, "resolution": 32,
            "functions": {"u": "abs2(z) - 1", "v": "abs2(z) - 1"},
            "task": "verify-lemma1", "params": {"u": "u", "v": "v", "w": ["w9"]}}"#,
    );
    for cmd in ["check", "run"] {
        let o = bin().arg(cmd).arg(&p).output().unwrap();
        assert_eq!(code(&o), 2);
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains("params.w[0]") && err.contains("w9"), "{err}");
    }
}

#[test]
fn malformed_json_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "broken.json", "{\"name\": ");
    assert_eq!(code(&bin().arg("check").arg(&p).output().unwrap()), 2);
}

#[test]
fn missing_file_is_an_io_error() {
    let o = bin().arg("run").arg("/nonexistent/scenario.json").output().unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn perturbation_outside_e_breaks_the_hypothesis() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "t2.json",
        r#"{"name": "t2", "domain": {"dim": 1}, "resolution": 32,
            "functions": {"u": "abs2(z) - 1"}, "task": "theorem2",
            "params": {"limit": "u", "perturbation": {"radius": 0.8, "amplitude": 0.3},
                       "j_list": [1, 2, 4, 8], "set": {"kind": "ball", "radius": 0.5}}}"#,
    );
    let o = bin().arg("run").arg(&p).output().unwrap();
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn failed_expectation_exits_with_assertion_code() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "cap.json",
        r#"{"name": "cap", "domain": {"dim": 1}, "resolution": 32, "task": "capacity",
            "params": {"set": {"kind": "ball", "radius": 0.5}, "order": "full_n",
                       "expect": {"value": 1.0, "rel_tol": 0.01}}}"#,
    );
    let o = bin().arg("run").arg(&p).output().unwrap();
    assert_eq!(code(&o), 5);
    let m: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(m["pass"], false);
}

#[test]
fn thread_count_does_not_change_reports() {
    let runs: Vec<Vec<u8>> = ["1", "3"]
        .iter()
        .map(|t| {
            let out = tempfile::tempdir().unwrap();
            let o = bin()
                .args(["run", scenario("lemma2.json").to_str().unwrap(), "--threads", t, "--out"])
                .arg(out.path())
                .output()
                .unwrap();
            assert_eq!(code(&o), 0);
            std::fs::read(out.path().join("inequality.json")).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn resolution_override_is_recorded() {
    let o = bin().args(["run", scenario("ma_disc.json").to_str().unwrap(), "--resolution", "48"]).output().unwrap();
    assert_eq!(code(&o), 0);
    let m: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(m["resolution"], 48);
}

#[test]
fn shipped_scenarios_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        let o = bin().arg("check").arg(&p).output().unwrap();
        assert_eq!(code(&o), 0, "{}: {}", p.display(), String::from_utf8_lossy(&o.stderr));
    }
}
