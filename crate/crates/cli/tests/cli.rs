use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const ASSETS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/assets");

fn congestion(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_congestion"));
    cmd.args(args).env_remove("CONGESTION_TOLERANCE").env_remove("CONGESTION_BUDGET");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn asset(name: &str) -> String {
    format!("{ASSETS}/{name}")
}

fn copy_assets(dir: &Path) {
    for entry in fs::read_dir(ASSETS).unwrap() {
        let p = entry.unwrap().path();
        fs::copy(&p, dir.join(p.file_name().unwrap())).unwrap();
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_passes_and_writes_tables() {
    let out = tempfile::tempdir().unwrap();
    let o = congestion(&["solve", "--game", &asset("example1.json"), "--out", s(out.path())], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let csv = fs::read_to_string(out.path().join("solve.csv")).unwrap();
    assert!(csv.starts_with("metric,value,exact,status"));
    assert!(out.path().join("report.json").exists());
}

#[test]
fn reproduce_reports_the_example4_failure() {
    let o = congestion(&["reproduce"], &[]);
    assert_eq!(o.status.code(), Some(2));
    let text = stdout(&o);
    assert!(text.contains("FAIL Example 4 PoA → 16/9"));
    assert!(text.contains("PASS Example 2 PoA 8/7 (n = 5)"));
    assert_eq!(text.lines().filter(|l| l.starts_with("FAIL")).count(), 1);
}

#[test]
fn perturbed_example2_fails() {
    let dir = tempfile::tempdir().unwrap();
    copy_assets(dir.path());
    let path = dir.path().join("example2.json");
    let text = fs::read_to_string(&path).unwrap().replace("\"coeffs\": [1, 1]", "\"coeffs\": [1, \"9/10\"]");
    fs::write(&path, text).unwrap();
    let o = congestion(&["reproduce", "--assets", s(dir.path())], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("FAIL Example 2 PoA 8/7 (n = 1)"));
}

#[test]
fn missing_asset_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = congestion(&["reproduce", "--assets", s(dir.path())], &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("asset not found"));
}

#[test]
fn input_errors_exit_3() {
    let out = tempfile::tempdir().unwrap();
    let missing: PathBuf = out.path().join("nope.json");
    let o = congestion(&["solve", "--game", s(&missing), "--out", s(out.path())], &[]);
    assert_eq!(o.status.code(), Some(3));
    let o = congestion(&["sweep", "--family", &asset("parallel_unit_family.json"), "--grid", "5,2", "--out", s(out.path())], &[]);
    assert_eq!(o.status.code(), Some(3));
    let o = congestion(&["solve", "--bogus"], &[]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn environment_overrides_solver_settings() {
    let out = tempfile::tempdir().unwrap();
    let args = ["solve", "--game", &asset("example1.json"), "--out", s(out.path())];
    let o = congestion(&args, &[("CONGESTION_TOLERANCE", "-1")]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tolerance"));
    // A one-state budget rules out enumeration, so the atomic checks disappear.
    let o = congestion(&args, &[("CONGESTION_BUDGET", "1")]);
    assert_eq!(o.status.code(), Some(0));
    assert!(!stdout(&o).contains("PASS atomic PoA"));
}

#[test]
fn outputs_are_deterministic() {
    let runs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for dir in &runs {
        let d = dir.path();
        let game = asset("example1.json");
        let fam = asset("parallel_unit_family.json");
        let ex4 = asset("example4_family.json");
        for args in [
            vec!["solve", "--game", &game, "--out", s(&d.join("solve")), "--seed", "3"],
            vec!["sweep", "--family", &fam, "--grid", "10,100", "--out", s(&d.join("sweep")), "--seed", "3"],
            vec!["sample", "--game", &game, "--n", "5000", "--seed", "3", "--workers", "3", "--out", s(&d.join("sample"))],
            vec!["decompose", "--family", &ex4, "--grid", "100,400", "--out", s(&d.join("decompose")), "--seed", "3"],
        ] {
            let o = congestion(&args, &[]);
            assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stdout(&o));
        }
    }
    for (m, file) in [("solve", "solve.csv"), ("sweep", "sweep.csv"), ("sample", "distribution.csv"), ("decompose", "decompose.csv")] {
        let a = fs::read(runs[0].path().join(m).join(file)).unwrap();
        let b = fs::read(runs[1].path().join(m).join(file)).unwrap();
        assert_eq!(a, b, "{m}/{file}");
        let text = String::from_utf8(a).unwrap();
        assert!(text.lines().skip(1).all(|l| l.ends_with(",3,0.1.0")), "{m}/{file}");
    }
}
