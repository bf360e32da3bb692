use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bfpred(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bfpred"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn bounds_preset_reports_both_reciprocals() {
    let dir = tempfile::tempdir().unwrap();
    let o = bfpred(
        dir.path(),
        &["bounds", "--preset", "cor4.3", "--epsilon", "0,1"],
    );
    assert_eq!(o.status.code(), Some(0));
    let s = json(&dir.path().join("summary.json"));
    assert_eq!(s["schema_version"], "bfpred/1");
    let r: Vec<f64> = s["results"]["evaluations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["reciprocal"].as_f64().unwrap())
        .collect();
    assert!((r[0] - 94.8).abs() < 0.05, "{r:?}");
    assert!((r[1] - 279.8).abs() < 0.05, "{r:?}");
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert!(csv.starts_with("# bfpred bounds results, csv version 1\nconfig_digest,seed,"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn exhaustive_audit_of_the_sampling_mechanism_is_clean() {
    let dir = tempfile::tempdir().unwrap();
    let o = bfpred(
        dir.path(),
        &[
            "audit",
            "--mech",
            "mech3",
            "--n",
            "5",
            "--exhaustive-orders",
        ],
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let s = json(&dir.path().join("summary.json"));
    assert_eq!(s["violations"], 0);
    assert_eq!(s["results"]["passed"], true);
    for inst in s["results"]["instances"].as_array().unwrap() {
        assert_eq!(inst["trials"], 120 * 64);
    }
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn lowerbound_k3_is_two_thirds() {
    let dir = tempfile::tempdir().unwrap();
    let o = bfpred(dir.path(), &["lowerbound", "--k", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let s = json(&dir.path().join("summary.json"));
    assert_eq!(s["results"]["max_expected_ratio"], "2/3");
    assert_eq!(s["results"]["attains_ceiling"], true);
}

#[test]
fn mutated_audit_exits_one_and_points_at_results() {
    let dir = tempfile::tempdir().unwrap();
    let o = bfpred(
        dir.path(),
        &[
            "audit",
            "--mech",
            "mech2",
            "--n",
            "3",
            "--family",
            "additive",
            "--exhaustive-orders",
            "--mutation",
            "first-price",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("results.csv"));
    let s = json(&dir.path().join("summary.json"));
    assert_eq!(s["results"]["instances"][0]["first_violation_row"], 0);
}

#[test]
fn bad_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["bounds", "--preset", "cor9.9"][..],
        &["bounds", "--preset", "cor4.3", "--epsilon", "1.5"],
        &["run", "--mech", "mech9"],
        &["lowerbound"],
        &["audit", "--mech", "mech2", "--params", "z=1"],
    ] {
        assert_eq!(bfpred(dir.path(), args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn identical_configs_give_identical_files_for_any_worker_count() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let args = [
        "run",
        "--preset",
        "cor5.2",
        "--family",
        "cut",
        "--n",
        "7",
        "--trials",
        "300",
        "--epsilon",
        "0,1",
        "--seed",
        "5",
    ];
    let one = Command::new(env!("CARGO_BIN_EXE_bfpred"))
        .args(["--workers", "1", "--out"])
        .arg(a.path())
        .args(args)
        .output()
        .unwrap();
    assert_eq!(
        one.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&one.stderr)
    );
    assert_eq!(bfpred(b.path(), &args).status.code(), Some(0));
    for f in ["results.csv", "summary.json", "replay.json"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn replay_file_reproduces_every_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = bfpred(
        dir.path(),
        &[
            "run",
            "--mech",
            "mech4,mech8,dynkin",
            "--family",
            "coverage",
            "--n",
            "6",
            "--trials",
            "40",
        ],
    );
    assert_eq!(o.status.code(), Some(0));
    let r = Command::new(env!("CARGO_BIN_EXE_bfpred"))
        .arg("replay")
        .arg(dir.path().join("replay.json"))
        .output()
        .unwrap();
    assert_eq!(
        r.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&r.stderr)
    );
    assert_eq!(String::from_utf8_lossy(&r.stdout).lines().count(), 120);
}

#[test]
fn exec_runs_an_embedded_config() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        bfpred(dir.path(), &["demo", "--trials", "500", "--small", "0.01"])
            .status
            .code(),
        Some(0)
    );
    let replay = json(&dir.path().join("replay.json"));
    let cfg = dir.path().join("config.json");
    std::fs::write(&cfg, serde_json::to_string(&replay["config"]).unwrap()).unwrap();
    let again = dir.path().join("again");
    let o = Command::new(env!("CARGO_BIN_EXE_bfpred"))
        .arg("exec")
        .arg(&cfg)
        .arg("--out")
        .arg(&again)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        std::fs::read(dir.path().join("results.csv")).unwrap(),
        std::fs::read(again.join("results.csv")).unwrap()
    );
}

#[test]
fn output_directory_defaults_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_bfpred"))
        .env("BFPRED_OUT", &target)
        .args([
            "bounds",
            "--bound",
            "mono-pred",
            "--values",
            "p=0.46,a=0.685,z=1.85",
            "--epsilon",
            "0",
        ])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let s = json(&target.join("summary.json"));
    assert!(
        (s["results"]["evaluations"][0]["bound_f64"]
            .as_f64()
            .unwrap()
            - 0.16995)
            .abs()
            < 1e-5
    );
}

#[test]
fn instance_files_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("inst.json");
    std::fs::write(
        &path,
        r#"{"n": 3, "budget": "2", "costs": ["1/2", "1", "3/4"],
            "valuation": {"family": "additive", "payload": {"weights": ["3", "1", "2"]}}}"#,
    )
    .unwrap();
    let o = bfpred(
        dir.path(),
        &[
            "run",
            "--instance",
            path.to_str().unwrap(),
            "--mech",
            "mech2",
            "--trials",
            "50",
            "--epsilon",
            "0,0.5",
        ],
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let s = json(&dir.path().join("summary.json"));
    assert_eq!(s["results"]["optimum"], "5");
    assert_eq!(s["results"]["groups"].as_array().unwrap().len(), 2);
}
