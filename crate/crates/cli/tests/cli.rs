//! End-to-end checks of the `qflash` binary: exit codes, report shape,
//! determinism of emitted artifacts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn qflash(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qflash"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("qflash_cli_{tag}_{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

fn strip_timestamp(json: &str) -> String {
    let mut v: serde_json::Value = serde_json::from_str(json).unwrap();
    v.as_object_mut().unwrap().remove("timestamp");
    serde_json::to_string(&v).unwrap()
}

#[test]
fn catalog_lists_seven_workloads() {
    let out = qflash(&["catalog"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for id in ["A1", "A2", "A3", "A4", "A5", "A6", "A7"] {
        assert!(text.contains(id), "catalog output missing {id}");
    }
    // A4 row: 64 windows, 3 heads, N=49, D=32.
    let a4 = text.lines().find(|l| l.starts_with("A4")).unwrap();
    assert!(a4.contains("64") && a4.contains("49") && a4.contains("32"));
}

#[test]
fn run_emits_report_with_integer_only_audit() {
    let dir = tmp_dir("run");
    let report_path = dir.join("report.json");
    let out = qflash(&[
        "run",
        "--workload",
        "A7",
        "--batch",
        "1",
        "--seed",
        "42",
        "--tile-br",
        "64",
        "--tile-bc",
        "64",
        "--granularity",
        "per-tensor",
        "--std",
        "0.5",
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&read(&report_path)).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert!(report["rejection"].is_null());
    assert_eq!(report["op_audit"]["float_ops"], 0);
    assert!(report["metrics"]["vs_exact"]["sqnr_db"].is_number());
    assert!(report["spec"]["workload"]["id"] == "A7");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn per_token_granularity_exits_2_with_structured_diagnostic() {
    let dir = tmp_dir("reject");
    let report_path = dir.join("report.json");
    let out = qflash(&[
        "run",
        "--workload",
        "A7",
        "--granularity",
        "per-token",
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let report: serde_json::Value = serde_json::from_str(&read(&report_path)).unwrap();
    assert_eq!(report["rejection"]["granularity"], "per-token");
    assert!(report["rejection"]["reason"]
        .as_str()
        .unwrap()
        .contains("scale"));
    assert!(report["op_audit"].is_null(), "kernel must not have run");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn unknown_workload_exits_2() {
    let dir = tmp_dir("badwl");
    let out = qflash(&[
        "run",
        "--workload",
        "A9",
        "--out",
        dir.join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn identical_specs_produce_identical_artifacts() {
    let dir = tmp_dir("determinism");
    let (r1, r2) = (dir.join("r1.json"), dir.join("r2.json"));
    for path in [&r1, &r2] {
        let out = qflash(&[
            "run",
            "--workload",
            "A7",
            "--seed",
            "7",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    assert_eq!(strip_timestamp(&read(&r1)), strip_timestamp(&read(&r2)));

    let (o1, o2) = (dir.join("o1.qtf"), dir.join("o2.qtf"));
    for path in [&o1, &o2] {
        let out = qflash(&[
            "oracle",
            "--workload",
            "A7",
            "--seed",
            "42",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    assert_eq!(std::fs::read(&o1).unwrap(), std::fs::read(&o2).unwrap());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn oracle_writes_parseable_qtf() {
    let dir = tmp_dir("oracle");
    let path = dir.join("oracle.qtf");
    let out = qflash(&[
        "oracle",
        "--workload",
        "A7",
        "--seed",
        "42",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    match qflash_core::qtf::read_file(&path).unwrap() {
        qflash_core::qtf::TensorFile::Real(t) => {
            assert_eq!(t.shape, vec![1, 24, 49, 32]);
        }
        _ => panic!("oracle output must be a real tensor"),
    }
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn exp_error_writes_csv_series() {
    let dir = tmp_dir("experr");
    let path = dir.join("experr.csv");
    let out = qflash(&[
        "exp-error",
        "--scale",
        "5e-4",
        "--min",
        "-65536",
        "--max",
        "0",
        "--stride",
        "97",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = read(&path);
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "x,q_div,q_mulshift,quotient_diff,y_div,y_mulshift,value,exact,rel_err"
    );
    assert!(csv.lines().count() > 600);
    // Endpoint x = 0 is always part of the sweep.
    assert!(csv.lines().last().unwrap().starts_with("0,"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn compare_scaling_writes_csv_with_overflow_column() {
    let dir = tmp_dir("scaling");
    let path = dir.join("scaling.csv");
    let out = qflash(&[
        "compare-scaling",
        "--workload",
        "A7",
        "--batch",
        "1",
        "--seed",
        "42",
        "--tiles",
        "1,7,49",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = read(&path);
    assert!(csv.starts_with("t_c,b_c,release_sqnr_db,release_mse,accumulate_sqnr_db,accumulate_overflow"));
    assert_eq!(csv.lines().count(), 4);
    std::fs::remove_dir_all(&dir).ok();
}
