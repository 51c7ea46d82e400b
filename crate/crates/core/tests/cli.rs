//! Drives the `choreeq` binary the way a user would.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn choreeq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_choreeq"))
        .args(args)
        .output()
        .expect("spawn choreeq")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_solve_verify_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("inst.json");
    let out = dir.path().join("out.json");

    let g = choreeq(&["generate", "--n", "3", "--m", "4", "--seed", "11", "-o", s(&inst)]);
    assert_eq!(g.status.code(), Some(0), "{}", String::from_utf8_lossy(&g.stderr));

    let r = choreeq(&["solve", s(&inst), "--eps", "0.02", "-o", s(&out)]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let first = fs::read(&out).unwrap();

    let v = choreeq(&["verify", s(&inst), s(&out)]);
    assert_eq!(v.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&v.stdout).unwrap();
    assert_eq!(report["pass"], true);

    let again = choreeq(&["solve", s(&inst), "--eps", "0.02", "-o", s(&out)]);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(first, fs::read(&out).unwrap(), "solve output is not deterministic");

    let only = choreeq(&["solve", s(&inst), "--verify-only", "-o", s(&out)]);
    assert_eq!(only.status.code(), Some(0));
}

#[test]
fn malformed_instance_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("bad.json");
    fs::write(&inst, "{ \"n\": 2, ").unwrap();
    assert_eq!(choreeq(&["solve", s(&inst)]).status.code(), Some(2));

    let missing = dir.path().join("missing.json");
    assert_eq!(choreeq(&["solve", s(&missing)]).status.code(), Some(2));
}

#[test]
fn iteration_cap_exits_3_and_keeps_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("inst.json");
    let trace = dir.path().join("trace.csv");
    choreeq(&["generate", "--n", "4", "--m", "5", "--seed", "3", "-o", s(&inst)]);
    let r = choreeq(&["solve", s(&inst), "--eps", "0.01", "--max-iters", "1", "--trace", s(&trace)]);
    assert_eq!(r.status.code(), Some(3));
    let text = fs::read_to_string(&trace).unwrap();
    assert!(text.lines().count() >= 2, "trace has no rows: {text}");
}

#[test]
fn tampered_result_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("inst.json");
    let out = dir.path().join("out.json");
    fs::write(&inst, r#"{"n": 2, "m": 2, "disutilities": [{"linear": [1, 2]}, {"linear": [2, 1]}]}"#).unwrap();
    assert_eq!(choreeq(&["solve", s(&inst), "-o", s(&out)]).status.code(), Some(0));

    let mut res: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    res["allocation"] = serde_json::json!([[0.0, 1.0], [1.0, 0.0]]);
    fs::write(&out, res.to_string()).unwrap();
    assert_eq!(choreeq(&["verify", s(&inst), s(&out)]).status.code(), Some(4));
}

#[test]
fn mixed_mode_solves() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("mixed.json");
    let out = dir.path().join("out.json");
    let g = choreeq(&["generate", "--n", "2", "--m", "3", "--kind", "mixed", "--seed", "5", "-o", s(&inst)]);
    assert_eq!(g.status.code(), Some(0));
    let r = choreeq(&["solve", s(&inst), "--mode", "mixed", "-o", s(&out)]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    let res: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(res["certificate"]["category"].is_string());
}

#[test]
fn bench_writes_one_row_per_instance_and_eps() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..2 {
        let p = dir.path().join(format!("i{seed}.json"));
        choreeq(&["generate", "--n", "2", "--m", "3", "--seed", &seed.to_string(), "-o", s(&p)]);
    }
    let csv = dir.path().join("bench.csv");
    let b = choreeq(&["bench", s(dir.path()), "--eps-list", "0.1,0.05", "-o", s(&csv)]);
    assert_eq!(b.status.code(), Some(0), "{}", String::from_utf8_lossy(&b.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "instance,n,m,eps,iters,bound,wall_ms,pass");
    assert_eq!(lines.len(), 5);
    assert!(lines[1..].iter().all(|l| l.ends_with("true")));
}
