use std::process::Command;

fn clmrmp(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_clmrmp")).args(args).output().unwrap()
}

#[test]
fn plan_writes_outputs_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = clmrmp(&["plan", "trivial2", "--goal-bias", "0.5", "--time-budget", "0", "--max-iterations", "500", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["plan.json", "result.json", "timing.json", "trajectory.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let plan = out.join("plan.json");
    let o = clmrmp(&["validate", plan.to_str().unwrap(), "--rollouts", "1000"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn exit_codes() {
    let o = clmrmp(&["plan", "random2", "--disable-ext", "--time-budget", "0", "--max-iterations", "300"]);
    assert_eq!(o.status.code(), Some(2));
    let o = clmrmp(&["plan", "no-such-env"]);
    assert_eq!(o.status.code(), Some(3));
    let o = clmrmp(&["plan", "trivial2", "--epsilon", "1.5"]);
    assert_eq!(o.status.code(), Some(3));

    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = clmrmp(&["plan", "trivial2", "--goal-bias", "0.5", "--time-budget", "0", "--max-iterations", "500", "--out", run.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    // shift one nominal state so the replay no longer matches
    let path = run.join("plan.json");
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let x = v["plan"]["states"][0][1][0].as_f64().unwrap();
    v["plan"]["states"][0][1][0] = serde_json::json!(x + 1.0);
    std::fs::write(&path, v.to_string()).unwrap();
    let o = clmrmp(&["validate", path.to_str().unwrap(), "--rollouts", "1000"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn bench_exports_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let o = clmrmp(&[
        "bench", "trivial2", "--trials", "2", "--sweep", "planners=rrt;bias=weight;eps=0,0.5", "--goal-bias", "0.5",
        "--time-budget", "0", "--max-iterations", "500", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stats = std::fs::read_to_string(out.join("stats.csv")).unwrap();
    assert_eq!(stats.lines().count(), 3);
    assert_eq!(std::fs::read_to_string(out.join("trials.jsonl")).unwrap().lines().count(), 4);
    let o = clmrmp(&["bench", "trivial2", "--trials", "1", "--sweep", "bias=sideways", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn soundness_suites_run() {
    let o = clmrmp(&["check-theorems", "--cases", "20", "--samples", "2000"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().count(), 2);
}
