use serde_json::{json, Value};
use std::path::Path;
use std::process::{Command, Output};

fn base() -> Value {
    json!({
        "schema_version": 1,
        "group": {"group": "abelian", "dim": 1},
        "domain": {"shape": "box", "lo": [-1.0], "hi": [1.0]},
        "h": 0.125,
        "fp": {"s": 0.3, "p": 2.0},
        "problem": {"delta": 0.2, "q": 2.0, "lambda": "auto", "f": "const:1", "g": "const:1"},
        "verify": {"h_list": [0.25, 0.125]},
        "seed": 42
    })
}

fn run(dir: &Path, cfg: &Value, args: &[&str]) -> Output {
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    run_raw(dir, &path, args)
}

fn run_raw(dir: &Path, config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_subspec"))
        .args(&args[..1])
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(dir.join("out"))
        .args(&args[1..])
        .env_remove("SUBSPEC_OUTPUT_DIR")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn eigen_writes_result_and_matches_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &base(), &["eigen"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&dir.path().join("out/eigen_result.json"));
    let l = r["lambda1"].as_f64().unwrap();
    let oracle = r["lambda1_p2_oracle"].as_f64().unwrap();
    assert!((l - oracle).abs() < 1e-8 * oracle);
    assert_eq!(r["schema_version"], 1);
    let phi = std::fs::read_to_string(dir.path().join("out/phi1.csv")).unwrap();
    assert!(phi.starts_with("# schema_version=1"));
    assert!(dir.path().join("out/cache").read_dir().unwrap().count() == 1);
}

#[test]
fn malformed_json_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\"schema_version\": 1,").unwrap();
    assert_eq!(code(&run_raw(dir.path(), &path, &["eigen"])), 2);
    assert_eq!(code(&run_raw(dir.path(), &dir.path().join("missing.json"), &["eigen"])), 2);
}

#[test]
fn nonconvergence_exits_3_with_trace() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base();
    cfg["solver"] = json!({"max_iter": 1});
    let o = run(dir.path(), &cfg, &["eigen"]);
    assert_eq!(code(&o), 3);
    let trace = std::fs::read_to_string(dir.path().join("out/trace.csv")).unwrap();
    assert!(trace.lines().filter(|l| !l.starts_with('#')).count() >= 2);
}

#[test]
fn nehari_auto_lambda_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &base(), &["nehari"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&dir.path().join("out/nehari_result.json"));
    assert!(r["I_plus"].as_f64().unwrap() < 0.0);
    assert!(r["I_minus"].as_f64().unwrap() > 0.0);
    assert!((r["lambda_margin"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert!(dir.path().join("out/fiber_report.json").exists());
}

#[test]
fn lambda_beyond_threshold_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &base(), &["nehari"]);
    assert_eq!(code(&o), 0);
    let ls = read_json(&dir.path().join("out/nehari_result.json"))["lambda_star"]["empirical"].as_f64().unwrap();
    let mut cfg = base();
    cfg["problem"]["lambda"] = json!(10.0 * ls);
    assert_eq!(code(&run(dir.path(), &cfg, &["nehari"])), 4);
}

#[test]
fn missing_weight_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base();
    cfg["problem"].as_object_mut().unwrap().remove("g");
    assert_eq!(code(&run(dir.path(), &cfg, &["nehari"])), 2);
}

#[test]
fn out_of_range_order_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base();
    cfg["fp"]["s"] = json!(0.9);
    assert_eq!(code(&run(dir.path(), &cfg, &["eigen"])), 2);
}

#[test]
fn empty_sweep_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base();
    cfg["sweep"] = json!({"lambdas": []});
    assert_eq!(code(&run(dir.path(), &cfg, &["sweep"])), 2);
}

#[test]
fn sweep_reports_one_transition() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = base();
    cfg["sweep"] = json!({"factors": [0.2, 0.5, 1.5, 2.0]});
    let o = run(dir.path(), &cfg, &["sweep"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 4);
    let flags: Vec<&str> = rows.iter().map(|r| r.split(',').nth(1).unwrap()).collect();
    assert_eq!(flags, ["true", "true", "false", "false"]);
    assert_eq!(read_json(&dir.path().join("out/sweep.json"))["transitions"], 1);
}

#[test]
fn verify_passes_on_small_instance() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &base(), &["verify"]);
    let r = read_json(&dir.path().join("out/verify_report.json"));
    assert_eq!(code(&o), 0, "{}", serde_json::to_string_pretty(&r).unwrap());
    assert_eq!(r["all_passed"], true);
}

#[test]
fn outputs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert_eq!(code(&run(d.path(), &base(), &["nehari"])), 0);
    }
    for f in ["nehari_result.json", "u_plus.csv", "u_minus.csv", "fiber_report.json"] {
        let x = std::fs::read(a.path().join("out").join(f)).unwrap();
        let y = std::fs::read(b.path().join("out").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between runs");
    }
}

#[test]
fn output_dir_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    let mut cfg = base();
    cfg["output_dir"] = json!(dir.path().join("from_config"));
    std::fs::write(&path, cfg.to_string()).unwrap();
    let bin = env!("CARGO_BIN_EXE_subspec");
    let st = Command::new(bin)
        .args(["eigen", "--config"])
        .arg(&path)
        .env("SUBSPEC_OUTPUT_DIR", dir.path().join("from_env"))
        .output()
        .unwrap();
    assert!(st.status.success());
    assert!(dir.path().join("from_env/eigen_result.json").exists());
    let st = Command::new(bin)
        .args(["eigen", "--config"])
        .arg(&path)
        .env_remove("SUBSPEC_OUTPUT_DIR")
        .output()
        .unwrap();
    assert!(st.status.success());
    assert!(dir.path().join("from_config/eigen_result.json").exists());
}
