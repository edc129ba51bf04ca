use std::path::PathBuf;
use std::process::{Command, Output};

fn opre(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opre"))
        .args(args)
        .env_remove("OPRE_SEED")
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("opre-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn percolate_csv_is_worker_invariant() {
    let a = opre(&["percolate", "--reps", "200", "--seed", "9", "--workers", "1"]);
    let b = opre(&["percolate", "--reps", "200", "--seed", "9", "--workers", "8"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(stdout(&a), stdout(&b));
    let text = stdout(&a);
    assert!(text.contains("config_hash="));
    assert!(text.contains("seed=9"));
    assert!(text.contains("name,estimate,ci_lo,ci_hi,n,seconds"));
    assert!(text.contains("survival(depth=200)"));
}

#[test]
fn seed_falls_back_to_environment() {
    let with_env = Command::new(env!("CARGO_BIN_EXE_opre"))
        .args(["couple", "--reps", "3"])
        .env("OPRE_SEED", "77")
        .output()
        .unwrap();
    assert!(stdout(&with_env).contains("seed=77"));
    let flag_wins = Command::new(env!("CARGO_BIN_EXE_opre"))
        .args(["couple", "--reps", "3", "--seed", "5"])
        .env("OPRE_SEED", "77")
        .output()
        .unwrap();
    assert!(stdout(&flag_wins).contains("seed=5"));
}

#[test]
fn config_file_and_json_output() {
    let dir = scratch("json");
    let cfg = dir.join("audit.json");
    std::fs::write(
        &cfg,
        r#"{"experiment": "kernel-audit", "params": {"family": {"kind": "cppr_bernoulli", "lambda": 100.0}, "s_hi": 100000}}"#,
    )
    .unwrap();
    let out = dir.join("audit-result.json");
    let o = opre(&["kernel-audit", "--config", cfg.to_str().unwrap(), "--format", "json", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["records"][0]["name"], "violations");
    assert_eq!(v["records"][0]["estimate"], 0.0);
    assert_eq!(v["meta"]["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn validation_errors_exit_one_and_name_the_field() {
    let dir = scratch("invalid");
    let cfg = dir.join("bad.json");
    std::fs::write(
        &cfg,
        r#"{"experiment": "kernel-audit", "params": {"family": {"kind": "power", "lambda": -2.0}, "s_hi": 10}}"#,
    )
    .unwrap();
    let o = opre(&["kernel-audit", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("params.family.lambda"));

    let o = opre(&["percolate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));

    let o = opre(&["percolate", "--reps", "0"]);
    assert_eq!(o.status.code(), Some(1));

    let o = opre(&["percolate", "--format", "xml"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_two() {
    let o = opre(&["percolate", "--config", "/nonexistent/opre.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn acceptance_subset_writes_result_files() {
    let dir = scratch("acceptance");
    let o = opre(&["acceptance", "--only", "2,3,8", "--out", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 3);
    assert!(dir.join("criterion-08.csv").exists());
    let o = opre(&["acceptance", "--only", "13"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn raw_dump_next_to_result() {
    let dir = scratch("raw");
    let out = dir.join("temporal.csv");
    let o = opre(&["temporal", "--reps", "10", "--raw", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let raw = std::fs::read_to_string(dir.join("temporal.raw.csv")).unwrap();
    assert_eq!(raw.lines().filter(|l| !l.starts_with('#')).count(), 10);
}
