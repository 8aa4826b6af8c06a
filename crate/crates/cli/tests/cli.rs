use std::path::Path;
use std::process::{Command, Output};

fn wuglab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wuglab")).current_dir(dir).args(args).output().unwrap()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

const MICRO: &str = r#"{"phenomena":["SVAgrV"],"evidence":["DE"],"frequencies":[0,5],
 "corpus":{"path":null,"synthetic_sentences":400},"expand":{"frames":8,"tag_sets":1},"epochs":1,"vocab_size":300,
 "model":{"layers":1,"heads":2,"hidden":16,"intermediate":32,"max_seq_len":32},
 "optim":{"lr":0.001,"warmup_steps":2,"batch":16,"grad_accum":1}}"#;

#[test]
fn dry_run_plans_the_full_toy_grid() {
    let d = tempfile::tempdir().unwrap();
    let out = ok(&wuglab(d.path(), &["--scale", "toy", "grid", "--dry-run"]));
    assert_eq!(out.lines().count(), 133);
    assert_eq!(out.lines().next(), Some("main/AnaGenAgr/none/n0/s1/std0.02/tag"));
}

#[test]
fn forge_refuses_to_overwrite_without_force() {
    let d = tempfile::tempdir().unwrap();
    ok(&wuglab(d.path(), &["--out", "o", "forge", "--count", "5"]));
    let again = wuglab(d.path(), &["--out", "o", "forge", "--count", "5"]);
    assert!(!again.status.success());
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    ok(&wuglab(d.path(), &["--out", "o", "--force", "forge", "--count", "6", "--mode", "tag_with_morph"]));
    assert_eq!(std::fs::read_to_string(d.path().join("o/wugs.jsonl")).unwrap().lines().count(), 6);
}

#[test]
fn grid_then_report() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("cfg.json"), MICRO).unwrap();
    let summary = ok(&wuglab(d.path(), &["--config", "cfg.json", "--out", "o", "--seed", "3", "grid"]));
    let v: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(v["executed"], 2);
    let csv = std::fs::read_to_string(d.path().join("o/results.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("phenomenon,evidence,n,seed,init_std,wug_mode,method,accuracy,num_pairs,tie_count"));
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(3) == Some("3")));

    let rerun: serde_json::Value =
        serde_json::from_str(&ok(&wuglab(d.path(), &["--config", "cfg.json", "--out", "o", "--seed", "3", "grid"]))).unwrap();
    assert_eq!((rerun["executed"].as_u64(), rerun["skipped"].as_u64()), (Some(0), Some(2)));

    let rep: serde_json::Value =
        serde_json::from_str(&ok(&wuglab(d.path(), &["--config", "cfg.json", "--out", "o", "report"]))).unwrap();
    assert_eq!(rep["svg"].as_array().unwrap().len(), 3);
    assert!(d.path().join("o/report/results.csv").exists());
}

#[test]
fn remote_server_flag_reports_connection_errors() {
    let d = tempfile::tempdir().unwrap();
    let o = wuglab(d.path(), &["--server", "http://127.0.0.1:1", "forge"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("transport"));
}
