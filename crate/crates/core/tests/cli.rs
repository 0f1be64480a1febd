use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rclp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rclp"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("cfg.json");
    let out = dir.join("out");
    let cfg = serde_json::json!({
        "stream": {"synthetic": {"n_samples_per_task": 100}},
        "strategies": ["joint", "finetune", "rclp"],
        "seeds": [0, 1],
        "epochs_per_task": 1,
        "output_dir": out,
    });
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = rclp(&["run", cfg.to_str().unwrap(), "--seeds", "3", "--strategies", "finetune,rclp"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("rclp") && !stdout.contains("joint"), "{stdout}");
    let records: Vec<String> = fs::read_dir(dir.path().join("out/records"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert_eq!(records.len(), 2);
    assert!(records.contains(&"rclp_seed3.json".to_string()));

    let summary = fs::read(dir.path().join("out/summary.csv")).unwrap();
    let rep = rclp(&["report", dir.path().join("out").to_str().unwrap()]);
    assert!(rep.status.success());
    assert_eq!(fs::read(dir.path().join("out/summary.csv")).unwrap(), summary);
}

#[test]
fn output_dir_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let other = dir.path().join("elsewhere");
    let out = rclp(&[
        "run",
        cfg.to_str().unwrap(),
        "--seeds",
        "0",
        "--strategies",
        "finetune",
        "--output-dir",
        other.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(other.join("summary.csv").exists());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn bad_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    assert_eq!(rclp(&["run", "/nonexistent/cfg.json"]).status.code(), Some(1));
    let out = rclp(&["run", cfg.to_str().unwrap(), "--strategies", "der"]);
    assert_eq!(out.status.code(), Some(1));
    let out = rclp(&["run", cfg.to_str().unwrap(), "--strategies", "nonsense"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!rclp(&["frobnicate"]).status.success());
}

#[test]
fn gen_stream_exports_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("stream.json");
    fs::write(&spec, r#"{"n_samples_per_task": 30, "seed": 5}"#).unwrap();
    let out = dir.path().join("s.csv");
    let res = rclp(&["gen-stream", spec.to_str().unwrap(), out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for k in 0..7 {
        let p = dir.path().join(format!("s_task{k}.csv"));
        assert!(rclp::stream::load_manifest(&p).is_ok(), "{}", p.display());
    }
    let single = dir.path().join("one.csv");
    let res = rclp(&["gen-stream", spec.to_str().unwrap(), single.to_str().unwrap(), "--task", "2"]);
    assert!(res.status.success());
    let a = fs::read(&single).unwrap();
    let b = fs::read(dir.path().join("s_task2.csv")).unwrap();
    assert_eq!(a, b);
    let res = rclp(&["gen-stream", spec.to_str().unwrap(), single.to_str().unwrap(), "--task", "9"]);
    assert_eq!(res.status.code(), Some(1));
}
