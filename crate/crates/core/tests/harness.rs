use std::fs;
use std::path::Path;

use rclp::harness::{
    load_records, report, run_experiment, ExperimentConfig, ManifestTask, StreamSource,
    CURVES_HEADER, SUMMARY_HEADER,
};
use rclp::strategies::{StrategyConfig, StrategyKind};
use rclp::stream::{
    build_stream, generate_task_data, load_manifest, write_manifest, StreamConfig,
};

fn tiny_config(dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        stream: StreamSource::Synthetic(StreamConfig {
            n_samples_per_task: 120,
            ..StreamConfig::default()
        }),
        seeds: vec![0, 1],
        epochs_per_task: Some(1),
        output_dir: dir.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

fn header(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().map(str::to_string).collect()
}

#[test]
fn full_run_writes_grid_summary_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_experiment(&tiny_config(dir.path())).unwrap();
    assert!(outcome.failures.is_empty());
    assert_eq!(outcome.records.len(), 16);
    for r in &outcome.records {
        assert_eq!(r.n_tasks, 7);
        assert_eq!(r.grid.len(), 7);
        for (i, row) in r.grid.iter().enumerate() {
            assert_eq!(row.len(), i + 1);
            for (j, e) in row.iter().enumerate() {
                assert_eq!((e.after_task, e.target_task), (i, j));
            }
        }
    }

    assert_eq!(header(&dir.path().join("summary.csv")), SUMMARY_HEADER);
    assert_eq!(header(&dir.path().join("curves.csv")), CURVES_HEADER);
    let records = fs::read_dir(dir.path().join("records")).unwrap().count();
    assert_eq!(records, 16);

    let mut summary = csv::Reader::from_path(dir.path().join("summary.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = summary.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 8);
    for row in &rows {
        let joint = &row[0] == "joint";
        assert_eq!(&row[1], "2");
        for col in 6..10 {
            assert_eq!(row[col].is_empty(), joint, "{row:?}");
        }
    }
    let curves = csv::Reader::from_path(dir.path().join("curves.csv"))
        .unwrap()
        .records()
        .count();
    assert_eq!(curves, 16 * 28);
}

#[test]
fn records_are_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = |d: &Path| ExperimentConfig {
        strategies: [StrategyKind::Replay, StrategyKind::Rclp]
            .map(StrategyConfig::for_kind)
            .to_vec(),
        ..tiny_config(d)
    };
    run_experiment(&cfg(a.path())).unwrap();
    run_experiment(&cfg(b.path())).unwrap();
    for name in ["rclp_seed0.json", "replay_seed1.json"] {
        let read = |d: &Path| fs::read(d.join("records").join(name)).unwrap();
        assert_eq!(read(a.path()), read(b.path()), "{name}");
    }
    for name in ["summary.csv", "curves.csv"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap());
    }
}

#[test]
fn report_reproduces_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        strategies: [StrategyKind::Joint, StrategyKind::Finetune]
            .map(StrategyConfig::for_kind)
            .to_vec(),
        ..tiny_config(dir.path())
    };
    let outcome = run_experiment(&cfg).unwrap();
    let path = dir.path().join("summary.csv");
    let written = fs::read(&path).unwrap();
    fs::remove_file(&path).unwrap();
    let table = report(dir.path()).unwrap();
    assert_eq!(table, outcome.summary);
    assert_eq!(fs::read(&path).unwrap(), written);
    let mut loaded = load_records(dir.path()).unwrap();
    let mut original = outcome.records.clone();
    for r in &mut original {
        r.wall_time = 0.0;
    }
    loaded.sort_by_key(|r| (r.strategy, r.seed));
    original.sort_by_key(|r| (r.strategy, r.seed));
    assert_eq!(loaded, original);
}

#[test]
fn report_on_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert!(report(dir.path()).is_err());
    fs::create_dir(dir.path().join("records")).unwrap();
    assert!(report(dir.path()).is_err());
}

#[test]
fn failing_cell_does_not_stop_others() {
    // Task 1 has fewer training rows than the per-task quota, so buffer
    // strategies fail at admission while finetune completes.
    let dir = tempfile::tempdir().unwrap();
    let spec = build_stream(&StreamConfig {
        n_samples_per_task: 400,
        ..StreamConfig::default()
    })
    .unwrap();
    let mut tasks = Vec::new();
    for (t, n) in [(0, 400), (1, 10)] {
        let mut data = generate_task_data(&spec, t, &mut rand_chacha_seeded(t as u64)).unwrap();
        data.train.truncate(n);
        let path = dir.path().join(format!("task{t}.csv"));
        write_manifest(&data, &path).unwrap();
        tasks.push(ManifestTask { path, domain: 0 });
    }
    let out = dir.path().join("out");
    let cfg = ExperimentConfig {
        stream: StreamSource::Manifests(tasks),
        strategies: [StrategyKind::Finetune, StrategyKind::Replay]
            .map(StrategyConfig::for_kind)
            .to_vec(),
        seeds: vec![0],
        epochs_per_task: Some(1),
        memory_fraction: 0.2,
        output_dir: out.clone(),
        ..ExperimentConfig::default()
    };
    let outcome = run_experiment(&cfg).unwrap();
    assert_eq!(outcome.records.len(), 1);
    assert_eq!(outcome.records[0].strategy, StrategyKind::Finetune);
    assert_eq!(outcome.failures.len(), 1);
    assert_eq!(outcome.failures[0].strategy, StrategyKind::Replay);
    assert!(out.join("records/finetune_seed0.json").exists());
    assert!(!out.join("records/replay_seed0.json").exists());
}

fn rand_chacha_seeded(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = build_stream(&StreamConfig {
        n_samples_per_task: 50,
        ..StreamConfig::default()
    })
    .unwrap();
    let data = generate_task_data(&spec, 4, &mut rand_chacha_seeded(4)).unwrap();
    let path = dir.path().join("t.csv");
    write_manifest(&data, &path).unwrap();
    let back = load_manifest(&path).unwrap();
    let masked = |v: &[rclp::stream::Sample]| -> Vec<(Vec<f64>, Vec<u8>, Vec<u8>)> {
        v.iter()
            .map(|s| (s.features.clone(), s.masked_targets(), s.known_mask().to_vec()))
            .collect()
    };
    assert_eq!(masked(&back.train), masked(&data.train));
    assert_eq!(masked(&back.val), masked(&data.val));
    assert_eq!(masked(&back.test), masked(&data.test));
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    let cfg = tiny_config(dir.path());
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    assert_eq!(ExperimentConfig::from_json_file(&path).unwrap(), cfg);
    fs::write(&path, r#"{"seeds": []}"#).unwrap();
    assert!(ExperimentConfig::from_json_file(&path).is_err());
}

#[test]
fn shipped_default_config_parses() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json");
    let cfg = ExperimentConfig::from_json_file(&path).unwrap();
    assert_eq!(cfg.strategies.len(), 8);
    assert_eq!(cfg.seeds, vec![0, 1, 2, 3, 4]);
    assert_eq!(cfg.model, ExperimentConfig::default().model);
}
