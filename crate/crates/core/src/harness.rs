//! Experiment orchestration: config files, multi-seed runs over
//! (strategy × seed) cells, and the result files.
//!
//! An output directory holds `summary.csv`, `curves.csv` and one JSON
//! [`RunRecord`] per cell under `records/`. `summary.csv` is a pure function of
//! the records, so [`report`] can rebuild it.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{error, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::buffer::{capacity_for, ReplayBuffer};
use crate::metrics::{avg_auc_up_to, avg_f1_up_to, evaluate, forgetting_pct, relative_gap, RunRecord};
use crate::numeric::MlpShape;
use crate::rng::{derive_rng, Purpose};
use crate::strategies::{Learner, StrategyConfig, StrategyKind, TrainSettings};
use crate::stream::{load_manifest_as, write_manifest};
use crate::stream::{build_stream, generate_task_data, StreamConfig, StreamSpec, TaskDataset, TaskSpec};
use crate::{Error, Result};

/// One task of a manifest-backed stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestTask {
    pub path: PathBuf,
    #[serde(default)]
    pub domain: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamSource {
    /// Synthetic stream; the run seed is added to `seed`.
    Synthetic(StreamConfig),
    /// Pre-generated tasks, in stream order.
    Manifests(Vec<ManifestTask>),
}

impl Default for StreamSource {
    fn default() -> Self {
        StreamSource::Synthetic(StreamConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    /// Index of the layer whose activations are the distilled features.
    pub feature_tap: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            feature_tap: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum StrategyEntry {
    Kind(StrategyKind),
    Full(StrategyConfig),
}

fn strategies_de<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Vec<StrategyConfig>, D::Error> {
    let entries = Vec::<StrategyEntry>::deserialize(d)?;
    Ok(entries
        .into_iter()
        .map(|e| match e {
            StrategyEntry::Kind(k) => StrategyConfig::for_kind(k),
            StrategyEntry::Full(c) => c,
        })
        .collect())
}

/// A whole experiment as one JSON document. `strategies` accepts bare names
/// (`"rclp"`) or full strategy objects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub stream: StreamSource,
    #[serde(deserialize_with = "strategies_de")]
    pub strategies: Vec<StrategyConfig>,
    pub seeds: Vec<u64>,
    /// Overrides every strategy's `epochs_per_task` when set.
    pub epochs_per_task: Option<usize>,
    pub batch_size: usize,
    pub lr: f64,
    /// Replay memory as a fraction of the stream's training samples.
    pub memory_fraction: f64,
    pub model: ModelConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            stream: StreamSource::default(),
            strategies: StrategyKind::ALL.iter().map(|&k| StrategyConfig::for_kind(k)).collect(),
            seeds: (0..5).collect(),
            epochs_per_task: None,
            batch_size: 32,
            lr: 5e-4,
            memory_fraction: 0.03,
            model: ModelConfig::default(),
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("at least one strategy is required".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be > 0".into()));
        }
        if self.epochs_per_task == Some(0) {
            return Err(Error::Config("epochs_per_task must be > 0".into()));
        }
        if !(self.memory_fraction > 0.0 && self.memory_fraction <= 1.0) {
            return Err(Error::Config("memory_fraction must be in (0, 1]".into()));
        }
        let kinds: BTreeSet<StrategyKind> = self.strategies.iter().map(|s| s.kind).collect();
        if kinds.len() != self.strategies.len() {
            return Err(Error::Config("each strategy kind may appear only once".into()));
        }
        if BTreeSet::from_iter(&self.seeds).len() != self.seeds.len() {
            return Err(Error::Config("duplicate seeds".into()));
        }
        for s in &self.strategies {
            s.validate()?;
        }
        Ok(())
    }

    fn strategy_configs(&self) -> Vec<StrategyConfig> {
        self.strategies
            .iter()
            .map(|s| StrategyConfig {
                epochs_per_task: self.epochs_per_task.unwrap_or(s.epochs_per_task),
                ..s.clone()
            })
            .collect()
    }
}

/// Materialised data of one stream.
#[derive(Debug, Clone)]
pub struct StreamData {
    pub tasks: Vec<TaskDataset>,
    pub n_classes: usize,
    pub input_dim: usize,
}

impl StreamData {
    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn total_train(&self) -> usize {
        self.tasks.iter().map(|t| t.train.len()).sum()
    }

    /// Classes annotated by each task's source dataset: the union of label
    /// sets over tasks sharing its domain.
    pub fn label_scopes(&self) -> Vec<Vec<usize>> {
        let specs: Vec<&TaskSpec> = self.tasks.iter().map(|t| &t.task).collect();
        specs
            .iter()
            .map(|t| {
                specs
                    .iter()
                    .filter(|o| o.domain_id == t.domain_id)
                    .flat_map(|o| o.label_set.iter().copied())
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect()
            })
            .collect()
    }
}

pub fn generate_stream_data(spec: &StreamSpec) -> Result<StreamData> {
    spec.validate()?;
    let tasks = (0..spec.n_tasks())
        .map(|t| generate_task_data(spec, t, &mut derive_rng(spec.seed, t, Purpose::TaskData)))
        .collect::<Result<Vec<_>>>()?;
    Ok(StreamData {
        tasks,
        n_classes: spec.n_classes,
        input_dim: spec.input_dim,
    })
}

fn load_stream(source: &StreamSource, seed: u64) -> Result<StreamData> {
    match source {
        StreamSource::Synthetic(cfg) => {
            let spec = build_stream(&StreamConfig {
                seed: cfg.seed.wrapping_add(seed),
                ..cfg.clone()
            })?;
            generate_stream_data(&spec)
        }
        StreamSource::Manifests(list) => {
            if list.is_empty() {
                return Err(Error::Config("manifest stream has no tasks".into()));
            }
            let tasks = list
                .iter()
                .enumerate()
                .map(|(t, m)| load_manifest_as(&m.path, t, m.domain))
                .collect::<Result<Vec<_>>>()?;
            let first = tasks[0]
                .all_samples()
                .next()
                .ok_or_else(|| Error::Validation("first manifest is empty".into()))?;
            let (input_dim, n_classes) = (first.features.len(), first.n_classes());
            for d in &tasks {
                if d.task.label_set.is_empty() {
                    return Err(Error::Validation(format!(
                        "manifest task {} has no label known in every row",
                        d.task.task_id
                    )));
                }
                if d.all_samples()
                    .any(|s| s.features.len() != input_dim || s.n_classes() != n_classes)
                {
                    return Err(Error::Validation("manifests disagree on dimensions".into()));
                }
            }
            Ok(StreamData {
                tasks,
                n_classes,
                input_dim,
            })
        }
    }
}

/// Runs one strategy over one stream and evaluates the lower-triangular grid.
pub fn run_cell(
    config: &StrategyConfig,
    settings: &TrainSettings,
    model: &ModelConfig,
    memory_fraction: f64,
    data: &StreamData,
) -> Result<RunRecord> {
    let start = Instant::now();
    let shape = MlpShape {
        input_dim: data.input_dim,
        hidden: model.hidden.clone(),
        n_outputs: data.n_classes,
        feature_tap: model.feature_tap,
    };
    let n_tasks = data.n_tasks();
    let buffer = if config.kind.uses_buffer() {
        Some(ReplayBuffer::new(
            capacity_for(data.total_train(), memory_fraction),
            n_tasks,
        )?)
    } else {
        None
    };
    let mut learner = Learner::new(config.clone(), settings.clone(), &shape, buffer)?;
    let mut record = RunRecord::new(config.kind, settings.seed, n_tasks);
    if config.kind == StrategyKind::Joint {
        learner.train_joint(&data.tasks, &data.label_scopes())?;
        let h = learner.eval_thresholds();
        for after in 0..n_tasks {
            let row = data.tasks[..=after]
                .iter()
                .map(|d| evaluate(&learner.model, d, &h, after))
                .collect::<Result<Vec<_>>>()?;
            record.grid.push(row);
        }
    } else {
        for (after, dataset) in data.tasks.iter().enumerate() {
            learner.train_task(dataset)?;
            let h = learner.eval_thresholds();
            let row = data.tasks[..=after]
                .iter()
                .map(|d| evaluate(&learner.model, d, &h, after))
                .collect::<Result<Vec<_>>>()?;
            record.grid.push(row);
        }
    }
    record.wall_time = start.elapsed().as_secs_f64();
    info!(
        "{} seed {}: final Avg-F1 {:.4} in {:.1}s",
        config.kind,
        settings.seed,
        avg_f1_up_to(&record, n_tasks - 1)?,
        record.wall_time
    );
    Ok(record)
}

#[derive(Debug)]
pub struct CellFailure {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub error: Error,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub records: Vec<RunRecord>,
    pub summary: SummaryTable,
    pub failures: Vec<CellFailure>,
}

/// Runs every (strategy, seed) cell, in parallel, and writes the outputs.
/// A failing cell is reported in the outcome without stopping the others.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    config.validate()?;
    let strategies = config.strategy_configs();
    let streams: Vec<(u64, Result<StreamData>)> = config
        .seeds
        .par_iter()
        .map(|&s| (s, load_stream(&config.stream, s)))
        .collect();
    let cells: Vec<(&StrategyConfig, u64, &Result<StreamData>)> = streams
        .iter()
        .flat_map(|(seed, data)| strategies.iter().map(move |s| (s, *seed, data)))
        .collect();
    let results: Vec<(StrategyKind, u64, Result<RunRecord>)> = cells
        .into_par_iter()
        .map(|(strategy, seed, data)| {
            let settings = TrainSettings {
                batch_size: config.batch_size,
                lr: config.lr,
                seed,
            };
            let out = match data {
                Ok(data) => run_cell(strategy, &settings, &config.model, config.memory_fraction, data),
                Err(e) => Err(Error::State(format!("stream for seed {seed}: {e}"))),
            };
            (strategy.kind, seed, out)
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (strategy, seed, r) in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(error) => {
                error!("{strategy} seed {seed} failed: {error}");
                failures.push(CellFailure { strategy, seed, error });
            }
        }
    }
    if records.is_empty() {
        return Err(Error::State(format!("all {} cells failed", failures.len())));
    }
    let summary = summarize(&records)?;
    emit_outputs(&records, &summary, &config.output_dir)?;
    Ok(ExperimentOutcome {
        records,
        summary,
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub strategy: StrategyKind,
    pub n_seeds: usize,
    pub avg_f1: MeanStd,
    pub avg_auc: MeanStd,
    /// `None` for Joint and where no task had nonzero just-after F1.
    pub forgetting: Option<MeanStd>,
    /// `None` for Joint and when no same-seed Joint run exists.
    pub relative_gap: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn row(&self, kind: StrategyKind) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.strategy == kind)
    }
}

/// Aggregates records per strategy, in [`StrategyKind`] order.
pub fn summarize(records: &[RunRecord]) -> Result<SummaryTable> {
    let mut by_kind: BTreeMap<StrategyKind, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        if !r.is_complete() {
            return Err(Error::State(format!(
                "record {} seed {} has an incomplete grid",
                r.strategy, r.seed
            )));
        }
        by_kind.entry(r.strategy).or_default().push(r);
    }
    let final_f1 = |r: &RunRecord| avg_f1_up_to(r, r.n_tasks - 1);
    let joint: BTreeMap<u64, f64> = by_kind
        .get(&StrategyKind::Joint)
        .map(|rs| rs.iter().map(|r| Ok((r.seed, final_f1(r)?))).collect::<Result<_>>())
        .transpose()?
        .unwrap_or_default();

    let mut rows = Vec::new();
    for (kind, mut rs) in by_kind {
        rs.sort_by_key(|r| r.seed);
        let f1: Vec<f64> = rs.iter().map(|r| final_f1(r)).collect::<Result<_>>()?;
        let auc: Vec<f64> = rs
            .iter()
            .map(|r| avg_auc_up_to(r, r.n_tasks - 1))
            .collect::<Result<_>>()?;
        let (forgetting, relative_gap) = if kind == StrategyKind::Joint {
            (None, None)
        } else {
            let mut fg = Vec::new();
            for r in &rs {
                fg.extend(forgetting_pct(r)?.mean);
            }
            let mut gap = Vec::new();
            for (r, &f) in rs.iter().zip(&f1) {
                match joint.get(&r.seed) {
                    Some(&j) if j > 0.0 => gap.push(relative_gap(f, j)?),
                    Some(_) => warn!("joint seed {} has zero Avg-F1; gap skipped", r.seed),
                    None => {}
                }
            }
            (MeanStd::of(&fg), MeanStd::of(&gap))
        };
        rows.push(SummaryRow {
            strategy: kind,
            n_seeds: rs.len(),
            avg_f1: MeanStd::of(&f1).expect("nonempty"),
            avg_auc: MeanStd::of(&auc).expect("nonempty"),
            forgetting,
            relative_gap,
        });
    }
    Ok(SummaryTable { rows })
}

pub const SUMMARY_HEADER: [&str; 10] = [
    "strategy",
    "n_seeds",
    "avg_f1_mean",
    "avg_f1_std",
    "avg_auc_mean",
    "avg_auc_std",
    "forgetting_mean",
    "forgetting_std",
    "relative_gap_mean",
    "relative_gap_std",
];

pub const CURVES_HEADER: [&str; 6] = [
    "strategy",
    "seed",
    "after_task",
    "target_task",
    "macro_f1",
    "macro_auc",
];

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

fn pair(m: Option<MeanStd>) -> [String; 2] {
    m.map_or([String::new(), String::new()], |m| [fmt6(m.mean), fmt6(m.std)])
}

pub fn summary_csv(table: &SummaryTable) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER)?;
    for r in &table.rows {
        let mut rec = vec![r.strategy.to_string(), r.n_seeds.to_string()];
        rec.extend(pair(Some(r.avg_f1)));
        rec.extend(pair(Some(r.avg_auc)));
        rec.extend(pair(r.forgetting));
        rec.extend(pair(r.relative_gap));
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::State(format!("csv buffer: {e}")))
}

fn sorted(records: &[RunRecord]) -> Vec<&RunRecord> {
    let mut v: Vec<&RunRecord> = records.iter().collect();
    v.sort_by_key(|r| (r.strategy, r.seed));
    v
}

pub fn curves_csv(records: &[RunRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CURVES_HEADER)?;
    for r in sorted(records) {
        for row in &r.grid {
            for e in row {
                w.write_record([
                    r.strategy.to_string(),
                    r.seed.to_string(),
                    e.after_task.to_string(),
                    e.target_task.to_string(),
                    fmt6(e.macro_f1),
                    fmt6(e.macro_auc),
                ])?;
            }
        }
    }
    w.into_inner().map_err(|e| Error::State(format!("csv buffer: {e}")))
}

pub fn record_file_name(r: &RunRecord) -> String {
    format!("{}_seed{}.json", r.strategy, r.seed)
}

/// Writes every file to a temporary sibling first and renames only once all
/// writes succeeded; on failure the temporaries are removed.
fn write_all_or_nothing(files: &[(PathBuf, Vec<u8>)]) -> Result<()> {
    let tmp = |p: &Path| {
        let mut name = p.file_name().unwrap_or_default().to_os_string();
        name.push(".partial");
        p.with_file_name(name)
    };
    let cleanup = || {
        for (p, _) in files {
            let _ = fs::remove_file(tmp(p));
        }
    };
    for (path, bytes) in files {
        let t = tmp(path);
        let res = fs::File::create(&t)
            .and_then(|mut f| f.write_all(bytes).and_then(|_| f.sync_all()))
            .map_err(|e| Error::io(&t, e));
        if let Err(e) = res {
            cleanup();
            return Err(e);
        }
    }
    for (path, _) in files {
        if let Err(e) = fs::rename(tmp(path), path) {
            cleanup();
            return Err(Error::io(path, e));
        }
    }
    Ok(())
}

/// Writes `summary.csv`, `curves.csv` and `records/*.json` under `dir`.
pub fn emit_outputs(records: &[RunRecord], summary: &SummaryTable, dir: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::State("no records to write".into()));
    }
    let rec_dir = dir.join("records");
    fs::create_dir_all(&rec_dir).map_err(|e| Error::io(&rec_dir, e))?;
    let mut files = vec![
        (dir.join("summary.csv"), summary_csv(summary)?),
        (dir.join("curves.csv"), curves_csv(records)?),
    ];
    for r in sorted(records) {
        let mut json = serde_json::to_vec_pretty(r)?;
        json.push(b'\n');
        files.push((rec_dir.join(record_file_name(r)), json));
    }
    write_all_or_nothing(&files)
}

pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let rec_dir = dir.join("records");
    let mut paths: Vec<PathBuf> = fs::read_dir(&rec_dir)
        .map_err(|e| Error::io(&rec_dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(&rec_dir, e)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok(serde_json::from_str(&text)?)
        })
        .collect()
}

/// Re-aggregates the records under `dir` and rewrites `summary.csv`.
pub fn report(dir: &Path) -> Result<SummaryTable> {
    let records = load_records(dir)?;
    if records.is_empty() {
        return Err(Error::State(format!("no records under {}", dir.display())));
    }
    let summary = summarize(&records)?;
    write_all_or_nothing(&[(dir.join("summary.csv"), summary_csv(&summary)?)])?;
    Ok(summary)
}

/// Exports a synthetic stream as CSV manifests: only `task` to `out` when
/// given, otherwise every task to `<stem>_task<k>.csv` beside `out`.
pub fn export_stream(config: &StreamConfig, out: &Path, task: Option<usize>) -> Result<Vec<PathBuf>> {
    let spec = build_stream(config)?;
    let data = generate_stream_data(&spec)?;
    let targets: Vec<(usize, PathBuf)> = match task {
        Some(k) => {
            if k >= data.n_tasks() {
                return Err(Error::Config(format!(
                    "task {k} out of range for {} tasks",
                    data.n_tasks()
                )));
            }
            vec![(k, out.to_path_buf())]
        }
        None => {
            let stem = out.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            (0..data.n_tasks())
                .map(|k| (k, out.with_file_name(format!("{stem}_task{k}.csv"))))
                .collect()
        }
    };
    for (k, path) in &targets {
        write_manifest(&data.tasks[*k], path)?;
    }
    Ok(targets.into_iter().map(|(_, p)| p).collect())
}
