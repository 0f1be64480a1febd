//! Training strategies.
//!
//! All eight strategies share [`Learner`], which owns the model, the optional
//! replay buffer, the per-class thresholds and the frozen copy of the previous
//! model. Sequential strategies are driven one task at a time through
//! [`Learner::train_task`]; joint training sees every task at once through
//! [`Learner::train_joint`].
//!
//! Label scopes. While training task `t`, `old` is the union of the label sets
//! of tasks `0..t`, `L_t` the current label set and `seen = old ∪ L_t`. The
//! replay-style baselines treat every seen label that a sample does not know
//! as absent (target 0); this is what produces task interference between
//! current and replayed samples. RCLP instead fills those positions by label
//! propagation and masks the current task's labels out of replayed samples.

mod losses;

pub use losses::{
    masked_loss, masked_loss_terms, Combined, DistillTarget, FeatureDistill, LogitMse, LwfDistill,
    MaskedBce,
};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::buffer::{BatchItem, BufferEntry, LabelStamper, Provenance, ReplayBuffer};
use crate::metrics::class_f1;
use crate::numeric::{sigmoid, AdamConfig, AdamState, ForwardOutput, Matrix, MlpModel, MlpShape, Objective};
use crate::rng::{derive_rng, Purpose};
use crate::stream::{feature_matrix, Sample, TaskDataset};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Joint,
    Finetune,
    Replay,
    Lwf,
    Pseudolabel,
    LwfReplay,
    Der,
    Rclp,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 8] = [
        StrategyKind::Joint,
        StrategyKind::Finetune,
        StrategyKind::Replay,
        StrategyKind::Lwf,
        StrategyKind::Pseudolabel,
        StrategyKind::LwfReplay,
        StrategyKind::Der,
        StrategyKind::Rclp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Joint => "joint",
            StrategyKind::Finetune => "finetune",
            StrategyKind::Replay => "replay",
            StrategyKind::Lwf => "lwf",
            StrategyKind::Pseudolabel => "pseudolabel",
            StrategyKind::LwfReplay => "lwf_replay",
            StrategyKind::Der => "der",
            StrategyKind::Rclp => "rclp",
        }
    }

    pub fn uses_buffer(self) -> bool {
        matches!(
            self,
            StrategyKind::Replay | StrategyKind::LwfReplay | StrategyKind::Der | StrategyKind::Rclp
        )
    }

    pub fn uses_frozen(self) -> bool {
        matches!(
            self,
            StrategyKind::Lwf | StrategyKind::LwfReplay | StrategyKind::Pseudolabel | StrategyKind::Rclp
        )
    }

    /// Strategies that calibrate per-class thresholds on validation data.
    pub fn calibrates(self) -> bool {
        matches!(self, StrategyKind::Pseudolabel | StrategyKind::Rclp)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// LwF distillation weight.
    pub tau: f64,
    /// RCLP feature-distillation weight.
    pub gamma: f64,
    pub mix_ratio: f64,
    pub epochs_per_task: usize,
    pub der_alpha: f64,
    pub distill_target: DistillTarget,
    pub joint_max_epochs: usize,
    /// Epochs without validation improvement before the LR is halved.
    pub joint_lr_patience: usize,
    /// Epochs without validation improvement before joint training stops.
    pub joint_stop_patience: usize,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            kind: StrategyKind::Rclp,
            tau: 2.0,
            gamma: 1.0,
            mix_ratio: 0.5,
            epochs_per_task: 10,
            der_alpha: 1.0,
            distill_target: DistillTarget::Features,
            joint_max_epochs: 60,
            joint_lr_patience: 3,
            joint_stop_patience: 10,
        }
    }
}

impl StrategyConfig {
    pub fn for_kind(kind: StrategyKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau <= 0.0 {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.gamma < 0.0 {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(0.0..1.0).contains(&self.mix_ratio) {
            return Err(Error::Config(format!("mix ratio {} outside [0, 1)", self.mix_ratio)));
        }
        if self.epochs_per_task == 0 || self.joint_max_epochs == 0 {
            return Err(Error::Config("epoch counts must be > 0".into()));
        }
        if self.der_alpha < 0.0 {
            return Err(Error::Config("der_alpha must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-class decision thresholds. A class's threshold is set once, from the
/// validation split of the task that introduced it, and then never changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    h: Vec<f64>,
    frozen_at: Vec<Option<usize>>,
}

/// Candidate thresholds `0.01, 0.02, …, 0.99`.
pub fn threshold_grid() -> impl Iterator<Item = f64> {
    (1..=99).map(|k| k as f64 / 100.0)
}

/// Grid threshold maximising F1 of `scores > h`; ties go to the smallest `h`.
/// `None` when there are no positives.
pub fn best_f1_threshold(scores: &[f64], targets: &[u8]) -> Option<f64> {
    if !targets.contains(&1) {
        return None;
    }
    let mut best = (f64::NEG_INFINITY, 0.5);
    for h in threshold_grid() {
        let f = class_f1(scores, targets, h);
        if f > best.0 {
            best = (f, h);
        }
    }
    Some(best.1)
}

impl Thresholds {
    pub fn new(n_classes: usize) -> Self {
        Self {
            h: vec![0.5; n_classes],
            frozen_at: vec![None; n_classes],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.h
    }

    pub fn frozen_at(&self, class: usize) -> Option<usize> {
        self.frozen_at[class]
    }

    /// Calibrates every not-yet-frozen class of `label_set` on `val` and
    /// freezes it at `task`.
    pub fn calibrate(
        &mut self,
        model: &MlpModel,
        val: &[Sample],
        label_set: &[usize],
        task: usize,
    ) -> Result<()> {
        let pending: Vec<usize> = label_set
            .iter()
            .copied()
            .filter(|&j| self.frozen_at[j].is_none())
            .collect();
        if pending.is_empty() {
            return Ok(());
        }
        let probs = if val.is_empty() {
            Matrix::zeros(0, model.n_outputs())
        } else {
            model
                .forward(&feature_matrix(val, model.input_dim())?)?
                .logits
                .map(sigmoid)
        };
        for j in pending {
            let mut s = Vec::with_capacity(val.len());
            let mut y = Vec::with_capacity(val.len());
            for (r, x) in val.iter().enumerate() {
                if let Some(v) = x.label(j) {
                    s.push(probs.get(r, j));
                    y.push(v);
                }
            }
            self.h[j] = best_f1_threshold(&s, &y).unwrap_or_else(|| {
                info!("class {j}: no validation positives, threshold defaults to 0.5");
                0.5
            });
            self.frozen_at[j] = Some(task);
        }
        Ok(())
    }
}

/// Immutable copy of the model as it was after the previous task.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenModel(MlpModel);

impl FrozenModel {
    pub fn snapshot(model: &MlpModel) -> Self {
        Self(model.clone())
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<ForwardOutput> {
        self.0.forward(inputs)
    }

    pub fn model(&self) -> &MlpModel {
        &self.0
    }
}

/// `σ(z) > h`.
#[inline]
pub fn pseudo_label(logit: f64, threshold: f64) -> bool {
    sigmoid(logit) > threshold
}

fn propagate_row(
    sample: &mut Sample,
    logits: &[f64],
    old_classes: &[usize],
    current: &[usize],
    thresholds: &[f64],
) {
    for &j in old_classes {
        if !current.contains(&j) {
            sample.set_label(j, pseudo_label(logits[j], thresholds[j]));
        }
    }
}

/// Forward label propagation: overwrites every label of `old_classes` that is
/// not in `current_labels` with the frozen model's thresholded prediction.
pub fn propagate_forward(
    frozen: &FrozenModel,
    samples: &mut [Sample],
    old_classes: &[usize],
    current_labels: &[usize],
    thresholds: &Thresholds,
) -> Result<()> {
    if samples.is_empty() || old_classes.iter().all(|j| current_labels.contains(j)) {
        return Ok(());
    }
    let x = feature_matrix(samples.iter(), frozen.model().input_dim())?;
    let logits = frozen.forward(&x)?.logits;
    for (r, s) in samples.iter_mut().enumerate() {
        propagate_row(s, logits.row(r), old_classes, current_labels, thresholds.values());
    }
    Ok(())
}

struct ForwardStamper<'a> {
    frozen: &'a FrozenModel,
    old: &'a [usize],
    current: &'a [usize],
    thresholds: &'a Thresholds,
}

impl LabelStamper for ForwardStamper<'_> {
    fn stamp(&self, samples: &mut [Sample]) -> Result<()> {
        propagate_forward(self.frozen, samples, self.old, self.current, self.thresholds)
    }
}

/// Settings shared by every strategy of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr: 5e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskLog {
    pub epoch_losses: Vec<f64>,
}

/// Labels the loss covers for one batch row, with their targets.
type RowTargets = Vec<(usize, f64)>;

fn rows_to_bce(rows: &[RowTargets], n_classes: usize) -> Result<MaskedBce> {
    let mut targets = Matrix::zeros(rows.len(), n_classes);
    let mut mask = Matrix::zeros(rows.len(), n_classes);
    for (r, row) in rows.iter().enumerate() {
        for &(j, y) in row {
            targets.set(r, j, y);
            mask.set(r, j, 1.0);
        }
    }
    MaskedBce::new(targets, mask)
}

/// Every class in `scope`, unknown labels read as absent.
fn plain_row(sample: &Sample, scope: &[usize]) -> RowTargets {
    scope
        .iter()
        .map(|&j| (j, f64::from(sample.label(j).unwrap_or(0))))
        .collect()
}

/// Known labels among `scope`.
fn known_row(sample: &Sample, scope: &[usize]) -> RowTargets {
    scope
        .iter()
        .filter_map(|&j| sample.label(j).map(|y| (j, f64::from(y))))
        .collect()
}

/// Label scopes while training one task.
struct Scopes {
    task: usize,
    current: Vec<usize>,
    old: Vec<usize>,
    seen: Vec<usize>,
    /// `old \ current`.
    old_only: Vec<usize>,
}

pub struct Learner {
    pub config: StrategyConfig,
    pub settings: TrainSettings,
    pub model: MlpModel,
    pub buffer: Option<ReplayBuffer>,
    pub thresholds: Thresholds,
    pub frozen: Option<FrozenModel>,
    /// Seen classes after each completed task.
    seen_history: Vec<Vec<usize>>,
}

impl Learner {
    /// `buffer` must be `Some` exactly for strategies that replay.
    pub fn new(
        config: StrategyConfig,
        settings: TrainSettings,
        shape: &MlpShape,
        buffer: Option<ReplayBuffer>,
    ) -> Result<Self> {
        config.validate()?;
        if settings.batch_size == 0 || settings.lr <= 0.0 {
            return Err(Error::Config("batch size and learning rate must be > 0".into()));
        }
        if buffer.is_some() != config.kind.uses_buffer() {
            return Err(Error::Config(format!(
                "strategy {} {} a replay buffer",
                config.kind,
                if config.kind.uses_buffer() { "needs" } else { "must not have" }
            )));
        }
        let mut rng = derive_rng(settings.seed, 0, Purpose::ModelInit);
        let model = MlpModel::init(shape, &mut rng)?;
        Ok(Self {
            thresholds: Thresholds::new(shape.n_outputs),
            config,
            settings,
            model,
            buffer,
            frozen: None,
            seen_history: Vec::new(),
        })
    }

    pub fn kind(&self) -> StrategyKind {
        self.config.kind
    }

    pub fn tasks_trained(&self) -> usize {
        self.seen_history.len()
    }

    /// Thresholds used for evaluation: calibrated for strategies that
    /// calibrate, 0.5 otherwise.
    pub fn eval_thresholds(&self) -> Vec<f64> {
        if self.kind().calibrates() {
            self.thresholds.values().to_vec()
        } else {
            vec![0.5; self.model.n_outputs()]
        }
    }

    fn scopes(&self, dataset: &TaskDataset) -> Result<Scopes> {
        let task = dataset.task.task_id;
        if task != self.seen_history.len() {
            return Err(Error::State(format!(
                "expected task {}, got task {task}",
                self.seen_history.len()
            )));
        }
        let old = self.seen_history.last().cloned().unwrap_or_default();
        let current = dataset.task.label_set.clone();
        let seen: Vec<usize> = old
            .iter()
            .chain(&current)
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let old_only = old.iter().copied().filter(|j| !current.contains(j)).collect();
        Ok(Scopes {
            task,
            current,
            old,
            seen,
            old_only,
        })
    }

    pub fn train_task(&mut self, dataset: &TaskDataset) -> Result<TaskLog> {
        match self.kind() {
            StrategyKind::Rclp => rclp_train_task(self, dataset),
            StrategyKind::Joint => Err(Error::Config(
                "joint training needs every task at once; use train_joint".into(),
            )),
            _ => baseline_train_task(self, dataset),
        }
    }

    fn run_epochs(&mut self, dataset: &TaskDataset, scopes: &Scopes) -> Result<TaskLog> {
        let Learner {
            config,
            settings,
            model,
            buffer,
            thresholds,
            frozen,
            seen_history,
        } = self;
        let t = scopes.task;
        let mut adam = model.adam_state(AdamConfig::with_lr(settings.lr));
        let mut shuffle_rng = derive_rng(settings.seed, t, Purpose::Shuffle);
        let mut mix_rng = derive_rng(settings.seed, t, Purpose::BufferMix);
        let buffer: Option<&ReplayBuffer> = buffer.as_ref().filter(|b| !b.is_empty());
        if buffer.is_none() && t > 0 && config.kind.uses_buffer() && config.mix_ratio > 0.0 {
            return Err(Error::State("replay buffer is empty after the first task".into()));
        }
        let mixing = buffer.is_some() && config.mix_ratio > 0.0;
        let b = settings.batch_size;
        let chunk = if mixing {
            ((1.0 - config.mix_ratio) * b as f64).ceil() as usize
        } else {
            b
        };
        let frozen = frozen.as_ref();
        let ctx = StepContext {
            config,
            scopes,
            thresholds,
            frozen,
            seen_history,
            memory: buffer.map_or(&[], |b| b.entries()),
        };
        let mut order: Vec<usize> = (0..dataset.train.len()).collect();
        let mut log = TaskLog::default();
        for epoch in 0..config.epochs_per_task {
            order.shuffle(&mut shuffle_rng);
            let mut total = 0.0;
            let mut n_batches = 0usize;
            for idx in order.chunks(chunk.max(1)) {
                let current: Vec<&Sample> = idx.iter().map(|&i| &dataset.train[i]).collect();
                let items = match buffer {
                    Some(buf) if mixing => {
                        buf.mix_batch(&current, b, config.mix_ratio, false, &mut mix_rng)?
                    }
                    _ => current
                        .iter()
                        .map(|s| BatchItem {
                            sample: s,
                            provenance: Provenance::Current,
                            entry: None,
                        })
                        .collect(),
                };
                total += train_step(model, &mut adam, &items, &ctx)?;
                n_batches += 1;
            }
            let mean = total / n_batches.max(1) as f64;
            debug!("{} task {t} epoch {epoch}: loss {mean:.5}", config.kind);
            log.epoch_losses.push(mean);
        }
        Ok(log)
    }

    fn finish_task(&mut self, scopes: Scopes) {
        if self.kind().uses_frozen() {
            self.frozen = Some(FrozenModel::snapshot(&self.model));
        }
        self.seen_history.push(scopes.seen);
    }

    /// Trains once on the union of every task's data.
    ///
    /// `label_scopes[k]` lists the classes annotated in task `k`'s source
    /// dataset; those positions are revealed for joint training. The learning
    /// rate halves after `joint_lr_patience` epochs without validation
    /// improvement, training stops after `joint_stop_patience`, and the best
    /// validation state is kept.
    pub fn train_joint(
        &mut self,
        datasets: &[TaskDataset],
        label_scopes: &[Vec<usize>],
    ) -> Result<TaskLog> {
        if self.kind() != StrategyKind::Joint {
            return Err(Error::Config(format!("{} is not joint training", self.kind())));
        }
        if datasets.len() != label_scopes.len() {
            return Err(Error::Config("one label scope per task is required".into()));
        }
        let reveal = |s: &Sample, scope: &[usize]| {
            let mut s = s.clone();
            for &j in scope {
                s.reveal(j);
            }
            s
        };
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (d, scope) in datasets.iter().zip(label_scopes) {
            train.extend(d.train.iter().map(|s| reveal(s, scope)));
            val.extend(d.val.iter().map(|s| reveal(s, scope)));
        }
        let all: Vec<usize> = (0..self.model.n_outputs()).collect();
        let val_objective = rows_to_bce(
            &val.iter().map(|s| known_row(s, &all)).collect::<Vec<_>>(),
            self.model.n_outputs(),
        )?;
        let val_x = feature_matrix(&val, self.model.input_dim())?;
        let val_loss = |m: &MlpModel| -> Result<f64> {
            if val.is_empty() {
                return Ok(0.0);
            }
            let out = m.forward(&val_x)?;
            Ok(val_objective.evaluate(&out.logits, &out.features)?.value)
        };

        let cfg = self.config.clone();
        let mut lr = self.settings.lr;
        let mut adam: AdamState = self.model.adam_state(AdamConfig::with_lr(lr));
        let mut rng = derive_rng(self.settings.seed, 0, Purpose::Shuffle);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut best = (val_loss(&self.model)?, self.model.clone());
        let mut since_best = 0usize;
        let mut since_lr_cut = 0usize;
        let mut log = TaskLog::default();
        for epoch in 0..cfg.joint_max_epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut n = 0usize;
            for idx in order.chunks(self.settings.batch_size) {
                let rows: Vec<RowTargets> = idx.iter().map(|&i| known_row(&train[i], &all)).collect();
                let objective = rows_to_bce(&rows, self.model.n_outputs())?;
                let x = feature_matrix(idx.iter().map(|&i| &train[i]), self.model.input_dim())?;
                let (loss, grads) = self.model.loss_gradients(&x, &objective)?;
                self.model.adam_step(&mut adam, &grads)?;
                total += loss;
                n += 1;
            }
            log.epoch_losses.push(total / n.max(1) as f64);
            let v = val_loss(&self.model)?;
            if v < best.0 {
                best = (v, self.model.clone());
                since_best = 0;
                since_lr_cut = 0;
            } else {
                since_best += 1;
                since_lr_cut += 1;
                if since_lr_cut >= cfg.joint_lr_patience {
                    lr *= 0.5;
                    adam.set_lr(lr);
                    since_lr_cut = 0;
                    debug!("joint epoch {epoch}: learning rate halved to {lr:e}");
                }
                if since_best >= cfg.joint_stop_patience {
                    debug!("joint epoch {epoch}: early stop");
                    break;
                }
            }
        }
        self.model = best.1;
        let mut seen = BTreeSet::new();
        for d in datasets {
            seen.extend(d.task.label_set.iter().copied());
            self.seen_history.push(seen.iter().copied().collect());
        }
        Ok(log)
    }
}

struct StepContext<'a> {
    config: &'a StrategyConfig,
    scopes: &'a Scopes,
    thresholds: &'a Thresholds,
    frozen: Option<&'a FrozenModel>,
    seen_history: &'a [Vec<usize>],
    memory: &'a [BufferEntry],
}

fn row_mask(n_rows: usize, n_classes: usize, include: impl Fn(usize) -> Option<Vec<usize>>) -> Matrix {
    let mut m = Matrix::zeros(n_rows, n_classes);
    for r in 0..n_rows {
        if let Some(cols) = include(r) {
            for j in cols {
                m.set(r, j, 1.0);
            }
        }
    }
    m
}

/// Builds the strategy's objective for one batch and applies one Adam step.
fn train_step(
    model: &mut MlpModel,
    adam: &mut AdamState,
    items: &[BatchItem<'_>],
    ctx: &StepContext<'_>,
) -> Result<f64> {
    let objective = build_objective(items, ctx, model.input_dim(), model.n_outputs())?;
    let x = feature_matrix(items.iter().map(|i| i.sample), model.input_dim())?;
    let (loss, grads) = model.loss_gradients(&x, &objective)?;
    model.adam_step(adam, &grads)?;
    Ok(loss)
}

fn build_objective(
    items: &[BatchItem<'_>],
    ctx: &StepContext<'_>,
    input_dim: usize,
    n_classes: usize,
) -> Result<Combined> {
    let cfg = ctx.config;
    let sc = ctx.scopes;
    let frozen_out = match ctx.frozen {
        Some(f) if cfg.kind.uses_frozen() => {
            let x = feature_matrix(items.iter().map(|i| i.sample), input_dim)?;
            Some(f.forward(&x)?)
        }
        _ => None,
    };
    let is_memory = |r: usize| items[r].provenance == Provenance::Memory;
    let old_only_mask = || row_mask(items.len(), n_classes, |_| Some(sc.old_only.clone()));

    let objective = match cfg.kind {
        StrategyKind::Finetune | StrategyKind::Replay => {
            let rows: Vec<RowTargets> = items.iter().map(|i| plain_row(i.sample, &sc.seen)).collect();
            Combined::new().with(1.0, rows_to_bce(&rows, n_classes)?)
        }
        StrategyKind::Lwf | StrategyKind::LwfReplay => {
            let rows: Vec<RowTargets> = items.iter().map(|i| plain_row(i.sample, &sc.seen)).collect();
            let mut obj = Combined::new().with(1.0, rows_to_bce(&rows, n_classes)?);
            if let Some(out) = &frozen_out {
                obj = obj.with(
                    cfg.tau,
                    LwfDistill {
                        frozen_probs: out.logits.map(sigmoid),
                        mask: old_only_mask(),
                    },
                );
            }
            obj
        }
        StrategyKind::Der => {
            let rows: Vec<RowTargets> = items
                .iter()
                .map(|i| match i.provenance {
                    Provenance::Current => plain_row(i.sample, &sc.seen),
                    Provenance::Memory => Vec::new(),
                })
                .collect();
            let mut stored = Matrix::zeros(items.len(), n_classes);
            for (r, item) in items.iter().enumerate() {
                if let (Provenance::Memory, Some(logits)) = (item.provenance, stored_logits(item, ctx.memory)) {
                    stored.row_mut(r).copy_from_slice(logits);
                }
            }
            let mask = row_mask(items.len(), n_classes, |r| {
                let item = &items[r];
                (is_memory(r) && stored_logits(item, ctx.memory).is_some())
                    .then(|| ctx.seen_history[item.sample.origin_task].clone())
            });
            Combined::new()
                .with(1.0, rows_to_bce(&rows, n_classes)?)
                .with(cfg.der_alpha, LogitMse { stored, mask })
        }
        StrategyKind::Pseudolabel | StrategyKind::Rclp => {
            // Forward label propagation on the current rows.
            let propagated: Vec<Option<Sample>> = items
                .iter()
                .enumerate()
                .map(|(r, item)| match (&frozen_out, item.provenance) {
                    (Some(out), Provenance::Current) => {
                        let mut s = item.sample.clone();
                        propagate_row(&mut s, out.logits.row(r), &sc.old, &sc.current, ctx.thresholds.values());
                        Some(s)
                    }
                    _ => None,
                })
                .collect();
            let view: Vec<BatchItem<'_>> = items
                .iter()
                .zip(&propagated)
                .map(|(item, p)| BatchItem {
                    sample: p.as_ref().unwrap_or(item.sample),
                    ..*item
                })
                .collect();
            let mut obj = Combined::new().with(1.0, masked_loss_terms(&view, &sc.old, &sc.current, n_classes)?);
            if cfg.kind == StrategyKind::Rclp {
                if let Some(out) = frozen_out {
                    let reference = match cfg.distill_target {
                        DistillTarget::Features => out.features,
                        DistillTarget::Logits => out.logits,
                    };
                    obj = obj.with(cfg.gamma, FeatureDistill::new(reference, cfg.distill_target));
                }
            }
            obj
        }
        StrategyKind::Joint => {
            return Err(Error::Config("joint training has no per-task objective".into()))
        }
    };
    Ok(objective)
}

fn stored_logits<'a>(item: &BatchItem<'_>, memory: &'a [BufferEntry]) -> Option<&'a [f64]> {
    item.entry.and_then(|e| memory.get(e)?.stored_logits.as_deref())
}

/// RCLP on one task: mixed batches, forward label propagation of the current
/// samples, masking loss plus `γ` times feature distillation; afterwards
/// threshold calibration, forward-stamped admission, backward consolidation
/// of older entries and a fresh frozen copy.
pub fn rclp_train_task(learner: &mut Learner, dataset: &TaskDataset) -> Result<TaskLog> {
    if learner.kind() != StrategyKind::Rclp {
        return Err(Error::Config(format!("{} is not RCLP", learner.kind())));
    }
    let scopes = learner.scopes(dataset)?;
    let log = learner.run_epochs(dataset, &scopes)?;
    let t = scopes.task;
    learner
        .thresholds
        .calibrate(&learner.model, &dataset.val, &scopes.current, t)?;
    let mut admit_rng = derive_rng(learner.settings.seed, t, Purpose::BufferAdmit);
    let buffer = learner
        .buffer
        .as_mut()
        .ok_or_else(|| Error::State("RCLP has no replay buffer".into()))?;
    let stamper = learner.frozen.as_ref().map(|frozen| ForwardStamper {
        frozen,
        old: &scopes.old,
        current: &scopes.current,
        thresholds: &learner.thresholds,
    });
    buffer.admit(dataset, &mut admit_rng, stamper.as_ref().map(|s| s as &dyn LabelStamper))?;
    buffer.consolidate_backward(&learner.model, &scopes.current, learner.thresholds.values(), t)?;
    learner.finish_task(scopes);
    Ok(log)
}

/// Every sequential baseline: fine-tuning, replay, LwF, pseudo-label,
/// LwF-replay and DER.
pub fn baseline_train_task(learner: &mut Learner, dataset: &TaskDataset) -> Result<TaskLog> {
    let kind = learner.kind();
    if matches!(kind, StrategyKind::Rclp | StrategyKind::Joint) {
        return Err(Error::Config(format!("{kind} is not a sequential baseline")));
    }
    let scopes = learner.scopes(dataset)?;
    let log = learner.run_epochs(dataset, &scopes)?;
    let t = scopes.task;
    if kind.calibrates() {
        learner
            .thresholds
            .calibrate(&learner.model, &dataset.val, &scopes.current, t)?;
    }
    if let Some(buffer) = learner.buffer.as_mut() {
        let mut admit_rng = derive_rng(learner.settings.seed, t, Purpose::BufferAdmit);
        let range = buffer.admit(dataset, &mut admit_rng, None)?;
        if kind == StrategyKind::Der {
            buffer.snapshot_logits(range, &learner.model)?;
        }
    }
    learner.finish_task(scopes);
    Ok(log)
}
