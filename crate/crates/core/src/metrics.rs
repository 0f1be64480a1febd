//! Evaluation: per-class and macro F1, ROC AUC, stream averages, forgetting
//! and the relative gap to joint training.
//!
//! Task indices are zero-based throughout. A [`RunRecord`] holds one
//! [`EvalResult`] per `(after_task, target_task)` pair with
//! `target_task <= after_task`, each computed on the target task's test split
//! over that task's label set.

use log::debug;
use serde::{Deserialize, Serialize};

use crate::numeric::{sigmoid, Matrix, MlpModel};
use crate::strategies::StrategyKind;
use crate::stream::{feature_matrix, TaskDataset};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn count(scores: &[f64], targets: &[u8], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for (&s, &y) in scores.iter().zip(targets) {
            match (s > threshold, y == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
        c
    }

    /// `2PR / (P + R)`, zero when both are zero or undefined.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if self.tp == 0 || denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

pub fn class_f1(scores: &[f64], targets: &[u8], threshold: f64) -> f64 {
    Confusion::count(scores, targets, threshold).f1()
}

#[derive(Debug, Clone, PartialEq)]
pub struct F1Report {
    /// `None` for classes without positives, which are left out of the macro.
    pub per_class: Vec<Option<f64>>,
    pub macro_f1: f64,
}

fn mean_of_some(values: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// Per-column F1 of `scores > thresholds[c]` against binary `targets`.
pub fn macro_f1(scores: &Matrix, targets: &Matrix, thresholds: &[f64]) -> Result<F1Report> {
    if scores.shape() != targets.shape() || thresholds.len() != scores.cols() {
        return Err(Error::Config(format!(
            "scores {:?}, targets {:?} and {} thresholds do not line up",
            scores.shape(),
            targets.shape(),
            thresholds.len()
        )));
    }
    let per_class: Vec<Option<f64>> = (0..scores.cols())
        .map(|c| {
            let s: Vec<f64> = (0..scores.rows()).map(|r| scores.get(r, c)).collect();
            let y: Vec<u8> = (0..scores.rows()).map(|r| u8::from(targets.get(r, c) == 1.0)).collect();
            if y.iter().all(|&v| v == 0) {
                debug!("class column {c} has no positives; excluded from macro F1");
                None
            } else {
                Some(class_f1(&s, &y, thresholds[c]))
            }
        })
        .collect();
    let macro_f1 = mean_of_some(&per_class).unwrap_or(0.0);
    Ok(F1Report {
        per_class,
        macro_f1,
    })
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. `None` when either class is absent.
pub fn auc_roc(scores: &[f64], targets: &[u8]) -> Option<f64> {
    let n_pos = targets.iter().filter(|&&y| y == 1).count();
    let n_neg = targets.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of average ranks (1-based) of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 2) as f64 / 2.0;
        let pos_in_tie = order[i..=j].iter().filter(|&&k| targets[k] == 1).count();
        rank_sum += avg_rank * pos_in_tie as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

pub fn relative_gap(method_final_f1: f64, joint_final_f1: f64) -> Result<f64> {
    if joint_final_f1 <= 0.0 {
        return Err(Error::Validation(format!(
            "relative gap undefined for joint F1 {joint_final_f1}"
        )));
    }
    Ok(100.0 * (joint_final_f1 - method_final_f1) / joint_final_f1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub after_task: usize,
    pub target_task: usize,
    pub classes: Vec<usize>,
    pub per_class_f1: Vec<Option<f64>>,
    pub macro_f1: f64,
    pub per_class_auc: Vec<Option<f64>>,
    pub macro_auc: f64,
}

/// Scores `model` on the test split of `dataset` over its label set.
pub fn evaluate(
    model: &MlpModel,
    dataset: &TaskDataset,
    thresholds: &[f64],
    after_task: usize,
) -> Result<EvalResult> {
    let classes = dataset.task.label_set.clone();
    let x = feature_matrix(&dataset.test, model.input_dim())?;
    let logits = model.forward(&x)?.logits;
    let probs = logits.map(sigmoid);
    let mut per_class_f1 = Vec::with_capacity(classes.len());
    let mut per_class_auc = Vec::with_capacity(classes.len());
    for &j in &classes {
        let s: Vec<f64> = (0..probs.rows()).map(|r| probs.get(r, j)).collect();
        let y: Vec<u8> = dataset
            .test
            .iter()
            .map(|x| {
                x.label(j).ok_or_else(|| {
                    Error::State(format!("test sample lacks label for class {j}"))
                })
            })
            .collect::<Result<_>>()?;
        if y.iter().any(|&v| v == 1) {
            per_class_f1.push(Some(class_f1(&s, &y, thresholds[j])));
        } else {
            debug!(
                "task {} class {j}: no test positives, excluded from F1",
                dataset.task.task_id
            );
            per_class_f1.push(None);
        }
        per_class_auc.push(auc_roc(&s, &y));
    }
    Ok(EvalResult {
        after_task,
        target_task: dataset.task.task_id,
        classes,
        macro_f1: mean_of_some(&per_class_f1).unwrap_or(0.0),
        macro_auc: mean_of_some(&per_class_auc).unwrap_or(0.5),
        per_class_f1,
        per_class_auc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub n_tasks: usize,
    /// `grid[after][target]` for `target <= after`.
    pub grid: Vec<Vec<EvalResult>>,
    /// Excluded from serialised records so that reruns are byte-identical.
    #[serde(skip)]
    pub wall_time: f64,
}

impl RunRecord {
    pub fn new(strategy: StrategyKind, seed: u64, n_tasks: usize) -> Self {
        Self {
            strategy,
            seed,
            n_tasks,
            grid: Vec::new(),
            wall_time: 0.0,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.grid.len() == self.n_tasks
            && self.grid.iter().enumerate().all(|(a, row)| {
                row.len() == a + 1
                    && row
                        .iter()
                        .enumerate()
                        .all(|(t, e)| e.after_task == a && e.target_task == t)
            })
    }

    fn row(&self, after: usize) -> Result<&[EvalResult]> {
        let row = self
            .grid
            .get(after)
            .ok_or_else(|| Error::State(format!("no evaluations after task {after}")))?;
        if row.len() != after + 1 {
            return Err(Error::State(format!(
                "row {after} has {} evaluations, expected {}",
                row.len(),
                after + 1
            )));
        }
        Ok(row)
    }

    pub fn get(&self, after: usize, target: usize) -> Result<&EvalResult> {
        self.row(after)?
            .get(target)
            .ok_or_else(|| Error::State(format!("no evaluation ({after}, {target})")))
    }
}

fn union_mean(row: &[EvalResult], pick: impl Fn(&EvalResult) -> &[Option<f64>]) -> f64 {
    let all: Vec<Option<f64>> = row.iter().flat_map(|e| pick(e).iter().copied()).collect();
    mean_of_some(&all).unwrap_or(0.0)
}

/// Mean per-class F1 over the labels of tasks `0..=i`, each on its own test
/// split, using the model after task `i`.
pub fn avg_f1_up_to(record: &RunRecord, i: usize) -> Result<f64> {
    Ok(union_mean(record.row(i)?, |e| &e.per_class_f1))
}

/// AUC counterpart of [`avg_f1_up_to`].
pub fn avg_auc_up_to(record: &RunRecord, i: usize) -> Result<f64> {
    Ok(union_mean(record.row(i)?, |e| &e.per_class_auc))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forgetting {
    /// `None` where the just-after F1 was zero.
    pub per_task: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

/// `100 · (F1 just after task k − final F1 on task k) / F1 just after task k`.
pub fn forgetting_pct(record: &RunRecord) -> Result<Forgetting> {
    if !record.is_complete() {
        return Err(Error::State("forgetting needs a complete grid".into()));
    }
    let last = record.n_tasks - 1;
    let per_task: Vec<Option<f64>> = (0..record.n_tasks)
        .map(|k| {
            let just = record.get(k, k)?.macro_f1;
            let fin = record.get(last, k)?.macro_f1;
            if just == 0.0 {
                debug!("task {k}: zero F1 after its own training, excluded from forgetting");
                Ok(None)
            } else {
                Ok(Some(100.0 * (just - fin) / just))
            }
        })
        .collect::<Result<_>>()?;
    let mean = mean_of_some(&per_task);
    Ok(Forgetting { per_task, mean })
}
