//! Episodic replay memory.
//!
//! Three memory layouts come out of the same buffer depending on how it is
//! driven:
//!
//! - plain replay: [`ReplayBuffer::admit`] without a stamper; each entry knows
//!   only its origin task's labels.
//! - forward-stamped: admission with a [`LabelStamper`] that fills every
//!   earlier task's labels from the previous model.
//! - consolidated: additionally calling [`ReplayBuffer::consolidate_backward`]
//!   after every task, so each entry ends up knowing every label seen so far.
//!
//! Masks only ever grow and an already known position is never rewritten.

use std::fs::File;
use std::ops::Range;
use std::path::Path;

use rand::seq::index;
use rand::Rng;

use crate::numeric::{sigmoid, MlpModel};
use crate::stream::{feature_matrix, write_samples_csv, Sample, TaskDataset};
use crate::{Error, Result};

/// Fills label positions of freshly admitted samples before they are stored.
pub trait LabelStamper {
    fn stamp(&self, samples: &mut [Sample]) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry {
    pub sample: Sample,
    /// Logits of the model at admission time (DER only).
    pub stored_logits: Option<Vec<f64>>,
    pub admitted_at: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Current,
    Memory,
}

/// One element of a mixed batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub sample: &'a Sample,
    pub provenance: Provenance,
    /// Buffer index for memory items.
    pub entry: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    entries: Vec<BufferEntry>,
    capacity: usize,
    per_task_quota: usize,
}

/// `⌈fraction · total_train⌉` entries.
pub fn capacity_for(total_train: usize, fraction: f64) -> usize {
    (fraction * total_train as f64 - 1e-9).ceil().max(0.0) as usize
}

impl ReplayBuffer {
    /// Reserves `floor(capacity / n_tasks)` slots for every task of the stream.
    pub fn new(capacity: usize, n_tasks: usize) -> Result<Self> {
        if n_tasks == 0 {
            return Err(Error::Config("buffer needs at least one task".into()));
        }
        let per_task_quota = capacity / n_tasks;
        if per_task_quota == 0 {
            return Err(Error::Config(format!(
                "capacity {capacity} is too small for {n_tasks} tasks"
            )));
        }
        Ok(Self {
            entries: Vec::new(),
            capacity,
            per_task_quota,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn per_task_quota(&self) -> usize {
        self.per_task_quota
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BufferEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [BufferEntry] {
        &mut self.entries
    }

    pub fn count_from_task(&self, task: usize) -> usize {
        self.entries.iter().filter(|e| e.admitted_at == task).count()
    }

    /// Stores `per_task_quota` samples drawn without replacement from the
    /// task's train split, optionally stamping them first. Returns the index
    /// range of the new entries.
    pub fn admit<R: Rng + ?Sized>(
        &mut self,
        dataset: &TaskDataset,
        rng: &mut R,
        stamper: Option<&dyn LabelStamper>,
    ) -> Result<Range<usize>> {
        let task = dataset.task.task_id;
        let quota = self.per_task_quota;
        if quota > dataset.train.len() {
            return Err(Error::Validation(format!(
                "quota {quota} exceeds the {} training samples of task {task}",
                dataset.train.len()
            )));
        }
        if self.count_from_task(task) > 0 {
            return Err(Error::Validation(format!("task {task} was already admitted")));
        }
        if self.entries.len() + quota > self.capacity {
            return Err(Error::Validation(format!(
                "admitting {quota} more entries would exceed capacity {}",
                self.capacity
            )));
        }
        let picked = index::sample(rng, dataset.train.len(), quota);
        let mut samples: Vec<Sample> = picked.iter().map(|i| dataset.train[i].clone()).collect();
        if let Some(stamper) = stamper {
            stamper.stamp(&mut samples)?;
        }
        let start = self.entries.len();
        self.entries.extend(samples.into_iter().map(|sample| BufferEntry {
            sample,
            stored_logits: None,
            admitted_at: task,
        }));
        Ok(start..self.entries.len())
    }

    /// Builds a mixed batch from up to `⌈(1 - ratio) · batch_size⌉` current
    /// samples and `⌊ratio · batch_size⌋` memory entries drawn with
    /// replacement. An empty buffer is tolerated only on the first task, where
    /// the batch is all-current.
    pub fn mix_batch<'a, R: Rng + ?Sized>(
        &'a self,
        current: &[&'a Sample],
        batch_size: usize,
        ratio: f64,
        first_task: bool,
        rng: &mut R,
    ) -> Result<Vec<BatchItem<'a>>> {
        if !(0.0..1.0).contains(&ratio) {
            return Err(Error::Config(format!("mix ratio {ratio} outside [0, 1)")));
        }
        let as_current = |s: &&'a Sample| BatchItem {
            sample: *s,
            provenance: Provenance::Current,
            entry: None,
        };
        if ratio == 0.0 {
            return Ok(current.iter().map(as_current).collect());
        }
        if self.entries.is_empty() {
            if first_task {
                return Ok(current.iter().map(as_current).collect());
            }
            return Err(Error::State("replay buffer is empty after the first task".into()));
        }
        let n_cur = ((1.0 - ratio) * batch_size as f64).ceil() as usize;
        let n_mem = (ratio * batch_size as f64).floor() as usize;
        let mut out: Vec<BatchItem<'a>> = current.iter().take(n_cur).map(as_current).collect();
        for _ in 0..n_mem {
            let i = rng.random_range(0..self.entries.len());
            out.push(BatchItem {
                sample: &self.entries[i].sample,
                provenance: Provenance::Memory,
                entry: Some(i),
            });
        }
        Ok(out)
    }

    /// Writes thresholded predictions of `model` for the classes in `labels`
    /// into every entry admitted before `task`. Positions that are already
    /// known keep their value.
    pub fn consolidate_backward(
        &mut self,
        model: &MlpModel,
        labels: &[usize],
        thresholds: &[f64],
        task: usize,
    ) -> Result<()> {
        let idx: Vec<usize> = (0..self.entries.len())
            .filter(|&i| self.entries[i].admitted_at < task)
            .collect();
        if idx.is_empty() || labels.is_empty() {
            return Ok(());
        }
        let x = feature_matrix(idx.iter().map(|&i| &self.entries[i].sample), model.input_dim())?;
        let logits = model.forward(&x)?.logits;
        for (r, &i) in idx.iter().enumerate() {
            let sample = &mut self.entries[i].sample;
            for &j in labels {
                if !sample.is_known(j) {
                    sample.set_label(j, sigmoid(logits.get(r, j)) > thresholds[j]);
                }
            }
        }
        Ok(())
    }

    /// Records current logits of `model` on the entries in `range`.
    pub fn snapshot_logits(&mut self, range: Range<usize>, model: &MlpModel) -> Result<()> {
        snapshot_logits(&mut self.entries[range], model)
    }

    /// Manifest-schema CSV of the buffer with an extra `admitted_at` column.
    pub fn dump_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        write_samples_csv(
            file,
            Some("admitted_at"),
            self.entries
                .iter()
                .map(|e| (&e.sample, "train", Some(e.admitted_at.to_string()))),
        )
    }
}

/// Sets `stored_logits` of each entry to the model's current logits.
pub fn snapshot_logits(entries: &mut [BufferEntry], model: &MlpModel) -> Result<()> {
    if entries.is_empty() {
        return Ok(());
    }
    let x = feature_matrix(entries.iter().map(|e| &e.sample), model.input_dim())?;
    let logits = model.forward(&x)?.logits;
    for (r, e) in entries.iter_mut().enumerate() {
        e.stored_logits = Some(logits.row(r).to_vec());
    }
    Ok(())
}
