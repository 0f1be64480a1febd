//! Task streams for continual multi-label learning.
//!
//! A [`StreamSpec`] fixes the topology (which classes each task labels and
//! which input domain it is drawn from) together with the generator
//! parameters: one prototype vector per class, per-class base rates and the
//! per-domain affine transforms. [`generate_task_data`] turns one task of the
//! spec into train/val/test splits of [`Sample`]s.

mod manifest;

pub use manifest::{load_manifest, load_manifest_as, write_manifest, write_samples_csv};

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::numeric::Matrix;
use crate::rng::{derive_rng, Purpose};
use crate::{Error, Result};

/// One labelled example.
///
/// `targets` holds a value for every class. Positions outside `known_mask`
/// still carry the generator's latent label, but training code only ever sees
/// them through [`Sample::label`] and [`Sample::masked_targets`], which hide
/// unknown positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    targets: Vec<u8>,
    known_mask: Vec<u8>,
    pub origin_task: usize,
}

impl Sample {
    pub fn new(
        features: Vec<f64>,
        targets: Vec<u8>,
        known_mask: Vec<u8>,
        origin_task: usize,
    ) -> Result<Self> {
        if targets.len() != known_mask.len() {
            return Err(Error::Validation(format!(
                "targets ({}) and known mask ({}) differ in length",
                targets.len(),
                known_mask.len()
            )));
        }
        if targets.iter().chain(&known_mask).any(|&v| v > 1) {
            return Err(Error::Validation("labels and mask must be 0 or 1".into()));
        }
        Ok(Self {
            features,
            targets,
            known_mask,
            origin_task,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.targets.len()
    }

    pub fn known_mask(&self) -> &[u8] {
        &self.known_mask
    }

    #[inline]
    pub fn is_known(&self, class: usize) -> bool {
        self.known_mask[class] == 1
    }

    /// The label of `class` if it is known.
    #[inline]
    pub fn label(&self, class: usize) -> Option<u8> {
        self.is_known(class).then(|| self.targets[class])
    }

    /// Targets with every unknown position zeroed.
    pub fn masked_targets(&self) -> Vec<u8> {
        self.targets
            .iter()
            .zip(&self.known_mask)
            .map(|(t, k)| t & k)
            .collect()
    }

    /// Writes a label and marks it known.
    pub fn set_label(&mut self, class: usize, value: bool) {
        self.targets[class] = u8::from(value);
        self.known_mask[class] = 1;
    }

    /// Marks `class` known without changing its stored value. Used when a
    /// dataset's label scope is wider than the task that produced the sample.
    pub fn reveal(&mut self, class: usize) {
        self.known_mask[class] = 1;
    }

    /// Full target vector including hidden positions. Evaluation and test
    /// oracles only; strategies must go through [`Sample::label`].
    pub fn oracle_targets(&self) -> &[u8] {
        &self.targets
    }
}

/// Stacks sample features into a `(n x d)` matrix.
pub fn feature_matrix<'a, I>(samples: I, dim: usize) -> Result<Matrix>
where
    I: IntoIterator<Item = &'a Sample>,
{
    Matrix::from_rows(dim, samples.into_iter().map(|s| s.features.as_slice()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: usize,
    pub label_set: Vec<usize>,
    pub domain_id: usize,
    pub n_samples: usize,
}

impl TaskSpec {
    pub fn label_mask(&self, n_classes: usize) -> Vec<u8> {
        let mut m = vec![0; n_classes];
        for &j in &self.label_set {
            m[j] = 1;
        }
        m
    }
}

/// Per-feature affine input shift plus isotropic Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainTransform {
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
    pub noise_std: f64,
}

impl DomainTransform {
    pub fn identity(dim: usize, noise_std: f64) -> Self {
        Self {
            scale: vec![1.0; dim],
            offset: vec![0.0; dim],
            noise_std,
        }
    }

    /// Deterministic part of the transform (no noise).
    pub fn apply_mean(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(&self.scale)
            .zip(&self.offset)
            .map(|((x, s), o)| s * x + o)
            .collect()
    }
}

/// Generator settings from which a [`StreamSpec`] is drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    pub seed: u64,
    pub n_samples_per_task: usize,
    pub input_dim: usize,
    /// Expected Euclidean norm of a class prototype.
    pub prototype_norm: f64,
    /// When nonzero, prototypes lie in a random subspace of this dimension, so
    /// classes share input directions. Zero draws independent prototypes.
    pub prototype_rank: usize,
    pub noise_std: f64,
    /// Allow classes outside the task's label set to be (hidden-)positive.
    pub cooccurrence: bool,
    pub base_rate_range: (f64, f64),
    pub domain_scale_range: (f64, f64),
    pub domain_offset_range: (f64, f64),
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_samples_per_task: 2000,
            input_dim: 32,
            prototype_norm: 1.0,
            prototype_rank: 0,
            noise_std: 0.05,
            cooccurrence: true,
            base_rate_range: (0.02, 0.15),
            domain_scale_range: (0.5, 1.5),
            domain_offset_range: (-0.5, 0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub n_classes: usize,
    pub input_dim: usize,
    pub tasks: Vec<TaskSpec>,
    pub domains: Vec<DomainTransform>,
    pub seed: u64,
    /// One prototype per class; a sample's clean input is the sum of the
    /// prototypes of its positive classes.
    pub prototypes: Vec<Vec<f64>>,
    pub base_rates: Vec<f64>,
    pub cooccurrence: bool,
}

/// Class layout of the default seven-task stream: three new-class tasks in
/// domain 0, then domain 1 with one new-class task, two tasks re-presenting
/// earlier label sets, and a final new-class task.
pub const DEFAULT_TOPOLOGY: [(&[usize], usize); 7] = [
    (&[0, 1, 2], 0),
    (&[3, 4, 5, 6], 0),
    (&[7, 8, 9, 10], 0),
    (&[11, 12, 13, 14], 1),
    (&[3, 4, 5, 6], 1),
    (&[7, 8, 9, 10], 1),
    (&[15, 16, 17, 18], 1),
];

pub fn build_default_stream(seed: u64) -> StreamSpec {
    build_stream(&StreamConfig {
        seed,
        ..StreamConfig::default()
    })
    .expect("default stream configuration is valid")
}

pub fn build_stream(config: &StreamConfig) -> Result<StreamSpec> {
    let topology: Vec<(Vec<usize>, usize)> = DEFAULT_TOPOLOGY
        .iter()
        .map(|(l, d)| (l.to_vec(), *d))
        .collect();
    build_stream_with_topology(config, &topology)
}

/// Draws generator parameters for an arbitrary `(label_set, domain_id)` list.
/// Domain 0 is the identity domain; every other domain gets a random affine shift.
pub fn build_stream_with_topology(
    config: &StreamConfig,
    topology: &[(Vec<usize>, usize)],
) -> Result<StreamSpec> {
    if config.input_dim == 0 || config.n_samples_per_task == 0 {
        return Err(Error::Config("input_dim and n_samples_per_task must be > 0".into()));
    }
    if config.noise_std <= 0.0 {
        return Err(Error::Config("noise_std must be > 0".into()));
    }
    let n_classes = topology
        .iter()
        .flat_map(|(l, _)| l.iter().copied())
        .max()
        .map_or(0, |m| m + 1);
    let n_domains = topology.iter().map(|(_, d)| d + 1).max().unwrap_or(0);
    let dim = config.input_dim;
    let mut rng = derive_rng(config.seed, 0, Purpose::StreamParams);

    let proto_dist = Normal::new(0.0, config.prototype_norm / (dim as f64).sqrt())
        .map_err(|e| Error::Config(format!("prototype distribution: {e}")))?;
    let prototypes: Vec<Vec<f64>> = if config.prototype_rank == 0 {
        (0..n_classes)
            .map(|_| (0..dim).map(|_| proto_dist.sample(&mut rng)).collect())
            .collect()
    } else {
        let r = config.prototype_rank;
        let basis_dist = Normal::new(0.0, config.prototype_norm / ((dim * r) as f64).sqrt())
            .map_err(|e| Error::Config(format!("prototype basis: {e}")))?;
        let basis: Vec<Vec<f64>> = (0..dim)
            .map(|_| (0..r).map(|_| basis_dist.sample(&mut rng)).collect())
            .collect();
        (0..n_classes)
            .map(|_| {
                let z: Vec<f64> = (0..r).map(|_| StandardNormal.sample(&mut rng)).collect();
                basis
                    .iter()
                    .map(|row| row.iter().zip(&z).map(|(b, z)| b * z).sum())
                    .collect()
            })
            .collect()
    };

    let (lo, hi) = config.base_rate_range;
    let rate_dist = Uniform::new_inclusive(lo, hi)
        .map_err(|e| Error::Config(format!("base rate range: {e}")))?;
    let mut rates: Vec<f64> = (0..n_classes).map(|_| rate_dist.sample(&mut rng)).collect();
    rates.sort_by(f64::total_cmp);
    // The first task's classes get the smallest rates; the rest are shuffled.
    let first: Vec<usize> = topology.first().map(|(l, _)| l.clone()).unwrap_or_default();
    let mut rest: Vec<usize> = (0..n_classes).filter(|j| !first.contains(j)).collect();
    rest.shuffle(&mut rng);
    let mut base_rates = vec![0.0; n_classes];
    for (class, rate) in first.iter().chain(&rest).zip(&rates) {
        base_rates[*class] = *rate;
    }

    let (slo, shi) = config.domain_scale_range;
    let (olo, ohi) = config.domain_offset_range;
    let scale_dist = Uniform::new_inclusive(slo, shi)
        .map_err(|e| Error::Config(format!("domain scale range: {e}")))?;
    let offset_dist = Uniform::new_inclusive(olo, ohi)
        .map_err(|e| Error::Config(format!("domain offset range: {e}")))?;
    let domains = (0..n_domains)
        .map(|d| {
            if d == 0 {
                DomainTransform::identity(dim, config.noise_std)
            } else {
                DomainTransform {
                    scale: (0..dim).map(|_| scale_dist.sample(&mut rng)).collect(),
                    offset: (0..dim).map(|_| offset_dist.sample(&mut rng)).collect(),
                    noise_std: config.noise_std,
                }
            }
        })
        .collect();

    let tasks = topology
        .iter()
        .enumerate()
        .map(|(t, (labels, domain))| TaskSpec {
            task_id: t,
            label_set: labels.clone(),
            domain_id: *domain,
            n_samples: config.n_samples_per_task,
        })
        .collect();

    let spec = StreamSpec {
        n_classes,
        input_dim: dim,
        tasks,
        domains,
        seed: config.seed,
        prototypes,
        base_rates,
        cooccurrence: config.cooccurrence,
    };
    spec.validate()?;
    Ok(spec)
}

impl StreamSpec {
    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn task(&self, task_id: usize) -> Result<&TaskSpec> {
        self.tasks
            .get(task_id)
            .ok_or_else(|| Error::Config(format!("task {task_id} does not exist")))
    }

    /// Union of label sets of tasks `0..=task_id`, sorted.
    pub fn seen_classes(&self, task_id: usize) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .tasks
            .iter()
            .take(task_id + 1)
            .flat_map(|t| t.label_set.iter().copied())
            .collect();
        set.into_iter().collect()
    }

    /// Union of label sets of all tasks drawn from `domain_id`.
    pub fn domain_classes(&self, domain_id: usize) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .tasks
            .iter()
            .filter(|t| t.domain_id == domain_id)
            .flat_map(|t| t.label_set.iter().copied())
            .collect();
        set.into_iter().collect()
    }

    /// Whether `task_id` introduces classes not seen in earlier tasks.
    pub fn introduces_new_classes(&self, task_id: usize) -> bool {
        let before: BTreeSet<usize> = self.tasks[..task_id]
            .iter()
            .flat_map(|t| t.label_set.iter().copied())
            .collect();
        self.tasks[task_id]
            .label_set
            .iter()
            .any(|j| !before.contains(j))
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        let mut seen_sets: Vec<(BTreeSet<usize>, usize)> = Vec::new();
        for (t, task) in self.tasks.iter().enumerate() {
            if task.task_id != t {
                return Err(Error::Config(format!("task at position {t} has id {}", task.task_id)));
            }
            if task.label_set.is_empty() || task.n_samples == 0 {
                return Err(Error::Config(format!("task {t} is empty")));
            }
            if task.domain_id >= self.domains.len() {
                return Err(Error::Config(format!(
                    "task {t} references missing domain {}",
                    task.domain_id
                )));
            }
            let labels: BTreeSet<usize> = task.label_set.iter().copied().collect();
            if labels.len() != task.label_set.len() || labels.iter().any(|&j| j >= self.n_classes) {
                return Err(Error::Config(format!("task {t} has an invalid label set")));
            }
            let overlap = labels.iter().filter(|j| seen.contains(*j)).count();
            if overlap == 0 {
                seen.extend(labels.iter().copied());
            } else {
                // A re-presented task must repeat an earlier label set from another domain.
                let reused = seen_sets
                    .iter()
                    .any(|(s, d)| *s == labels && *d != task.domain_id);
                if overlap != labels.len() || !reused {
                    return Err(Error::Config(format!(
                        "task {t} mixes new and known classes or repeats a set in the same domain"
                    )));
                }
            }
            seen_sets.push((labels, task.domain_id));
        }
        if seen.len() != self.n_classes {
            return Err(Error::Config(format!(
                "tasks cover {} of {} classes",
                seen.len(),
                self.n_classes
            )));
        }
        if self.prototypes.len() != self.n_classes
            || self.prototypes.iter().any(|p| p.len() != self.input_dim)
        {
            return Err(Error::Config("prototype table has the wrong shape".into()));
        }
        if self.base_rates.len() != self.n_classes
            || self.base_rates.iter().any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::Config("base rates must be probabilities, one per class".into()));
        }
        for (d, dom) in self.domains.iter().enumerate() {
            if dom.scale.len() != self.input_dim
                || dom.offset.len() != self.input_dim
                || dom.scale.iter().any(|&s| s <= 0.0)
                || dom.noise_std <= 0.0
            {
                return Err(Error::Config(format!("domain {d} is invalid")));
            }
        }
        Ok(())
    }

    /// Clean (pre-domain) input for a latent label vector.
    pub fn raw_features(&self, latent: &[u8]) -> Vec<f64> {
        let mut x = vec![0.0; self.input_dim];
        for (j, _) in latent.iter().enumerate().filter(|(_, &y)| y == 1) {
            for (xi, p) in x.iter_mut().zip(&self.prototypes[j]) {
                *xi += p;
            }
        }
        x
    }

    /// Draws one latent label vector for `task`: one class of the label set is
    /// forced positive, every other class is positive with its base rate.
    /// Without co-occurrence, classes outside the label set stay negative.
    pub fn draw_latent<R: Rng + ?Sized>(&self, task: &TaskSpec, rng: &mut R) -> Vec<u8> {
        let forced = task.label_set[rng.random_range(0..task.label_set.len())];
        let mut y = vec![0u8; self.n_classes];
        for (j, yj) in y.iter_mut().enumerate() {
            let p = if j == forced {
                1.0
            } else if self.cooccurrence || task.label_set.contains(&j) {
                self.base_rates[j]
            } else {
                0.0
            };
            // Always consume one draw per class so toggling co-occurrence
            // does not shift the rest of the stream.
            let u: f64 = rng.random();
            *yj = u8::from(u < p);
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub task: TaskSpec,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl TaskDataset {
    pub fn all_samples(&self) -> impl Iterator<Item = &Sample> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

/// Generates every sample of `task_id` and splits it 80/10/10.
pub fn generate_task_data<R: Rng + ?Sized>(
    spec: &StreamSpec,
    task_id: usize,
    rng: &mut R,
) -> Result<TaskDataset> {
    let task = spec.task(task_id)?.clone();
    let domain = &spec.domains[task.domain_id];
    let noise = Normal::new(0.0, domain.noise_std)
        .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
    let mask = task.label_mask(spec.n_classes);
    let mut samples = Vec::with_capacity(task.n_samples);
    while samples.len() < task.n_samples {
        let latent = spec.draw_latent(&task, rng);
        if !task.label_set.iter().any(|&j| latent[j] == 1) {
            continue;
        }
        let mut x = domain.apply_mean(&spec.raw_features(&latent));
        for xi in &mut x {
            *xi += noise.sample(rng);
        }
        samples.push(Sample::new(x, latent, mask.clone(), task_id)?);
    }
    let (train, val, test) = split_dataset(samples, rng)?;
    Ok(TaskDataset {
        task,
        train,
        val,
        test,
    })
}

/// Shuffles and splits 80/10/10; validation and test sizes are rounded.
pub fn split_dataset<T, R: Rng + ?Sized>(
    mut samples: Vec<T>,
    rng: &mut R,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let n = samples.len();
    if n < 10 {
        return Err(Error::Validation(format!("need at least 10 samples to split, got {n}")));
    }
    samples.shuffle(rng);
    let n_val = (n as f64 * 0.1).round() as usize;
    let n_test = (n as f64 * 0.1).round() as usize;
    let n_train = n - n_val - n_test;
    let test = samples.split_off(n_train + n_val);
    let val = samples.split_off(n_train);
    Ok((samples, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_spec(cooccurrence: bool) -> StreamSpec {
        let mut s = build_stream(&StreamConfig {
            n_samples_per_task: 400,
            cooccurrence,
            ..StreamConfig::default()
        })
        .unwrap();
        s.seed = 3;
        s
    }

    #[test]
    fn default_topology() {
        let s = build_default_stream(0);
        assert_eq!(s.n_tasks(), 7);
        assert_eq!(s.n_classes, 19);
        assert_eq!(s.seen_classes(6).len(), 19);
        let domains: BTreeSet<usize> = s.tasks.iter().map(|t| t.domain_id).collect();
        assert_eq!(domains.len(), 2);
        assert!(s.tasks[..3].iter().all(|t| t.domain_id == 0));
        assert!(s.tasks[3..].iter().all(|t| t.domain_id == 1));
        assert!((0..3).all(|t| s.introduces_new_classes(t)));
        let after: Vec<bool> = (3..7).map(|t| s.introduces_new_classes(t)).collect();
        assert!(after.contains(&true) && after.contains(&false));
    }

    #[test]
    fn new_class_sets_are_disjoint() {
        for seed in 0..5 {
            let s = build_default_stream(seed);
            let mut seen = BTreeSet::new();
            for t in (0..s.n_tasks()).filter(|&t| s.introduces_new_classes(t)) {
                for &j in &s.tasks[t].label_set {
                    assert!(seen.insert(j), "class {j} introduced twice");
                }
            }
        }
    }

    #[test]
    fn seeds_change_parameters_not_topology() {
        let a = build_default_stream(0);
        assert_eq!(a, build_default_stream(0));
        let b = build_default_stream(1);
        assert_eq!(a.tasks, b.tasks);
        assert_ne!(a.prototypes, b.prototypes);
        assert_ne!(a.domains[1], b.domains[1]);
    }

    #[test]
    fn first_task_classes_are_rarest() {
        let s = build_default_stream(4);
        let max_first = s.tasks[0]
            .label_set
            .iter()
            .map(|&j| s.base_rates[j])
            .fold(0.0, f64::max);
        for j in 3..19 {
            assert!(s.base_rates[j] >= max_first);
            assert!((0.02..=0.15).contains(&s.base_rates[j]));
        }
    }

    #[test]
    fn selection_rule_and_mask_discipline() {
        let s = small_spec(true);
        for t in 0..s.n_tasks() {
            let mut rng = ChaCha8Rng::seed_from_u64(t as u64);
            let data = generate_task_data(&s, t, &mut rng).unwrap();
            let mask = s.tasks[t].label_mask(s.n_classes);
            for x in data.all_samples() {
                assert!(s.tasks[t].label_set.iter().any(|&j| x.label(j) == Some(1)));
                assert_eq!(x.known_mask(), mask.as_slice());
                assert_eq!(x.origin_task, t);
            }
        }
    }

    fn hidden_positive_count(spec: &StreamSpec, task_id: usize) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data = generate_task_data(spec, task_id, &mut rng).unwrap();
        data.all_samples()
            .map(|x| {
                (0..spec.n_classes)
                    .filter(|&j| !x.is_known(j) && x.oracle_targets()[j] == 1)
                    .count()
            })
            .sum()
    }

    #[test]
    fn hidden_positives_follow_cooccurrence() {
        assert!(hidden_positive_count(&small_spec(true), 0) > 0);
        assert_eq!(hidden_positive_count(&small_spec(false), 0), 0);
    }

    #[test]
    fn domain_shift_changes_inputs_only() {
        let s = build_default_stream(0);
        let latent = {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            s.draw_latent(&s.tasks[1], &mut rng)
        };
        let raw = s.raw_features(&latent);
        let a = s.domains[s.tasks[1].domain_id].apply_mean(&raw);
        let b = s.domains[s.tasks[4].domain_id].apply_mean(&raw);
        assert_ne!(a, b);
        assert_eq!(s.tasks[1].label_set, s.tasks[4].label_set);
    }

    #[test]
    fn generation_is_deterministic() {
        let s = small_spec(true);
        let a = generate_task_data(&s, 2, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = generate_task_data(&s, 2, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert!(generate_task_data(&s, 7, &mut ChaCha8Rng::seed_from_u64(5)).is_err());
    }

    #[test]
    fn split_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, b, c) = split_dataset((0..100).collect::<Vec<_>>(), &mut rng).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (80, 10, 10));
        let (a, b, c) = split_dataset((0..10).collect::<Vec<_>>(), &mut rng).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
        assert!(split_dataset((0..9).collect::<Vec<_>>(), &mut rng).is_err());

        let run = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            split_dataset((0..57).collect::<Vec<_>>(), &mut r).unwrap()
        };
        let (x, y, z) = run(4);
        assert_eq!((x.clone(), y.clone(), z.clone()), run(4));
        let mut all: Vec<i32> = x.into_iter().chain(y).chain(z).collect();
        all.sort();
        assert_eq!(all, (0..57).collect::<Vec<_>>());
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = build_default_stream(0);
        s.tasks[2].domain_id = 5;
        assert!(s.validate().is_err());
        let mut s = build_default_stream(0);
        s.tasks[4].domain_id = 0;
        assert!(s.validate().is_err(), "re-presented set in the same domain");
        let mut s = build_default_stream(0);
        s.tasks[6].label_set = vec![15, 16, 17, 0];
        assert!(s.validate().is_err(), "mixed new and old classes");
    }
}
