//! Loss terms used by the strategies. Each term is built per batch from
//! precomputed targets (and frozen-model outputs where needed), so that it is
//! a pure function of the current model's logits and tap features.

use serde::{Deserialize, Serialize};

use crate::buffer::{BatchItem, Provenance};
use crate::numeric::{bce_elementwise, sigmoid, LossEval, Matrix, Objective};
use crate::{Error, Result};

/// BCE averaged over the entries selected by `mask`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedBce {
    pub targets: Matrix,
    pub mask: Matrix,
}

impl MaskedBce {
    pub fn new(targets: Matrix, mask: Matrix) -> Result<Self> {
        if targets.shape() != mask.shape() {
            return Err(Error::Config("targets and mask differ in shape".into()));
        }
        Ok(Self { targets, mask })
    }

    pub fn n_terms(&self) -> f64 {
        self.mask.as_slice().iter().sum()
    }

    /// Sum of per-entry BCE over the mask (not normalised).
    pub fn masked_sum(&self, logits: &Matrix) -> f64 {
        logits
            .as_slice()
            .iter()
            .zip(self.targets.as_slice())
            .zip(self.mask.as_slice())
            .filter(|(_, &m)| m != 0.0)
            .map(|((&z, &y), &m)| m * bce_elementwise(z, y))
            .sum()
    }
}

fn check_shape(name: &str, logits: &Matrix, other: &Matrix) -> Result<()> {
    if logits.shape() != other.shape() {
        return Err(Error::Config(format!(
            "{name}: expected shape {:?}, got {:?}",
            other.shape(),
            logits.shape()
        )));
    }
    Ok(())
}

impl Objective for MaskedBce {
    fn evaluate(&self, logits: &Matrix, _features: &Matrix) -> Result<LossEval> {
        check_shape("masked BCE", logits, &self.targets)?;
        let n = self.n_terms();
        let mut d = Matrix::zeros(logits.rows(), logits.cols());
        if n == 0.0 {
            return Ok(LossEval {
                value: 0.0,
                d_logits: d,
                d_features: None,
            });
        }
        let value = self.masked_sum(logits) / n;
        for (((g, &z), &y), &m) in d
            .as_mut_slice()
            .iter_mut()
            .zip(logits.as_slice())
            .zip(self.targets.as_slice())
            .zip(self.mask.as_slice())
        {
            if m != 0.0 {
                *g = m * (sigmoid(z) - y) / n;
            }
        }
        Ok(LossEval {
            value,
            d_logits: d,
            d_features: None,
        })
    }
}

/// Which representation the distillation term compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistillTarget {
    /// Activations at the model's feature tap.
    #[default]
    Features,
    /// Classifier outputs (logits).
    Logits,
}

/// Mean over the batch of `‖current − frozen‖₂` at the feature tap (or on the
/// logits, see [`DistillTarget`]).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDistill {
    pub frozen: Matrix,
    pub target: DistillTarget,
}

impl FeatureDistill {
    pub fn new(frozen: Matrix, target: DistillTarget) -> Self {
        Self { frozen, target }
    }

    fn value_and_grad(&self, current: &Matrix) -> Result<(f64, Matrix)> {
        check_shape("feature distillation", current, &self.frozen)?;
        let b = current.rows();
        let mut d = Matrix::zeros(b, current.cols());
        if b == 0 {
            return Ok((0.0, d));
        }
        let mut total = 0.0;
        for r in 0..b {
            let diff: Vec<f64> = current
                .row(r)
                .iter()
                .zip(self.frozen.row(r))
                .map(|(a, f)| a - f)
                .collect();
            let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
            total += norm;
            // The norm is not differentiable at zero; use the zero subgradient.
            if norm > 0.0 {
                for (g, v) in d.row_mut(r).iter_mut().zip(&diff) {
                    *g = v / (norm * b as f64);
                }
            }
        }
        Ok((total / b as f64, d))
    }
}

impl Objective for FeatureDistill {
    fn evaluate(&self, logits: &Matrix, features: &Matrix) -> Result<LossEval> {
        match self.target {
            DistillTarget::Features => {
                let (value, d) = self.value_and_grad(features)?;
                Ok(LossEval {
                    value,
                    d_logits: Matrix::zeros(logits.rows(), logits.cols()),
                    d_features: Some(d),
                })
            }
            DistillTarget::Logits => {
                let (value, d) = self.value_and_grad(logits)?;
                Ok(LossEval {
                    value,
                    d_logits: d,
                    d_features: None,
                })
            }
        }
    }
}

/// Soft-target distillation of sigmoid outputs, averaged over masked entries.
///
/// Computed as binary KL divergence `KL(p ‖ σ(z))`, i.e. soft-target BCE
/// minus the (constant) target entropy, so the term is zero when the two
/// models agree.
#[derive(Debug, Clone, PartialEq)]
pub struct LwfDistill {
    pub frozen_probs: Matrix,
    pub mask: Matrix,
}

fn binary_entropy(p: f64) -> f64 {
    let mut h = 0.0;
    if p > 0.0 {
        h -= p * p.ln();
    }
    if p < 1.0 {
        h -= (1.0 - p) * (-p).ln_1p();
    }
    h
}

impl Objective for LwfDistill {
    fn evaluate(&self, logits: &Matrix, _features: &Matrix) -> Result<LossEval> {
        check_shape("LwF distillation", logits, &self.frozen_probs)?;
        check_shape("LwF distillation", logits, &self.mask)?;
        let n: f64 = self.mask.as_slice().iter().sum();
        let mut d = Matrix::zeros(logits.rows(), logits.cols());
        if n == 0.0 {
            return Ok(LossEval {
                value: 0.0,
                d_logits: d,
                d_features: None,
            });
        }
        let mut value = 0.0;
        for (((g, &z), &p), &m) in d
            .as_mut_slice()
            .iter_mut()
            .zip(logits.as_slice())
            .zip(self.frozen_probs.as_slice())
            .zip(self.mask.as_slice())
        {
            if m != 0.0 {
                value += m * (bce_elementwise(z, p) - binary_entropy(p));
                *g = m * (sigmoid(z) - p) / n;
            }
        }
        Ok(LossEval {
            value: (value / n).max(0.0),
            d_logits: d,
            d_features: None,
        })
    }
}

/// Mean squared error between logits and stored logits over masked entries.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMse {
    pub stored: Matrix,
    pub mask: Matrix,
}

impl Objective for LogitMse {
    fn evaluate(&self, logits: &Matrix, _features: &Matrix) -> Result<LossEval> {
        check_shape("logit MSE", logits, &self.stored)?;
        check_shape("logit MSE", logits, &self.mask)?;
        let n: f64 = self.mask.as_slice().iter().sum();
        let mut d = Matrix::zeros(logits.rows(), logits.cols());
        if n == 0.0 {
            return Ok(LossEval {
                value: 0.0,
                d_logits: d,
                d_features: None,
            });
        }
        let mut value = 0.0;
        for (((g, &z), &s), &m) in d
            .as_mut_slice()
            .iter_mut()
            .zip(logits.as_slice())
            .zip(self.stored.as_slice())
            .zip(self.mask.as_slice())
        {
            if m != 0.0 {
                let e = z - s;
                value += m * e * e;
                *g = 2.0 * m * e / n;
            }
        }
        Ok(LossEval {
            value: value / n,
            d_logits: d,
            d_features: None,
        })
    }
}

/// Weighted sum of loss terms.
#[derive(Default)]
pub struct Combined {
    terms: Vec<(f64, Box<dyn Objective + Send + Sync>)>,
}

impl Combined {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, weight: f64, term: impl Objective + Send + Sync + 'static) -> Self {
        self.terms.push((weight, Box::new(term)));
        self
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

impl Objective for Combined {
    fn evaluate(&self, logits: &Matrix, features: &Matrix) -> Result<LossEval> {
        let mut value = 0.0;
        let mut d_logits = Matrix::zeros(logits.rows(), logits.cols());
        let mut d_features: Option<Matrix> = None;
        for (w, term) in &self.terms {
            if *w == 0.0 {
                continue;
            }
            let mut e = term.evaluate(logits, features)?;
            value += w * e.value;
            e.d_logits.scale(*w);
            d_logits.add_assign(&e.d_logits)?;
            if let Some(mut df) = e.d_features {
                df.scale(*w);
                match &mut d_features {
                    Some(acc) => acc.add_assign(&df)?,
                    None => d_features = Some(df),
                }
            }
        }
        Ok(LossEval {
            value,
            d_logits,
            d_features,
        })
    }
}

/// Masking-loss targets for a mixed batch.
///
/// Current samples contribute every known label. Memory samples contribute
/// only known labels among `old_classes` that are not in `current_labels`.
pub fn masked_loss_terms(
    items: &[BatchItem<'_>],
    old_classes: &[usize],
    current_labels: &[usize],
    n_classes: usize,
) -> Result<MaskedBce> {
    let mut targets = Matrix::zeros(items.len(), n_classes);
    let mut mask = Matrix::zeros(items.len(), n_classes);
    let mut memory_scope = vec![false; n_classes];
    for &j in old_classes {
        memory_scope[j] = true;
    }
    for &j in current_labels {
        memory_scope[j] = false;
    }
    for (r, item) in items.iter().enumerate() {
        for j in 0..n_classes {
            let Some(y) = item.sample.label(j) else {
                continue;
            };
            let include = match item.provenance {
                Provenance::Current => true,
                Provenance::Memory => memory_scope[j],
            };
            if include {
                targets.set(r, j, f64::from(y));
                mask.set(r, j, 1.0);
            }
        }
    }
    MaskedBce::new(targets, mask)
}

/// Value of the masking loss for `logits` of a mixed batch.
pub fn masked_loss(
    items: &[BatchItem<'_>],
    logits: &Matrix,
    old_classes: &[usize],
    current_labels: &[usize],
) -> Result<f64> {
    let terms = masked_loss_terms(items, old_classes, current_labels, logits.cols())?;
    Ok(terms.evaluate(logits, &Matrix::zeros(0, 0))?.value)
}
