//! Dense numerical stack: matrices, the MLP, Adam and binary cross-entropy.

mod adam;
mod loss;
mod matrix;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use loss::{bce, bce_elementwise, sigmoid, Bce, ConstantLoss};
pub use matrix::Matrix;
pub use mlp::{Activation, Dense, DenseGrad, ForwardOutput, Gradients, MlpModel, MlpShape};

use crate::Result;

/// Loss value plus its gradient with respect to the logits and, optionally,
/// the tap features.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub d_logits: Matrix,
    pub d_features: Option<Matrix>,
}

/// A differentiable scalar loss over `(logits, features)` of one batch.
pub trait Objective {
    fn evaluate(&self, logits: &Matrix, features: &Matrix) -> Result<LossEval>;
}

impl<T: Objective + ?Sized> Objective for &T {
    fn evaluate(&self, logits: &Matrix, features: &Matrix) -> Result<LossEval> {
        (**self).evaluate(logits, features)
    }
}
