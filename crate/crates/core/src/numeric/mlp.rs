//! Multi-layer perceptron with a sigmoid multi-label head and a feature tap.
//!
//! Layers `0..=feature_tap` form the feature extractor; the remaining layers
//! form the classifier. `forward` returns both the logits and the activations
//! at the tap, and `loss_gradients` back-propagates an [`Objective`] that may
//! depend on either.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::matrix::Matrix;
use super::Objective;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }
}

/// Dense layer `activation(x · Wᵀ + b)` with `W` of shape `(out, in)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Config("layer dimensions must be > 0".into()));
        }
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit)
            .map_err(|e| Error::Config(format!("init range: {e}")))?;
        let data = (0..in_dim * out_dim).map(|_| dist.sample(rng)).collect();
        Ok(Self {
            weight: Matrix::from_vec(out_dim, in_dim, data)?,
            bias: vec![0.0; out_dim],
            activation,
        })
    }

    fn forward(&self, input: &Matrix, layer: usize) -> Result<(Matrix, Matrix)> {
        let mut pre = input.matmul_transposed(&self.weight)?;
        pre.add_row_vector(&self.bias);
        if !pre.is_finite() {
            return Err(Error::Numeric {
                layer,
                detail: "pre-activation".into(),
            });
        }
        let post = pre.map(|z| self.activation.apply(z));
        Ok((pre, post))
    }
}

/// Layer sizes and tap position of an [`MlpModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub n_outputs: usize,
    pub feature_tap: usize,
}

impl MlpShape {
    /// `input -> 64 relu -> 64 relu -> n_outputs`, tapping the first hidden layer
    /// so the classifier part keeps a hidden layer of its own.
    pub fn default_for(input_dim: usize, n_outputs: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![64, 64],
            n_outputs,
            feature_tap: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layers: Vec<Dense>,
    feature_tap: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: Matrix,
    pub features: Matrix,
}

/// Per-layer parameter gradients, laid out like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DenseGrad>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Gradients {
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|&g| g == 0.0))
    }
}

impl MlpModel {
    pub fn new(layers: Vec<Dense>, feature_tap: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        if feature_tap >= layers.len() {
            return Err(Error::Config(format!(
                "feature tap {feature_tap} out of range for {} layers",
                layers.len()
            )));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Config(format!(
                    "layer {k} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::Config(format!("layer {k} bias length mismatch")));
            }
        }
        Ok(Self {
            layers,
            feature_tap,
        })
    }

    /// Glorot-initialised network; hidden layers are ReLU, the head is identity.
    pub fn init<R: Rng + ?Sized>(shape: &MlpShape, rng: &mut R) -> Result<Self> {
        let mut dims = vec![shape.input_dim];
        dims.extend(&shape.hidden);
        dims.push(shape.n_outputs);
        let n_layers = dims.len() - 1;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let act = if k + 1 == n_layers {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                Dense::glorot(w[0], w[1], act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, shape.feature_tap)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn feature_tap(&self) -> usize {
        self.feature_tap
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn n_outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[self.feature_tap].out_dim()
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn adam_state(&self, config: AdamConfig) -> AdamState {
        AdamState::for_params(config, &self.param_slices())
    }

    /// Applies one Adam update with `grads`.
    pub fn adam_step(&mut self, state: &mut AdamState, grads: &Gradients) -> Result<()> {
        let g = grads.slices();
        let mut p = self.param_slices_mut();
        state.update(&mut p, &g)
    }

    fn check_input(&self, inputs: &Matrix) -> Result<()> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::Config(format!(
                "input has {} columns, model expects {}",
                inputs.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<ForwardOutput> {
        self.check_input(inputs)?;
        let mut act = inputs.clone();
        let mut features = None;
        for (k, layer) in self.layers.iter().enumerate() {
            let (_, post) = layer.forward(&act, k)?;
            act = post;
            if k == self.feature_tap {
                features = Some(act.clone());
            }
        }
        Ok(ForwardOutput {
            logits: act,
            features: features.expect("tap index validated at construction"),
        })
    }

    /// Runs only the classifier part (layers after the tap) on tap features.
    pub fn classify_features(&self, features: &Matrix) -> Result<Matrix> {
        if features.cols() != self.feature_dim() {
            return Err(Error::Config(format!(
                "features have {} columns, tap produces {}",
                features.cols(),
                self.feature_dim()
            )));
        }
        let mut act = features.clone();
        for (k, layer) in self.layers.iter().enumerate().skip(self.feature_tap + 1) {
            act = layer.forward(&act, k)?.1;
        }
        Ok(act)
    }

    /// Value of `objective` at the current parameters and its gradient with
    /// respect to every weight and bias.
    pub fn loss_gradients<O: Objective + ?Sized>(
        &self,
        inputs: &Matrix,
        objective: &O,
    ) -> Result<(f64, Gradients)> {
        self.check_input(inputs)?;
        // acts[k] is the input of layer k; pres[k] its pre-activation.
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pres = Vec::with_capacity(self.layers.len());
        acts.push(inputs.clone());
        for (k, layer) in self.layers.iter().enumerate() {
            let (pre, post) = layer.forward(&acts[k], k)?;
            pres.push(pre);
            acts.push(post);
        }
        let logits = &acts[self.layers.len()];
        let features = &acts[self.feature_tap + 1];
        let eval = objective.evaluate(logits, features)?;
        if !eval.value.is_finite() {
            return Err(Error::Numeric {
                layer: self.layers.len() - 1,
                detail: "loss value".into(),
            });
        }
        if eval.d_logits.shape() != logits.shape() {
            return Err(Error::Config("loss gradient shape differs from logits".into()));
        }

        let mut grads: Vec<Option<DenseGrad>> = vec![None; self.layers.len()];
        let mut upstream = eval.d_logits;
        for k in (0..self.layers.len()).rev() {
            if k == self.feature_tap {
                if let Some(df) = &eval.d_features {
                    upstream.add_assign(df)?;
                }
            }
            let layer = &self.layers[k];
            let delta = match layer.activation {
                Activation::Identity => upstream,
                Activation::Relu => {
                    let mut d = upstream;
                    for (g, &z) in d.as_mut_slice().iter_mut().zip(pres[k].as_slice()) {
                        if z <= 0.0 {
                            *g = 0.0;
                        }
                    }
                    d
                }
            };
            if !delta.is_finite() {
                return Err(Error::Numeric {
                    layer: k,
                    detail: "backward delta".into(),
                });
            }
            let weight = delta.transpose_matmul(&acts[k])?;
            let bias = delta.column_sums();
            if k > 0 {
                upstream = delta.matmul(&layer.weight)?;
            } else {
                upstream = Matrix::zeros(0, 0);
            }
            grads[k] = Some(DenseGrad { weight, bias });
        }
        Ok((
            eval.value,
            Gradients {
                layers: grads.into_iter().map(|g| g.expect("every layer visited")).collect(),
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{ConstantLoss, LossEval};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_model(dims: &[usize]) -> MlpModel {
        let layers = dims
            .windows(2)
            .map(|w| Dense {
                weight: Matrix::zeros(w[1], w[0]),
                bias: vec![0.0; w[1]],
                activation: Activation::Relu,
            })
            .collect();
        MlpModel::new(layers, 0).unwrap()
    }

    fn random_inputs(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn zero_network_gives_half_probabilities() {
        let model = zero_model(&[4, 3, 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = model.forward(&random_inputs(6, 4, &mut rng)).unwrap();
        for &z in out.logits.as_slice() {
            assert_eq!(z, 0.0);
            assert_eq!(crate::numeric::sigmoid(z), 0.5);
        }
    }

    #[test]
    fn identity_layer_features_equal_inputs() {
        let mut w = Matrix::zeros(3, 3);
        for i in 0..3 {
            w.set(i, i, 1.0);
        }
        let model = MlpModel::new(
            vec![Dense {
                weight: w,
                bias: vec![0.0; 3],
                activation: Activation::Identity,
            }],
            0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_inputs(5, 3, &mut rng);
        let out = model.forward(&x).unwrap();
        assert_eq!(out.features, x);
        assert_eq!(out.logits, x);
    }

    /// Scalar triple-loop forward pass, written independently of `Matrix`.
    fn scalar_forward(model: &MlpModel, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for layer in model.layers() {
            let mut next = vec![0.0; layer.out_dim()];
            for (o, n) in next.iter_mut().enumerate() {
                let mut s = layer.bias[o];
                for (i, ai) in a.iter().enumerate() {
                    s += layer.weight.get(o, i) * ai;
                }
                *n = match layer.activation {
                    Activation::Relu => {
                        if s > 0.0 {
                            s
                        } else {
                            0.0
                        }
                    }
                    Activation::Identity => s,
                };
            }
            a = next;
        }
        a
    }

    #[test]
    fn forward_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = MlpShape {
            input_dim: 5,
            hidden: vec![7],
            n_outputs: 4,
            feature_tap: 0,
        };
        let mut model = MlpModel::init(&shape, &mut rng).unwrap();
        for b in &mut model.layers_mut()[0].bias {
            *b = rng.random_range(-0.5..0.5);
        }
        let x = random_inputs(3, 5, &mut rng);
        let out = model.forward(&x).unwrap();
        for r in 0..3 {
            let expect = scalar_forward(&model, x.row(r));
            for (a, b) in out.logits.row(r).iter().zip(&expect) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn tap_split_identity_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = MlpModel::init(&MlpShape::default_for(6, 5), &mut rng).unwrap();
        let x = random_inputs(8, 6, &mut rng);
        let a = model.forward(&x).unwrap();
        let b = model.forward(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(model.classify_features(&a.features).unwrap(), a.logits);
    }

    #[test]
    fn dimension_errors() {
        let model = zero_model(&[4, 3]);
        assert!(matches!(
            model.forward(&Matrix::zeros(2, 5)),
            Err(Error::Config(_))
        ));
        let bad = vec![
            Dense {
                weight: Matrix::zeros(3, 4),
                bias: vec![0.0; 3],
                activation: Activation::Relu,
            },
            Dense {
                weight: Matrix::zeros(2, 2),
                bias: vec![0.0; 2],
                activation: Activation::Identity,
            },
        ];
        assert!(MlpModel::new(bad, 0).is_err());
        assert!(MlpModel::new(vec![], 0).is_err());
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = MlpModel::init(&MlpShape::default_for(4, 3), &mut rng).unwrap();
        let x = random_inputs(4, 4, &mut rng);
        let (v, g) = model.loss_gradients(&x, &ConstantLoss(3.5)).unwrap();
        assert_eq!(v, 3.5);
        assert!(g.is_zero());
    }

    struct Exploding;
    impl Objective for Exploding {
        fn evaluate(&self, logits: &Matrix, _f: &Matrix) -> Result<LossEval> {
            Ok(LossEval {
                value: 1.0,
                d_logits: logits.map(|_| f64::INFINITY),
                d_features: None,
            })
        }
    }

    #[test]
    fn non_finite_gradient_reports_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = MlpModel::init(&MlpShape::default_for(4, 3), &mut rng).unwrap();
        let x = random_inputs(2, 4, &mut rng);
        match model.loss_gradients(&x, &Exploding) {
            Err(Error::Numeric { layer, .. }) => assert_eq!(layer, 2),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }
}
