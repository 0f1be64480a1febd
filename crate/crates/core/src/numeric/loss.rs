use super::{LossEval, Matrix, Objective};
use crate::{Error, Result};

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-[y ln σ(z) + (1-y) ln(1-σ(z))]` evaluated from the logit. `y` may be soft.
#[inline]
pub fn bce_elementwise(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn check_binary(targets: &Matrix) -> Result<()> {
    if let Some(bad) = targets.as_slice().iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::Validation(format!("target {bad} is not in {{0, 1}}")));
    }
    Ok(())
}

/// Mean binary cross-entropy over every entry.
pub fn bce(logits: &Matrix, targets: &Matrix) -> Result<f64> {
    if logits.shape() != targets.shape() {
        return Err(Error::Config(format!(
            "logits {:?} and targets {:?} differ in shape",
            logits.shape(),
            targets.shape()
        )));
    }
    check_binary(targets)?;
    let n = logits.as_slice().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = logits
        .as_slice()
        .iter()
        .zip(targets.as_slice())
        .map(|(&z, &y)| bce_elementwise(z, y))
        .sum();
    Ok(sum / n as f64)
}

/// [`bce`] as an [`Objective`].
#[derive(Debug, Clone)]
pub struct Bce {
    targets: Matrix,
}

impl Bce {
    pub fn new(targets: Matrix) -> Result<Self> {
        check_binary(&targets)?;
        Ok(Self { targets })
    }
}

impl Objective for Bce {
    fn evaluate(&self, logits: &Matrix, _features: &Matrix) -> Result<LossEval> {
        let value = bce(logits, &self.targets)?;
        let n = logits.as_slice().len().max(1) as f64;
        let mut d = logits.clone();
        for (g, &y) in d.as_mut_slice().iter_mut().zip(self.targets.as_slice()) {
            *g = (sigmoid(*g) - y) / n;
        }
        Ok(LossEval {
            value,
            d_logits: d,
            d_features: None,
        })
    }
}

/// A loss that ignores the network output entirely.
#[derive(Debug, Clone, Copy)]
pub struct ConstantLoss(pub f64);

impl Objective for ConstantLoss {
    fn evaluate(&self, logits: &Matrix, _features: &Matrix) -> Result<LossEval> {
        Ok(LossEval {
            value: self.0,
            d_logits: Matrix::zeros(logits.rows(), logits.cols()),
            d_features: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one(z: f64, y: f64) -> f64 {
        bce(
            &Matrix::from_vec(1, 1, vec![z]).unwrap(),
            &Matrix::from_vec(1, 1, vec![y]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn symmetric_and_saturated_cases() {
        assert!((one(0.0, 0.0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(one(20.0, 1.0) < 1e-8);
        assert!(one(-800.0, 0.0).is_finite());
        assert!((one(-800.0, 1.0) - 800.0).abs() < 1e-9);
    }

    #[test]
    fn matches_naive_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z: Vec<f64> = (0..60).map(|_| rng.random_range(-6.0..6.0)).collect();
        let y: Vec<f64> = (0..60).map(|_| f64::from(rng.random_bool(0.4) as u8)).collect();
        let naive: f64 = z
            .iter()
            .zip(&y)
            .map(|(&z, &y)| {
                let p = 1.0 / (1.0 + (-z).exp());
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / 60.0;
        let got = bce(
            &Matrix::from_vec(6, 10, z).unwrap(),
            &Matrix::from_vec(6, 10, y).unwrap(),
        )
        .unwrap();
        assert!((got - naive).abs() < 1e-9);
    }

    #[test]
    fn rejects_non_binary_targets() {
        let z = Matrix::zeros(1, 2);
        let y = Matrix::from_vec(1, 2, vec![0.0, 0.5]).unwrap();
        assert!(matches!(bce(&z, &y), Err(Error::Validation(_))));
        assert!(Bce::new(y).is_err());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-1000.0) >= 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
    }

    proptest! {
        #[test]
        fn bce_is_non_negative(z in prop::collection::vec(-50.0f64..50.0, 1..20), bits in prop::collection::vec(any::<bool>(), 20)) {
            let n = z.len();
            let y: Vec<f64> = bits[..n].iter().map(|&b| f64::from(b as u8)).collect();
            let v = bce(&Matrix::from_vec(1, n, z).unwrap(), &Matrix::from_vec(1, n, y).unwrap()).unwrap();
            prop_assert!(v >= 0.0);
        }
    }
}
