use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::{Matrix, OutputActivation};
use crate::{Error, Result};

pub(crate) const PROB_FLOOR: f64 = 1e-12;
pub(crate) const PROB_CEIL: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean over every output element of the squared error.
    Mse,
    /// Categorical cross-entropy for softmax outputs, per-unit binary
    /// cross-entropy for sigmoid outputs. Probabilities are clamped to
    /// `[1e-12, 1 - 1e-12]` before taking logs.
    CrossEntropy,
}

/// Cross-entropy only makes sense on probability outputs.
pub fn check_loss_output(loss: LossKind, output: OutputActivation) -> Result<()> {
    match (loss, output) {
        (LossKind::CrossEntropy, OutputActivation::Softmax | OutputActivation::Sigmoid) => Ok(()),
        (LossKind::CrossEntropy, other) => Err(Error::InvalidConfig(format!(
            "cross-entropy needs a softmax or sigmoid output, got {other:?}"
        ))),
        (LossKind::Mse, _) => Ok(()),
    }
}

impl LossKind {
    /// Mean loss of `outputs` against `targets`. When `grad` is given,
    /// `weight * dL/d(outputs)` is added to it. Returns `weight * loss`.
    pub fn accumulate(
        self,
        output: OutputActivation,
        outputs: ArrayView2<f64>,
        targets: ArrayView2<f64>,
        weight: f64,
        grad: Option<&mut Matrix>,
    ) -> f64 {
        debug_assert_eq!(outputs.dim(), targets.dim());
        let (rows, cols) = outputs.dim();
        let mut total = 0.0;
        match self {
            LossKind::Mse => {
                let scale = 1.0 / (rows * cols) as f64;
                let mut grad = grad;
                for ((i, j), &p) in outputs.indexed_iter() {
                    let d = p - targets[[i, j]];
                    total += d * d;
                    if let Some(g) = grad.as_deref_mut() {
                        g[[i, j]] += weight * 2.0 * d * scale;
                    }
                }
                weight * total * scale
            }
            LossKind::CrossEntropy if output == OutputActivation::Sigmoid => {
                let scale = 1.0 / (rows * cols) as f64;
                let mut grad = grad;
                for ((i, j), &p) in outputs.indexed_iter() {
                    let t = targets[[i, j]];
                    let q = p.clamp(PROB_FLOOR, PROB_CEIL);
                    total -= t * q.ln() + (1.0 - t) * (1.0 - q).ln();
                    if let Some(g) = grad.as_deref_mut() {
                        if (PROB_FLOOR..=PROB_CEIL).contains(&p) {
                            g[[i, j]] += weight * (-t / q + (1.0 - t) / (1.0 - q)) * scale;
                        }
                    }
                }
                weight * total * scale
            }
            LossKind::CrossEntropy => {
                let scale = 1.0 / rows as f64;
                let mut grad = grad;
                for ((i, j), &p) in outputs.indexed_iter() {
                    let t = targets[[i, j]];
                    let q = p.clamp(PROB_FLOOR, PROB_CEIL);
                    total -= t * q.ln();
                    if let Some(g) = grad.as_deref_mut() {
                        if (PROB_FLOOR..=PROB_CEIL).contains(&p) {
                            g[[i, j]] -= weight * t / q * scale;
                        }
                    }
                }
                weight * total * scale
            }
        }
    }

    /// Mean loss without gradient.
    pub fn value(self, output: OutputActivation, outputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> f64 {
        self.accumulate(output, outputs, targets, 1.0, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mse_value_and_grad() {
        let out = array![[1.0, 2.0], [0.0, 0.0]];
        let tgt = array![[0.0, 2.0], [1.0, 1.0]];
        let mut g = Matrix::zeros((2, 2));
        let v = LossKind::Mse.accumulate(OutputActivation::Identity, out.view(), tgt.view(), 1.0, Some(&mut g));
        assert_eq!(v, 3.0 / 4.0);
        assert_eq!(g, array![[0.5, 0.0], [-0.5, -0.5]]);
    }

    #[test]
    fn categorical_ce() {
        let out = array![[0.25, 0.75]];
        let tgt = array![[0.0, 1.0]];
        let v = LossKind::CrossEntropy.value(OutputActivation::Softmax, out.view(), tgt.view());
        assert!((v + 0.75f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn clamped_log_is_finite() {
        let out = array![[0.0, 1.0]];
        let tgt = array![[1.0, 0.0]];
        let v = LossKind::CrossEntropy.value(OutputActivation::Softmax, out.view(), tgt.view());
        assert!((v - 1e-12f64.ln().abs()).abs() < 1e-9);
        let b = LossKind::CrossEntropy.value(OutputActivation::Sigmoid, array![[1.0]].view(), array![[0.0]].view());
        assert!(b.is_finite());
    }

    #[test]
    fn ce_requires_probability_output() {
        assert!(check_loss_output(LossKind::CrossEntropy, OutputActivation::Identity).is_err());
        assert!(check_loss_output(LossKind::CrossEntropy, OutputActivation::Sigmoid).is_ok());
        assert!(check_loss_output(LossKind::Mse, OutputActivation::Identity).is_ok());
    }
}
