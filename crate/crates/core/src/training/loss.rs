use crate::error::{Result, TdvError};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Per-sample training loss `l`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossSpec {
    /// `½‖x‖₂²`
    SquaredL2,
    /// `√(‖x‖₁² + ε²)`
    SmoothL1 { epsilon: f64 },
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            LossSpec::SmoothL1 { epsilon } if !(*epsilon > 0.0) => {
                Err(TdvError::contract("smooth ℓ¹ loss needs ε > 0"))
            }
            _ => Ok(()),
        }
    }
}

/// Value and gradient of `l` at `x`. The ℓ¹ subgradient uses `sign(0) = 0`.
pub fn loss_eval(x: &Tensor, spec: LossSpec) -> (f64, Tensor) {
    match spec {
        LossSpec::SquaredL2 => (0.5 * x.norm_sq(), x.clone()),
        LossSpec::SmoothL1 { epsilon } => {
            let l1: f64 = x.data().iter().map(|v| v.abs()).sum();
            let value = (l1 * l1 + epsilon * epsilon).sqrt();
            let k = l1 / value;
            let grad = x.map(|v| {
                if v > 0.0 {
                    k
                } else if v < 0.0 {
                    -k
                } else {
                    0.0
                }
            });
            (value, grad)
        }
    }
}

/// Loss of every batch entry of `x`.
pub fn loss_per_sample(x: &Tensor, spec: LossSpec) -> Vec<(f64, Tensor)> {
    (0..x.batch()).map(|b| loss_eval(&x.batch_item(b), spec)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_l1_at_zero() {
        let (v, g) = loss_eval(&Tensor::zeros([1, 1, 2, 2]), LossSpec::SmoothL1 { epsilon: 1e-3 });
        assert_eq!(v, 1e-3);
        assert!(g.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn squared_l2_example() {
        let (v, g) = loss_eval(&Tensor::image(1, 2, &[3.0, 4.0]).unwrap(), LossSpec::SquaredL2);
        assert_eq!(v, 12.5);
        assert_eq!(g.data(), &[3.0, 4.0]);
    }

    #[test]
    fn epsilon_must_be_positive() {
        assert!(LossSpec::SmoothL1 { epsilon: 0.0 }.validate().is_err());
    }
}
