//! Accelerated gradient descent with Lipschitz backtracking, and the
//! variational reconstruction it drives for transfer tasks.

use crate::data::{data_initialization, Task};
use crate::error::{Result, TdvError};
use crate::operators::{LinearMap, LinearOperator};
use crate::regularizer::{tdv_derivatives_padded, TdvParams};
use crate::tensor::Tensor;
use std::f64::consts::FRAC_1_SQRT_2;

/// Backtracking gives up once the Lipschitz estimate exceeds this value.
pub const L_LIMIT: f64 = 1e12;

/// One accepted iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgdStep {
    /// `E(x̂_k)` at the over-relaxed point.
    pub energy_extrapolated: f64,
    /// `E(x_{k+1})`.
    pub energy: f64,
    /// Lipschitz estimate used for the accepted step.
    pub lipschitz: f64,
}

#[derive(Clone, Debug)]
pub struct AgdOutcome {
    pub x: Tensor,
    pub steps: Vec<AgdStep>,
}

/// For `k = 1…K`: `x̂ = x_k + (1/√2)(x_k − x_{k−1})`, then try
/// `x_{k+1} = x̂ − ∇E(x̂)/L` until
/// `E(x_{k+1}) ≤ E(x̂) + ⟨x_{k+1} − x̂, ∇E(x̂)⟩ + (L/2)‖x_{k+1} − x̂‖²`,
/// halving `L` on acceptance and doubling it on rejection.
pub fn agd_lipschitz_solve<E, G>(energy_fn: E, grad_fn: G, x0: &Tensor, max_iters: usize, l0: f64) -> Result<AgdOutcome>
where
    E: Fn(&Tensor) -> Result<f64>,
    G: Fn(&Tensor) -> Result<Tensor>,
{
    if !(l0 > 0.0) {
        return Err(TdvError::contract("initial Lipschitz estimate must be positive"));
    }
    let mut l = l0;
    let mut prev = x0.clone();
    let mut x = x0.clone();
    let mut steps = Vec::with_capacity(max_iters);
    for _ in 0..max_iters {
        let mut xh = x.clone();
        xh.axpy(FRAC_1_SQRT_2, &(&x - &prev));
        let eh = energy_fn(&xh)?;
        let g = grad_fn(&xh)?;
        loop {
            let mut next = xh.clone();
            next.axpy(-1.0 / l, &g);
            let d = &next - &xh;
            let q = d.dot(&g) + 0.5 * l * d.norm_sq();
            let en = energy_fn(&next)?;
            if en <= eh + q {
                steps.push(AgdStep {
                    energy_extrapolated: eh,
                    energy: en,
                    lipschitz: l,
                });
                l /= 2.0;
                prev = std::mem::replace(&mut x, next);
                break;
            }
            l *= 2.0;
            if l > L_LIMIT {
                return Err(TdvError::numerical(format!(
                    "Lipschitz backtracking exceeded {L_LIMIT:e}; energy is not smooth or diverges"
                )));
            }
        }
    }
    Ok(AgdOutcome { x, steps })
}

/// Minimise `(λ/2)‖Ax − z‖² + R(x, θ)` with [`agd_lipschitz_solve`] from
/// `x0`, or from the task's data-term initialisation when `x0` is `None`.
pub fn transfer_reconstruct(
    task: Task,
    op: &LinearOperator,
    z: &Tensor,
    params: &TdvParams,
    lambda: f64,
    x0: Option<&Tensor>,
    iters: usize,
) -> Result<AgdOutcome> {
    if !(lambda > 0.0) {
        return Err(TdvError::contract("λ must be positive"));
    }
    let start = match x0 {
        Some(x) => x.clone(),
        None => data_initialization(task, op, z)?,
    };
    let energy = |x: &Tensor| -> Result<f64> {
        let r = &op.apply(x)? - z;
        Ok(0.5 * lambda * r.norm_sq() + tdv_derivatives_padded(x, params, None, false)?.energy)
    };
    let grad = |x: &Tensor| -> Result<Tensor> {
        let r = &op.apply(x)? - z;
        let mut g = tdv_derivatives_padded(x, params, None, false)?.grad;
        g.axpy(lambda, &op.adjoint(&r)?);
        Ok(g)
    };
    agd_lipschitz_solve(energy, grad, &start, iters, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stationary_start_stays_put() {
        let a = Tensor::image(1, 2, &[1.0, -1.0]).unwrap();
        let out = agd_lipschitz_solve(
            |x| Ok(0.5 * (x - &a).norm_sq()),
            |x| Ok(x - &a),
            &a,
            5,
            1.0,
        )
        .unwrap();
        assert_eq!(out.x, a);
    }

    #[test]
    fn nonsmooth_energy_fails() {
        // The reported gradient points uphill, so no step can be accepted.
        let x0 = Tensor::image(1, 1, &[1.0]).unwrap();
        let err = agd_lipschitz_solve(|x| Ok(x.data()[0].abs()), |x| Ok(x.scale(-1.0)), &x0, 3, 1.0).unwrap_err();
        assert!(matches!(err, TdvError::Numerical(_)));
    }
}
