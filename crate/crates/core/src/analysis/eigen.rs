//! Nonlinear eigenpairs `∇₁R(x̄) = λ̄ x̄` via accelerated projected gradient
//! descent on the sphere `‖x‖₂ = ‖x_init‖₂`.

use crate::error::{Result, TdvError};
use crate::regularizer::{tdv_derivatives_padded, TdvParams};
use crate::tensor::Tensor;

const DELTA: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct Eigenpair {
    pub x_bar: Tensor,
    pub lambda_bar: f64,
    /// `‖∇₁R(x̄) − λ̄x̄‖₂ / max(‖∇₁R(x̄)‖₂, δ)`
    pub residual: f64,
    /// `|‖x̄‖₂ − ‖x_init‖₂| / ‖x_init‖₂`
    pub norm_violation: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct EigenConfig {
    pub steps: usize,
    /// Step size `τ`.
    pub step_size: f64,
    /// Stop as soon as the residual drops below this value (checked every
    /// `check_every` iterations). Zero runs all steps.
    pub tol: f64,
    pub check_every: usize,
}

fn project(v: &Tensor, radius: f64) -> Result<Tensor> {
    let n = v.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(TdvError::numerical("projection onto the sphere of a zero or non-finite vector"));
    }
    Ok(v.scale(radius / n))
}

fn certify(grad: &Tensor, x: &Tensor) -> (f64, f64) {
    let lambda = grad.dot(x) / x.norm_sq();
    let mut r = grad.clone();
    r.axpy(-lambda, x);
    (lambda, r.norm() / grad.norm().max(DELTA))
}

/// Iterates `x_{k+1} = Proj(x̂_k − τ g(x̂_k))` with
/// `x̂_k = x_k + ((k−1)/(k+2))(x_k − x_{k−1})`, `Proj(v) = (‖x_init‖/‖v‖)v`.
pub fn eigenpair_solve<G>(grad_fn: G, x_init: &Tensor, cfg: &EigenConfig) -> Result<Eigenpair>
where
    G: Fn(&Tensor) -> Result<Tensor>,
{
    let radius = x_init.norm();
    if radius == 0.0 {
        return Err(TdvError::numerical("eigenpair start must be nonzero"));
    }
    let mut prev = x_init.clone();
    let mut x = x_init.clone();
    let mut done = 0;
    for k in 1..=cfg.steps {
        let beta = (k as f64 - 1.0) / (k as f64 + 2.0);
        let mut xh = x.clone();
        xh.axpy(beta, &(&x - &prev));
        let g = grad_fn(&xh)?;
        let mut v = xh;
        v.axpy(-cfg.step_size, &g);
        let next = project(&v, radius)?;
        prev = std::mem::replace(&mut x, next);
        done = k;
        if cfg.tol > 0.0 && cfg.check_every > 0 && k % cfg.check_every == 0 {
            let (_, res) = certify(&grad_fn(&x)?, &x);
            if res < cfg.tol {
                break;
            }
        }
    }
    let g = grad_fn(&x)?;
    let (lambda_bar, residual) = certify(&g, &x);
    Ok(Eigenpair {
        norm_violation: (x.norm() - radius).abs() / radius,
        x_bar: x,
        lambda_bar,
        residual,
        iterations: done,
    })
}

/// Power-iteration estimate of the largest Hessian eigenvalue magnitude of
/// `R` at `x`.
pub fn hvp_lipschitz_estimate(params: &TdvParams, x: &Tensor, iters: usize) -> Result<f64> {
    let mut v = Tensor::from_fn(x.shape(), |[_, _, i, j]| ((i * 31 + j * 17) as f64 * 0.61).sin());
    v.scale_mut(1.0 / v.norm());
    let mut est: f64 = 0.0;
    for _ in 0..iters.max(1) {
        let hv = tdv_derivatives_padded(x, params, Some(&v), false)?
            .hvp
            .expect("direction was supplied");
        let n = hv.norm();
        est = est.max(n);
        if n == 0.0 {
            break;
        }
        v = hv.scale(1.0 / n);
    }
    Ok(est)
}

/// Eigenpair of `∇₁R(·, θ)` from `x_init` with `τ = 1/L̂`, `L̂` from
/// [`hvp_lipschitz_estimate`] at `x_init`.
pub fn tdv_eigenpair(params: &TdvParams, x_init: &Tensor, steps: usize, tol: f64) -> Result<Eigenpair> {
    let l = hvp_lipschitz_estimate(params, x_init, 20)?;
    if !(l > 0.0) {
        return Err(TdvError::numerical("Hessian estimate vanished; cannot pick a step size"));
    }
    let cfg = EigenConfig {
        steps,
        step_size: 1.0 / l,
        tol,
        check_every: 25,
    };
    eigenpair_solve(|x| Ok(tdv_derivatives_padded(x, params, None, false)?.grad), x_init, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isotropic_quadratic_is_stationary() {
        let x = Tensor::image(1, 3, &[0.3, -1.0, 2.0]).unwrap();
        let cfg = EigenConfig {
            steps: 10,
            step_size: 0.5,
            tol: 0.0,
            check_every: 0,
        };
        let e = eigenpair_solve(|v| Ok(v.clone()), &x, &cfg).unwrap();
        assert!((e.lambda_bar - 1.0).abs() < 1e-14);
        assert!(e.residual < 1e-14);
    }

    #[test]
    fn zero_start_is_rejected() {
        let cfg = EigenConfig {
            steps: 1,
            step_size: 0.1,
            tol: 0.0,
            check_every: 0,
        };
        assert!(eigenpair_solve(|v| Ok(v.clone()), &Tensor::zeros([1, 1, 1, 2]), &cfg).is_err());
    }
}
