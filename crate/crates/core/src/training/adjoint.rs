//! Discrete adjoint recursion and the control gradients it yields.
//!
//! With `q_s = B(T)⁻¹ p_{s+1}` the costates obey
//! `p_s = q_s − (T/S)∇₁²R(x_s, θ) q_s` from `p_S = −(1/N)∇l(x_S − y)`, so that
//! `p_s = −∂J/∂x_s`. Because `B(T)` is symmetric,
//!
//! - `∇_θJ = (T/S) Σ_s ∇_θ⟨∇₁R(x_s, θ), q_s⟩`,
//! - `∂J/∂T = −(1/T) Σ_s ⟨q_s, x_{s+1} − x_s⟩`.

use super::loss::{loss_eval, LossSpec};
use crate::error::{Result, TdvError};
use crate::flow::{apply_b_inverse, data_drift, Trajectory};
use crate::operators::LinearMap;
use crate::regularizer::{tdv_derivatives_padded, TdvParams};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AdjointTrajectory {
    /// `p_0 … p_S`, indexable by `s`.
    pub costates: Vec<Tensor>,
    /// `q_s = B(T)⁻¹ p_{s+1}` for `s = 0 … S−1`.
    pub solved: Vec<Tensor>,
    /// `∇l(x_S − y)` per batch entry, stacked.
    pub terminal_loss_grad: Tensor,
    /// `(1/N) Σᵢ l(x_Sⁱ − yⁱ)` over this trajectory's batch entries.
    pub objective: f64,
}

/// Control gradients of one trajectory.
#[derive(Clone, Debug)]
pub struct ControlGradients {
    pub params: TdvParams,
    pub stop_time: f64,
}

/// `(1/N) Σᵢ l(x_Sⁱ − yⁱ)` with `N` the batch size.
pub fn objective(traj: &Trajectory, y: &Tensor, loss: LossSpec) -> Result<f64> {
    let x = traj.last();
    x.check_same_shape(y, "objective target")?;
    let n = x.batch() as f64;
    let diff = x - y;
    Ok((0..x.batch())
        .map(|b| loss_eval(&diff.batch_item(b), loss).0)
        .sum::<f64>()
        / n)
}

fn terminal(traj: &Trajectory, y: &Tensor, loss: LossSpec, n: usize) -> Result<(Tensor, Tensor, f64)> {
    let x = traj.last();
    x.check_same_shape(y, "adjoint target")?;
    let diff = x - y;
    let mut grads = Vec::with_capacity(x.batch());
    let mut total = 0.0;
    for b in 0..x.batch() {
        let (v, g) = loss_eval(&diff.batch_item(b), loss);
        total += v;
        grads.push(g);
    }
    let g = Tensor::stack(&grads)?;
    let p = g.scale(-1.0 / n as f64);
    Ok((g, p, total / n as f64))
}

fn check_normalization(n: usize) -> Result<()> {
    if n == 0 {
        return Err(TdvError::contract("normalisation N must be positive"));
    }
    Ok(())
}

/// Costates of `traj` with `N` equal to its batch size.
pub fn adjoint_recursion(traj: &Trajectory, params: &TdvParams, loss: LossSpec, y: &Tensor) -> Result<AdjointTrajectory> {
    adjoint_recursion_normalized(traj, params, loss, y, traj.last().batch())
}

/// Costates with an explicit normalisation `N`, for trajectories that hold
/// only part of a minibatch.
pub fn adjoint_recursion_normalized(
    traj: &Trajectory,
    params: &TdvParams,
    loss: LossSpec,
    y: &Tensor,
    n: usize,
) -> Result<AdjointTrajectory> {
    Ok(sweep(traj, params, loss, y, n, false)?.0)
}

/// Costates together with `∇_θJ` and `∂J/∂T` from a single backward sweep.
pub fn adjoint_and_gradients(
    traj: &Trajectory,
    params: &TdvParams,
    loss: LossSpec,
    y: &Tensor,
    n: usize,
) -> Result<(AdjointTrajectory, ControlGradients)> {
    let (adj, grad) = sweep(traj, params, loss, y, n, true)?;
    let stop_time = stop_time_gradient(traj, &adj, params)?;
    Ok((
        adj,
        ControlGradients {
            params: grad.expect("parameter gradients were requested"),
            stop_time,
        },
    ))
}

fn sweep(
    traj: &Trajectory,
    params: &TdvParams,
    loss: LossSpec,
    y: &Tensor,
    n: usize,
    with_params: bool,
) -> Result<(AdjointTrajectory, Option<TdvParams>)> {
    check_normalization(n)?;
    let cfg = &traj.config;
    let depth = traj.depth();
    let tau = cfg.tau();
    let (g, p_last, obj) = terminal(traj, y, loss, n)?;
    let mut costates = vec![Tensor::zeros([0, 0, 0, 0]); depth + 1];
    let mut solved = vec![Tensor::zeros([0, 0, 0, 0]); depth];
    costates[depth] = p_last;
    let mut grad = with_params.then(|| params.zeros_like());
    for s in (0..depth).rev() {
        let q = apply_b_inverse(cfg, cfg.stop_time, &costates[s + 1])?;
        let p = if tau == 0.0 {
            q.clone()
        } else {
            let d = tdv_derivatives_padded(&traj.states[s], params, Some(&q), with_params)?;
            if let (Some(acc), Some(mixed)) = (grad.as_mut(), d.mixed.as_ref()) {
                acc.axpy(tau, mixed);
            }
            let mut p = q.clone();
            p.axpy(-tau, d.hvp.as_ref().expect("direction was supplied"));
            p
        };
        if !p.is_finite() {
            return Err(TdvError::numerical(format!("costate {s} is not finite")));
        }
        costates[s] = p;
        solved[s] = q;
    }
    Ok((
        AdjointTrajectory {
            costates,
            solved,
            terminal_loss_grad: g,
            objective: obj,
        },
        grad,
    ))
}

/// `∇_θJ` from a completed adjoint sweep (one extra second-order pass per step).
pub fn param_gradients(traj: &Trajectory, adj: &AdjointTrajectory, params: &TdvParams) -> Result<ControlGradients> {
    let tau = traj.config.tau();
    let mut grad = params.zeros_like();
    if tau != 0.0 {
        for (x, q) in traj.states.iter().zip(&adj.solved) {
            let d = tdv_derivatives_padded(x, params, Some(q), true)?;
            grad.axpy(tau, d.mixed.as_ref().expect("mixed derivative was requested"));
        }
    }
    Ok(ControlGradients {
        params: grad,
        stop_time: stop_time_gradient(traj, adj, params)?,
    })
}

/// `∂J/∂T`. At `T = 0` the difference quotient is replaced by its limit
/// `−Σ_s ⟨p_{s+1}, (1/S)(λAᵀz − λAᵀA x_s − ∇₁R(x_s))⟩`.
pub fn stop_time_gradient(traj: &Trajectory, adj: &AdjointTrajectory, params: &TdvParams) -> Result<f64> {
    let cfg = &traj.config;
    let t = cfg.stop_time;
    let depth = traj.depth();
    if t > 0.0 {
        let s: f64 = (0..depth)
            .map(|s| adj.solved[s].dot(&(&traj.states[s + 1] - &traj.states[s])))
            .sum();
        return Ok(-s / t);
    }
    let atz = data_drift(cfg, &traj.z)?;
    let mut total = 0.0;
    for s in 0..depth {
        let x = &traj.states[s];
        let grad = match traj.grads.get(s) {
            Some(g) => g.clone(),
            None => tdv_derivatives_padded(x, params, None, false)?.grad,
        };
        let mut v = atz.clone();
        if !cfg.operator.is_identity() {
            v.axpy(-cfg.lambda, &cfg.operator.normal(x)?);
        } else {
            v.axpy(-cfg.lambda, x);
        }
        v -= &grad;
        total += adj.costates[s + 1].dot(&v) / depth as f64;
    }
    Ok(-total)
}

/// Which form of the stationarity sum to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResidualVariant {
    /// `−Σ_s ⟨p_{s+1}, B(T)⁻¹(x_{s+1} − x_s)⟩`, equal to `T·∂J/∂T`.
    Scaled,
    /// `−Σ_s ⟨p_{s+1}, x_{s+1} − x_s⟩`, the form without `B(T)⁻¹`. For the
    /// identity operator it equals `T(1 + λT/S)·∂J/∂T`.
    Unscaled,
}

impl ResidualVariant {
    /// Unscaled for the identity operator, scaled otherwise.
    pub fn default_for(traj: &Trajectory) -> Self {
        if traj.config.operator.is_identity() {
            ResidualVariant::Unscaled
        } else {
            ResidualVariant::Scaled
        }
    }
}

/// Stationarity sum of the stopping time. The costates already carry the
/// factor `1/N`, so no further normalisation is applied. Both variants share
/// the sign of `∂J/∂T` for `T > 0` and vanish where it vanishes.
pub fn optimality_residual(traj: &Trajectory, adj: &AdjointTrajectory, variant: ResidualVariant) -> f64 {
    let depth = traj.depth();
    (0..depth)
        .map(|s| {
            let dx = &traj.states[s + 1] - &traj.states[s];
            match variant {
                ResidualVariant::Scaled => adj.solved[s].dot(&dx),
                ResidualVariant::Unscaled => adj.costates[s + 1].dot(&dx),
            }
        })
        .sum::<f64>()
        * -1.0
}
