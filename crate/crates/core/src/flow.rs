//! Semi-implicit discretisation of the TDV gradient flow.
//!
//! One step solves `B(T) x_{s+1} = x_s + (T/S)(λAᵀz − ∇₁R(x_s, θ))` with
//! `B(T) = Id + (T/S)λAᵀA`: the quadratic data term is treated implicitly and
//! the regularizer explicitly. Images whose sides are not multiples of 4 are
//! replicate-padded for the regularizer and its gradient is pulled back
//! through the padding adjoint.

use crate::error::{Result, TdvError};
use crate::operators::{cg_solve, LinearMap, LinearOperator};
use crate::regularizer::{tdv_derivatives_padded, tdv_energy_padded, TdvParams};
use crate::tensor::io::write_tensor;
use crate::tensor::Tensor;
use serde::Serialize;
use std::fs;
use std::path::Path;

/// Upper bound of admissible stopping times.
pub const T_MAX: f64 = 1.0;
pub const DEFAULT_CG_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct FlowConfig {
    /// Stopping time `T`.
    pub stop_time: f64,
    /// Number of steps `S`.
    pub depth: usize,
    /// CG iterations per application of `B(T)⁻¹` (unused for the identity).
    pub cg_iters: usize,
    pub cg_tol: f64,
    /// Data-term weight `λ`.
    pub lambda: f64,
    pub operator: LinearOperator,
}

impl FlowConfig {
    pub fn new(operator: LinearOperator, stop_time: f64, depth: usize) -> Self {
        Self {
            stop_time,
            depth,
            cg_iters: operator.default_cg_iters(),
            cg_tol: DEFAULT_CG_TOL,
            lambda: 1.0,
            operator,
        }
    }

    pub fn denoising(stop_time: f64, depth: usize) -> Self {
        Self::new(LinearOperator::Identity, stop_time, depth)
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_cg_iters(mut self, iters: usize) -> Self {
        self.cg_iters = iters;
        self
    }

    pub fn with_stop_time(&self, stop_time: f64) -> Self {
        Self {
            stop_time,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=T_MAX).contains(&self.stop_time) {
            return Err(TdvError::contract(format!(
                "stopping time {} outside [0, {T_MAX}]",
                self.stop_time
            )));
        }
        if self.depth == 0 {
            return Err(TdvError::contract("flow depth S must be at least 1"));
        }
        if !(self.lambda > 0.0) {
            return Err(TdvError::contract("data weight λ must be positive"));
        }
        if self.cg_iters == 0 && !self.operator.is_identity() {
            return Err(TdvError::contract("cg_iters must be positive"));
        }
        Ok(())
    }

    /// Step size `T/S`.
    pub fn tau(&self) -> f64 {
        self.stop_time / self.depth as f64
    }
}

/// The states `x₀ … x_S` of one flow run.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<Tensor>,
    /// `∇₁R(x_s, θ)` for `s = 0 … S−1`.
    pub grads: Vec<Tensor>,
    pub config: FlowConfig,
    pub z: Tensor,
}

impl Trajectory {
    pub fn last(&self) -> &Tensor {
        self.states.last().expect("trajectory holds at least x₀")
    }

    pub fn depth(&self) -> usize {
        self.states.len() - 1
    }
}

/// `B(T) x = x + (T/S)λAᵀA x` for the stopping time `t`.
pub fn apply_b(cfg: &FlowConfig, t: f64, x: &Tensor) -> Result<Tensor> {
    let c = t / cfg.depth as f64 * cfg.lambda;
    if cfg.operator.is_identity() {
        return Ok(x.scale(1.0 + c));
    }
    let mut out = x.clone();
    if c != 0.0 {
        out.axpy(c, &cfg.operator.normal(x)?);
    }
    Ok(out)
}

/// `B(T)⁻¹ rhs`: the exact scalar inverse for the identity operator, CG per
/// batch entry otherwise.
pub fn apply_b_inverse(cfg: &FlowConfig, t: f64, rhs: &Tensor) -> Result<Tensor> {
    let c = t / cfg.depth as f64 * cfg.lambda;
    if c == 0.0 {
        return Ok(rhs.clone());
    }
    if cfg.operator.is_identity() {
        return Ok(rhs.scale(1.0 / (1.0 + c)));
    }
    let items: Result<Vec<Tensor>> = (0..rhs.batch())
        .map(|b| cg_solve(|v| apply_b(cfg, t, v), &rhs.batch_item(b), cfg.cg_iters, cfg.cg_tol))
        .collect();
    Tensor::stack(&items?)
}

/// `λAᵀz`, the constant part of the drift.
pub fn data_drift(cfg: &FlowConfig, z: &Tensor) -> Result<Tensor> {
    Ok(cfg.operator.adjoint(z)?.scale(cfg.lambda))
}

/// One semi-implicit step from `x`. `T = 0` returns `x` unchanged.
pub fn semi_implicit_step(x: &Tensor, z: &Tensor, params: &TdvParams, cfg: &FlowConfig) -> Result<Tensor> {
    if cfg.stop_time == 0.0 {
        return Ok(x.clone());
    }
    let grad = tdv_derivatives_padded(x, params, None, false)?.grad;
    step_with(x, &grad, &data_drift(cfg, z)?, cfg)
}

fn step_with(x: &Tensor, grad: &Tensor, atz: &Tensor, cfg: &FlowConfig) -> Result<Tensor> {
    let tau = cfg.tau();
    let mut rhs = x.clone();
    rhs.axpy(tau, atz);
    rhs.axpy(-tau, grad);
    apply_b_inverse(cfg, cfg.stop_time, &rhs)
}

/// Run `S` steps from `x_init` and record every state.
pub fn run_flow(x_init: &Tensor, z: &Tensor, params: &TdvParams, cfg: &FlowConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let atz = data_drift(cfg, z)?;
    x_init.check_same_shape(&atz, "flow initial state vs Aᵀz")?;
    let mut states = Vec::with_capacity(cfg.depth + 1);
    let mut grads = Vec::with_capacity(cfg.depth);
    states.push(x_init.clone());
    for s in 0..cfg.depth {
        let x = &states[s];
        let grad = tdv_derivatives_padded(x, params, None, false)?.grad;
        let next = if cfg.stop_time == 0.0 {
            x.clone()
        } else {
            step_with(x, &grad, &atz, cfg)?
        };
        if !next.is_finite() {
            return Err(TdvError::numerical(format!("flow state {} is not finite", s + 1)));
        }
        grads.push(grad);
        states.push(next);
    }
    Ok(Trajectory {
        states,
        grads,
        config: cfg.clone(),
        z: z.clone(),
    })
}

/// Noise-level rescaling: the flow trained at `sigma_train` is applied to
/// `(sigma_train/sigma)·z` and the result scaled back by `sigma/sigma_train`.
pub fn rescale_wrap(
    x_init: &Tensor,
    z: &Tensor,
    sigma: f64,
    sigma_train: f64,
    params: &TdvParams,
    cfg: &FlowConfig,
) -> Result<Tensor> {
    if !(sigma > 0.0 && sigma_train > 0.0) {
        return Err(TdvError::contract("noise levels must be positive"));
    }
    let k = sigma_train / sigma;
    let traj = run_flow(&x_init.scale(k), &z.scale(k), params, cfg)?;
    Ok(traj.last().scale(1.0 / k))
}

/// `(λ/2)‖Ax − z‖²`
pub fn data_energy(x: &Tensor, z: &Tensor, op: &LinearOperator, lambda: f64) -> Result<f64> {
    let r = &op.apply(x)? - z;
    Ok(0.5 * lambda * r.norm_sq())
}

/// `E(x) = (λ/2)‖Ax − z‖² + R(x, θ)`
pub fn total_energy(x: &Tensor, z: &Tensor, params: &TdvParams, op: &LinearOperator, lambda: f64) -> Result<f64> {
    Ok(data_energy(x, z, op, lambda)? + tdv_energy_padded(x, params)?)
}

#[derive(Serialize)]
struct TrajectoryIndex<'a> {
    stop_time: f64,
    depth: usize,
    lambda: f64,
    operator: &'a str,
    states: Vec<String>,
}

/// Write `state_XXX.tensor` files and an `index.json` into `dir`.
pub fn write_trajectory(dir: impl AsRef<Path>, traj: &Trajectory) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut names = Vec::new();
    for (s, x) in traj.states.iter().enumerate() {
        let name = format!("state_{s:03}.tensor");
        write_tensor(dir.join(&name), x)?;
        names.push(name);
    }
    write_tensor(dir.join("z.tensor"), &traj.z)?;
    let index = TrajectoryIndex {
        stop_time: traj.config.stop_time,
        depth: traj.config.depth,
        lambda: traj.config.lambda,
        operator: traj.config.operator.name(),
        states: names,
    };
    fs::write(dir.join("index.json"), serde_json::to_string_pretty(&index)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regularizer::init_params;

    fn silent(mut p: TdvParams) -> TdvParams {
        p.w = p.w.zeros_like();
        p
    }

    #[test]
    fn zero_time_freezes_the_state() {
        let p = init_params(1, 1, 2, 1, 9.0);
        let x = Tensor::from_fn([1, 1, 4, 4], |[_, _, i, j]| (i * j) as f64 * 0.1);
        let traj = run_flow(&x, &x.scale(0.5), &p, &FlowConfig::denoising(0.0, 3)).unwrap();
        assert!(traj.states.iter().all(|s| *s == x));
    }

    #[test]
    fn single_scalar_step() {
        let p = silent(init_params(1, 1, 2, 1, 9.0));
        let x = Tensor::zeros([1, 1, 4, 4]);
        let z = Tensor::full([1, 1, 4, 4], 1.0);
        let next = semi_implicit_step(&x, &z, &p, &FlowConfig::denoising(1.0, 1)).unwrap();
        assert!(next.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn rejects_out_of_range_time() {
        assert!(FlowConfig::denoising(1.5, 3).validate().is_err());
        assert!(FlowConfig::denoising(0.5, 0).validate().is_err());
    }
}
