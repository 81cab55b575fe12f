//! Per-step bound on the distance of two trajectories that share `z` and
//! `x_init` but use different controls `(T, θ)` and `(T̃, θ̃)`.

use crate::error::{Result, TdvError};
use crate::flow::{data_drift, Trajectory};
use crate::operators::{estimate_opnorm, LinearOperator};
use crate::regularizer::TdvParams;
use serde::Serialize;

/// Power iterations used for `‖A‖₂` when `A` is not the identity.
const OPNORM_ITERS: usize = 200;
/// Safety margin on the power-iteration estimate, which approaches `‖A‖₂`
/// from below.
const OPNORM_MARGIN: f64 = 1.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SensitivityStep {
    /// Step index `s`; the bound concerns `x_{s+1}`.
    pub step: usize,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SensitivityReport {
    pub steps: Vec<SensitivityStep>,
    /// Local Lipschitz estimate of `∇₁R` read off the two trajectories.
    pub lipschitz: f64,
    /// `‖B(T)⁻¹ − B(T̃)⁻¹‖₂`
    pub inverse_gap: f64,
    /// `‖B(T̃)⁻¹‖₂`
    pub inverse_norm: f64,
}

/// Spectral norms `(‖B(a)⁻¹ − B(b)⁻¹‖₂, ‖B(b)⁻¹‖₂)` where
/// `B(c) = Id + c·AᵀA` and the spectrum of `AᵀA` lies in `[0, mu_max]`.
fn inverse_norms(a: f64, b: f64, mu_max: f64, identity: bool) -> (f64, f64) {
    if identity {
        return ((1.0 / (1.0 + a) - 1.0 / (1.0 + b)).abs(), 1.0 / (1.0 + b));
    }
    // |1/(1+aμ) − 1/(1+bμ)| = |a−b|μ / ((1+aμ)(1+bμ)) rises up to μ* = 1/√(ab)
    // and decays afterwards.
    let h = |mu: f64| (a - b).abs() * mu / ((1.0 + a * mu) * (1.0 + b * mu));
    let peak = if a > 0.0 && b > 0.0 { (a * b).sqrt().recip() } else { f64::INFINITY };
    // The kernel of AᵀA may be trivial, but 1 remains an upper bound of ‖B(b)⁻¹‖₂.
    (h(peak.min(mu_max)), 1.0)
}

fn params_distance(a: &TdvParams, b: &TdvParams) -> Result<f64> {
    if !a.same_layout(b) {
        return Err(TdvError::contract("parameter sets have different layouts"));
    }
    Ok(a.distance(b))
}

/// Evaluate both sides of the sensitivity inequality for every step.
pub fn sensitivity_bound(
    traj: &Trajectory,
    traj_tilde: &Trajectory,
    params: &TdvParams,
    params_tilde: &TdvParams,
) -> Result<SensitivityReport> {
    let (c, ct) = (&traj.config, &traj_tilde.config);
    if traj.depth() != traj_tilde.depth() || c.depth != ct.depth {
        return Err(TdvError::contract("trajectories have different depths"));
    }
    if c.operator.name() != ct.operator.name() || c.lambda != ct.lambda {
        return Err(TdvError::contract("trajectories use different data terms"));
    }
    if traj.states[0] != traj_tilde.states[0] || traj.z != traj_tilde.z {
        return Err(TdvError::contract("trajectories must share x_init and z"));
    }
    if traj.grads.len() != traj.depth() || traj_tilde.grads.len() != traj_tilde.depth() {
        return Err(TdvError::contract("trajectories must record regularizer gradients"));
    }
    let depth = traj.depth();
    let s_f = depth as f64;
    let (t, tt) = (c.stop_time, ct.stop_time);
    let dtheta = params_distance(params, params_tilde)?;

    let mut lipschitz: f64 = 0.0;
    for s in 0..depth {
        let dx = (&traj.states[s] - &traj_tilde.states[s]).norm();
        let den = (dx * dx + dtheta * dtheta).sqrt();
        if den > 0.0 {
            lipschitz = lipschitz.max((&traj.grads[s] - &traj_tilde.grads[s]).norm() / den);
        }
    }

    let identity = c.operator.is_identity();
    let mu_max = match &c.operator {
        LinearOperator::Identity => 1.0,
        op => {
            let shape = traj.states[0].batch_item(0).shape();
            let n = estimate_opnorm(op, shape, OPNORM_ITERS)? * OPNORM_MARGIN;
            n * n
        }
    };
    let (gap, inv) = inverse_norms(c.lambda * t / s_f, c.lambda * tt / s_f, mu_max, identity);
    let atz = data_drift(c, &traj.z)?.norm();

    let steps = (0..depth)
        .map(|s| {
            let xs = &traj.states[s];
            let dx = (xs - &traj_tilde.states[s]).norm();
            let joint = (dx * dx + dtheta * dtheta).sqrt();
            let lhs = (&traj.states[s + 1] - &traj_tilde.states[s + 1]).norm();
            let rhs = gap * (xs.norm() + t / s_f * atz + t / s_f * traj.grads[s].norm())
                + inv
                    * (dx
                        + (t - tt).abs() / s_f * atz
                        + (t - tt).abs() / s_f * traj_tilde.grads[s].norm()
                        + t / s_f * lipschitz * joint);
            SensitivityStep { step: s, lhs, rhs }
        })
        .collect();
    Ok(SensitivityReport {
        steps,
        lipschitz,
        inverse_gap: gap,
        inverse_norm: inv,
    })
}
