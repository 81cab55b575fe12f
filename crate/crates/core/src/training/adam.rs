use crate::flow::T_MAX;
use crate::regularizer::TdvParams;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    /// Learning rate of the stopping time; `None` reuses `lr`.
    #[serde(default)]
    pub lr_stop_time: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            lr_stop_time: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for θ and `T`.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: TdvParams,
    pub v: TdvParams,
    pub m_t: f64,
    pub v_t: f64,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &TdvParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            m_t: 0.0,
            v_t: 0.0,
            step: 0,
        }
    }
}

fn update(x: &mut f64, g: f64, m: &mut f64, v: &mut f64, lr: f64, cfg: &AdamConfig, c1: f64, c2: f64) {
    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
    let mh = *m / c1;
    let vh = *v / c2;
    *x -= lr * mh / (vh.sqrt() + cfg.eps);
}

/// One bias-corrected ADAM step on `(θ, T)`. Afterwards `K` is projected onto
/// the zero-mean subspace and `T` is clamped to `[0, T_MAX]`.
pub fn adam_step(
    params: &mut TdvParams,
    stop_time: &mut f64,
    grad: &TdvParams,
    grad_stop_time: f64,
    state: &mut AdamState,
    cfg: &AdamConfig,
) {
    state.step += 1;
    let k = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(k);
    let c2 = 1.0 - cfg.beta2.powi(k);
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grad.tensors()).zip(ms).zip(vs) {
        let (pd, gd) = (p.data_mut(), g.data());
        let (md, vd) = (m.data_mut(), v.data_mut());
        for i in 0..pd.len() {
            update(&mut pd[i], gd[i], &mut md[i], &mut vd[i], cfg.lr, cfg, c1, c2);
        }
    }
    params.project();
    let lr_t = cfg.lr_stop_time.unwrap_or(cfg.lr);
    update(stop_time, grad_stop_time, &mut state.m_t, &mut state.v_t, lr_t, cfg, c1, c2);
    *stop_time = stop_time.clamp(0.0, T_MAX);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regularizer::init_params;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = init_params(3, 1, 2, 1, 9.0);
        let before = p.clone();
        let mut t = 0.1;
        let mut st = AdamState::new(&p);
        let g = p.zeros_like();
        adam_step(&mut p, &mut t, &g, 0.0, &mut st, &AdamConfig::default());
        assert_eq!(p, before);
        assert_eq!(t, 0.1);
    }

    #[test]
    fn first_step_has_length_lr() {
        let mut p = init_params(3, 1, 2, 1, 9.0);
        let mut g = p.zeros_like();
        g.w.data_mut()[0] = 1.0;
        let w0 = p.w.data()[0];
        let mut t = 0.5;
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        adam_step(&mut p, &mut t, &g, 1.0, &mut st, &cfg);
        assert!(((w0 - p.w.data()[0]) - 0.01).abs() < 1e-9);
        assert!(((0.5 - t) - 0.01).abs() < 1e-9);
    }

    #[test]
    fn stop_time_is_clamped() {
        let mut p = init_params(3, 1, 2, 1, 9.0);
        let g = p.zeros_like();
        let mut t = 0.0;
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &mut t, &g, 1.0, &mut st, &AdamConfig::default());
        assert_eq!(t, 0.0);
    }
}
