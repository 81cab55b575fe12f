//! Helpers shared by the integration tests: seeded random fixtures and
//! finite-difference oracles.
#![allow(dead_code)]

use tdv_core::regularizer::{init_params, TdvParams};
use tdv_core::rng::CounterRng;
use tdv_core::Tensor;

pub fn rand_tensor(rng: &mut CounterRng, shape: [usize; 4]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.normal())
}

pub fn rand_uniform(rng: &mut CounterRng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.uniform_range(lo, hi))
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn rel_err_t(a: &Tensor, b: &Tensor) -> f64 {
    let d = (a - b).norm();
    d / a.norm().max(b.norm()).max(1e-300)
}

/// Random TDV parameters with a nonzero output weight and kernels scaled so
/// that the potential sees values in its curved region.
pub fn toy_params(seed: u64, features: usize, blocks: usize) -> TdvParams {
    let mut p = init_params(seed, 1, features, blocks, 9.0);
    let mut rng = CounterRng::derived(seed, 77);
    p.w = rand_tensor(&mut rng, p.w.shape());
    p
}

/// Central difference of `f` at `x` along `v`.
pub fn fd_directional<F: Fn(&Tensor) -> f64>(f: F, x: &Tensor, v: &Tensor, h: f64) -> f64 {
    let mut xp = x.clone();
    xp.axpy(h, v);
    let mut xm = x.clone();
    xm.axpy(-h, v);
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// Dense central-difference gradient of `f` at `x`.
pub fn fd_gradient<F: Fn(&Tensor) -> f64>(f: F, x: &Tensor, h: f64) -> Tensor {
    let mut g = x.zeros_like();
    for k in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[k] += h;
        let mut xm = x.clone();
        xm.data_mut()[k] -= h;
        g.data_mut()[k] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    g
}

/// Direct summation of a replicate-padded, optionally blurred, strided
/// cross-correlation. Written without reference to the library kernels.
pub fn conv_oracle(x: &Tensor, kernel: &Tensor, stride: usize, blur: bool) -> Tensor {
    let [bn, cin, h, w] = x.shape();
    let [cout, _, k, _] = kernel.shape();
    let binom = [1.0, 2.0, 1.0];
    let ke = if blur { k + 2 } else { k };
    let tap = |o: usize, c: usize, a: usize, d: usize| -> f64 {
        if !blur {
            return kernel.get([o, c, a, d]);
        }
        let mut s = 0.0;
        for u in 0..k {
            for v in 0..k {
                if a >= u && a - u < 3 && d >= v && d - v < 3 {
                    s += kernel.get([o, c, u, v]) * binom[a - u] * binom[d - v] / 16.0;
                }
            }
        }
        s
    };
    let half = (ke / 2) as i64;
    let clamp = |i: i64, n: usize| i.max(0).min(n as i64 - 1) as usize;
    Tensor::from_fn([bn, cout, h / stride, w / stride], |[b, o, i, j]| {
        let mut s = 0.0;
        for c in 0..cin {
            for a in 0..ke {
                for d in 0..ke {
                    let r = clamp((stride * i + a) as i64 - half, h);
                    let q = clamp((stride * j + d) as i64 - half, w);
                    s += tap(o, c, a, d) * x.get([b, c, r, q]);
                }
            }
        }
        s
    })
}

/// Transpose of [`conv_oracle`] written as an explicit scatter.
pub fn conv_adjoint_oracle(y: &Tensor, kernel: &Tensor, stride: usize, blur: bool) -> Tensor {
    let [bn, cout, ho, wo] = y.shape();
    let [_, cin, k, _] = kernel.shape();
    let (h, w) = (ho * stride, wo * stride);
    let binom = [1.0, 2.0, 1.0];
    let ke = if blur { k + 2 } else { k };
    let mut taps = vec![0.0; cout * cin * ke * ke];
    for o in 0..cout {
        for c in 0..cin {
            for u in 0..k {
                for v in 0..k {
                    let kv = kernel.get([o, c, u, v]);
                    if blur {
                        for p in 0..3 {
                            for q in 0..3 {
                                taps[((o * cin + c) * ke + u + p) * ke + v + q] += kv * binom[p] * binom[q] / 16.0;
                            }
                        }
                    } else {
                        taps[((o * cin + c) * ke + u) * ke + v] = kv;
                    }
                }
            }
        }
    }
    let half = (ke / 2) as i64;
    let clamp = |i: i64, n: usize| i.max(0).min(n as i64 - 1) as usize;
    let mut out = Tensor::zeros([bn, cin, h, w]);
    for b in 0..bn {
        for o in 0..cout {
            for i in 0..ho {
                for j in 0..wo {
                    let g = y.get([b, o, i, j]);
                    for c in 0..cin {
                        for a in 0..ke {
                            for d in 0..ke {
                                let r = clamp((stride * i + a) as i64 - half, h);
                                let q = clamp((stride * j + d) as i64 - half, w);
                                let t = taps[((o * cin + c) * ke + a) * ke + d];
                                let cur = out.get([b, c, r, q]);
                                out.set([b, c, r, q], cur + t * g);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}
