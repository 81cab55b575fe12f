//! The total deep variation `R(x, θ) = Σᵢ r(x, θ)ᵢ` with `r = wᵀ N(K x)`.
//!
//! `K` is a zero-mean `3x3` analysis convolution, `N` a chain of `l`
//! three-scale macro-blocks built from residual micro-blocks
//! `x + K₂ φ(K₁ x)`, and `w` a `1x1` contraction of the `m` feature channels.

pub mod checkpoint;
mod graph;
mod network;

pub use network::{
    macro_block, macro_block_vjp, micro_block, micro_block_vjp, padded_dims, tdv_derivatives,
    tdv_derivatives_padded, tdv_energy, tdv_energy_padded, tdv_grad, tdv_grad_padded, tdv_hvp,
    tdv_r, tdv_r_padded, Derivatives, MacroOutput,
};

use crate::rng::CounterRng;
use crate::tensor::Tensor;

/// Log-student-t potential `φ(v) = log(1 + ν v²) / (2ν)` with its first and
/// second derivatives.
pub fn phi(v: f64, nu: f64) -> (f64, f64, f64) {
    let s = nu * v * v;
    let denom = 1.0 + s;
    (s.ln_1p() / (2.0 * nu), v / denom, (1.0 - s) / (denom * denom))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PotentialFn {
    pub nu: f64,
}

impl PotentialFn {
    pub fn value(&self, v: f64) -> f64 {
        phi(v, self.nu).0
    }

    pub fn derivative(&self, v: f64) -> f64 {
        phi(v, self.nu).1
    }

    pub fn second_derivative(&self, v: f64) -> f64 {
        phi(v, self.nu).2
    }
}

/// Kernels of one residual micro-block (`m → m`, `3x3`, stride 1).
#[derive(Clone, Debug, PartialEq)]
pub struct MicroParams {
    pub k1: Tensor,
    pub k2: Tensor,
}

/// Kernels of one macro-block.
///
/// `micro[0..3]` run on scales 1..3 of the encoder, `micro[3]` and
/// `micro[4]` on scales 2 and 1 of the decoder. `down[s]` maps scale `s+1`
/// to `s+2`, `up[s]` maps scale `s+2` back to `s+1`, and `fuse[s]` merges the
/// `2m` concatenated channels at scale `s+1`.
#[derive(Clone, Debug, PartialEq)]
pub struct MacroParams {
    pub micro: [MicroParams; 5],
    pub down: [Tensor; 2],
    pub up: [Tensor; 2],
    pub fuse: [Tensor; 2],
}

impl MacroParams {
    fn zeros(m: usize) -> Self {
        let k3 = || Tensor::zeros([m, m, 3, 3]);
        let mp = || MicroParams { k1: k3(), k2: k3() };
        Self {
            micro: [mp(), mp(), mp(), mp(), mp()],
            down: [k3(), k3()],
            up: [k3(), k3()],
            fuse: [Tensor::zeros([m, 2 * m, 1, 1]), Tensor::zeros([m, 2 * m, 1, 1])],
        }
    }

    /// Kernels in canonical order (16 tensors).
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(16);
        for mi in &self.micro {
            out.push(&mi.k1);
            out.push(&mi.k2);
        }
        out.extend(self.down.iter());
        out.extend(self.up.iter());
        out.extend(self.fuse.iter());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(16);
        for mi in &mut self.micro {
            out.push(&mut mi.k1);
            out.push(&mut mi.k2);
        }
        out.extend(self.down.iter_mut());
        out.extend(self.up.iter_mut());
        out.extend(self.fuse.iter_mut());
        out
    }

    fn names(prefix: &str) -> Vec<String> {
        let mut out = Vec::with_capacity(16);
        for j in 0..5 {
            out.push(format!("{prefix}.micro{j}.k1"));
            out.push(format!("{prefix}.micro{j}.k2"));
        }
        for s in 0..2 {
            out.push(format!("{prefix}.down{s}"));
        }
        for s in 0..2 {
            out.push(format!("{prefix}.up{s}"));
        }
        for s in 0..2 {
            out.push(format!("{prefix}.fuse{s}"));
        }
        out
    }
}

/// All trainable parameters θ of a TDV regularizer. The same layout is used
/// for gradients with respect to θ.
#[derive(Clone, Debug, PartialEq)]
pub struct TdvParams {
    /// Image channels `C`.
    pub channels: usize,
    /// Feature width `m`.
    pub features: usize,
    /// Potential shape `ν` (not trained).
    pub nu: f64,
    /// Analysis kernel `(m, C, 3, 3)`, zero mean per output channel.
    pub k: Tensor,
    pub blocks: Vec<MacroParams>,
    /// Output weights as a `(1, m, 1, 1)` kernel.
    pub w: Tensor,
}

impl TdvParams {
    pub fn zeros(channels: usize, features: usize, blocks: usize, nu: f64) -> Self {
        Self {
            channels,
            features,
            nu,
            k: Tensor::zeros([features, channels, 3, 3]),
            blocks: (0..blocks).map(|_| MacroParams::zeros(features)).collect(),
            w: Tensor::zeros([1, features, 1, 1]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.channels, self.features, self.blocks.len(), self.nu)
    }

    pub fn macro_count(&self) -> usize {
        self.blocks.len()
    }

    /// Kernels in canonical order: `k`, every macro-block, `w`.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.k];
        for b in &self.blocks {
            out.extend(b.tensors());
        }
        out.push(&self.w);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.k];
        for b in &mut self.blocks {
            out.extend(b.tensors_mut());
        }
        out.push(&mut self.w);
        out
    }

    /// Names matching [`TdvParams::tensors`].
    pub fn names(&self) -> Vec<String> {
        let mut out = vec!["k".to_string()];
        for i in 0..self.blocks.len() {
            out.extend(MacroParams::names(&format!("macro{i}")));
        }
        out.push("w".to_string());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn same_layout(&self, other: &TdvParams) -> bool {
        self.blocks.len() == other.blocks.len()
            && self
                .tensors()
                .iter()
                .zip(other.tensors())
                .all(|(a, b)| a.shape() == b.shape())
    }

    pub fn dot(&self, other: &TdvParams) -> f64 {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .map(|(a, b)| a.dot(b))
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &TdvParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.axpy(alpha, b);
        }
    }

    pub fn scale(&self, alpha: f64) -> TdvParams {
        let mut out = self.clone();
        for t in out.tensors_mut() {
            t.scale_mut(alpha);
        }
        out
    }

    /// Euclidean distance between two parameter sets of equal layout.
    pub fn distance(&self, other: &TdvParams) -> f64 {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .map(|(a, b)| (*a - b).norm_sq())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// Replace `K` by its zero-mean projection.
    pub fn project(&mut self) {
        self.k = project_zero_mean(&self.k);
    }
}

/// Exact scalar count of trainable parameters of a TDV with `C` channels,
/// `m` features and `l` macro-blocks: `9mC + l·130m² + m`.
pub fn parameter_count_for(channels: usize, features: usize, blocks: usize) -> usize {
    let m = features;
    let per_block = 5 * 2 * 9 * m * m + 2 * 9 * m * m + 2 * 9 * m * m + 2 * 2 * m * m;
    9 * m * channels + blocks * per_block + m
}

pub fn parameter_count(params: &TdvParams) -> usize {
    params.parameter_count()
}

/// Subtract, per output channel, the mean over all taps and input channels.
/// Channels whose mean is already zero up to rounding are left untouched.
pub fn project_zero_mean(k: &Tensor) -> Tensor {
    let [o, c, kh, kw] = k.shape();
    let per = c * kh * kw;
    let mut out = k.clone();
    for oc in 0..o {
        let chunk = &mut out.data_mut()[oc * per..(oc + 1) * per];
        let mean = chunk.iter().sum::<f64>() / per as f64;
        let mean_abs = chunk.iter().map(|v| v.abs()).sum::<f64>() / per as f64;
        // A mean at the rounding level of the summation counts as zero, so a
        // projected kernel is a fixed point bit for bit.
        if mean.abs() <= 2.0 * per as f64 * f64::EPSILON * mean_abs {
            continue;
        }
        for v in chunk.iter_mut() {
            *v -= mean;
        }
    }
    out
}

/// Seeded initialization: every kernel entry is drawn from `N(0, 2/fan_in)`
/// (`fan_in = in_channels · kh · kw`) in canonical order, then `K` is
/// projected onto the zero-mean subspace.
pub fn init_params(seed: u64, channels: usize, features: usize, blocks: usize, nu: f64) -> TdvParams {
    assert!(features >= 1 && blocks >= 1 && channels >= 1, "C, m, l must be positive");
    let mut params = TdvParams::zeros(channels, features, blocks, nu);
    let mut rng = CounterRng::new(seed);
    for t in params.tensors_mut() {
        let [_, i, kh, kw] = t.shape();
        let std = (2.0 / (i * kh * kw) as f64).sqrt();
        for v in t.data_mut() {
            *v = std * rng.normal();
        }
    }
    params.project();
    params
}
