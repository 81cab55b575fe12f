//! Dense `batch x channels x height x width` tensors of `f64`.

mod conv;
pub mod diff;
pub mod io;

pub use conv::{
    conv2d, conv2d_adjoint, conv2d_kernel_grad, effective_kernel, ConvSpec, Padding, BINOMIAL_TAPS,
};
pub use diff::{jvp, vjp, Dual, OpTag, Primitive};

use crate::error::{Result, TdvError};
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

/// Row-major 4-D array. `data.len()` always equals the product of `shape`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: [usize; 4], value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(TdvError::shape(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut([usize; 4]) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for b in 0..shape[0] {
            for c in 0..shape[1] {
                for i in 0..shape[2] {
                    for j in 0..shape[3] {
                        data.push(f([b, c, i, j]));
                    }
                }
            }
        }
        Self { shape, data }
    }

    /// Single-image, single-channel tensor from a row-major `h x w` slice.
    pub fn image(h: usize, w: usize, pixels: &[f64]) -> Result<Self> {
        Self::from_vec([1, 1, h, w], pixels.to_vec())
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape)
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    fn offset(&self, idx: [usize; 4]) -> usize {
        let [_, c, h, w] = self.shape;
        ((idx[0] * c + idx[1]) * h + idx[2]) * w + idx[3]
    }

    pub fn get(&self, idx: [usize; 4]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: [usize; 4], value: f64) {
        let o = self.offset(idx);
        self.data[o] = value;
    }

    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    pub fn plane(&self, b: usize, c: usize) -> &[f64] {
        let n = self.plane_len();
        let start = (b * self.shape[1] + c) * n;
        &self.data[start..start + n]
    }

    pub fn plane_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        let start = (b * self.shape[1] + c) * n;
        &mut self.data[start..start + n]
    }

    pub fn check_same_shape(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(TdvError::shape(format!(
                "{what}: shape {:?} does not match {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "dot: shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.shape, other.shape, "zip_map: shape mismatch");
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &Tensor) {
        assert_eq!(self.shape, x.shape, "axpy: shape mismatch");
        for (s, v) in self.data.iter_mut().zip(&x.data) {
            *s += alpha * v;
        }
    }

    pub fn scale(&self, alpha: f64) -> Tensor {
        self.map(|v| alpha * v)
    }

    pub fn scale_mut(&mut self, alpha: f64) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.map(|v| v + c)
    }

    pub fn hadamard(&self, other: &Tensor) -> Tensor {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn reshape(&self, shape: [usize; 4]) -> Result<Tensor> {
        Tensor::from_vec(shape, self.data.clone())
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let [ba, ca, h, w] = a.shape;
        let [bb, cb, hb, wb] = b.shape;
        if ba != bb || h != hb || w != wb {
            return Err(TdvError::shape(format!(
                "concat: {:?} and {:?} differ outside the channel axis",
                a.shape, b.shape
            )));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(a.len() + b.len());
        for n in 0..ba {
            data.extend_from_slice(&a.data[n * ca * plane..(n + 1) * ca * plane]);
            data.extend_from_slice(&b.data[n * cb * plane..(n + 1) * cb * plane]);
        }
        Ok(Tensor {
            shape: [ba, ca + cb, h, w],
            data,
        })
    }

    /// Inverse of [`Tensor::concat_channels`]: first `at` channels and the rest.
    pub fn split_channels(&self, at: usize) -> Result<(Tensor, Tensor)> {
        let [bn, c, h, w] = self.shape;
        if at > c {
            return Err(TdvError::shape(format!(
                "split at channel {at} of {c}"
            )));
        }
        let plane = h * w;
        let mut first = Vec::with_capacity(bn * at * plane);
        let mut second = Vec::with_capacity(bn * (c - at) * plane);
        for n in 0..bn {
            let base = n * c * plane;
            first.extend_from_slice(&self.data[base..base + at * plane]);
            second.extend_from_slice(&self.data[base + at * plane..base + c * plane]);
        }
        Ok((
            Tensor {
                shape: [bn, at, h, w],
                data: first,
            },
            Tensor {
                shape: [bn, c - at, h, w],
                data: second,
            },
        ))
    }

    /// The `b`-th batch entry as a tensor with batch size one.
    pub fn batch_item(&self, b: usize) -> Tensor {
        let [_, c, h, w] = self.shape;
        let n = c * h * w;
        Tensor {
            shape: [1, c, h, w],
            data: self.data[b * n..(b + 1) * n].to_vec(),
        }
    }

    /// Stack tensors along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| TdvError::shape("cannot stack an empty list"))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::new();
        let mut batch = 0;
        for t in items {
            if t.shape[1..] != [c, h, w] {
                return Err(TdvError::shape(format!(
                    "stack: {:?} incompatible with {:?}",
                    t.shape, first.shape
                )));
            }
            batch += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: [batch, c, h, w],
            data,
        })
    }

    /// Extend to `h x w` (bottom/right) by repeating the last row/column.
    pub fn pad_replicate(&self, h: usize, w: usize) -> Result<Tensor> {
        let [bn, c, h0, w0] = self.shape;
        if h < h0 || w < w0 || h0 == 0 || w0 == 0 {
            return Err(TdvError::shape(format!(
                "cannot replicate-pad {h0}x{w0} to {h}x{w}"
            )));
        }
        let mut out = Tensor::zeros([bn, c, h, w]);
        for n in 0..bn {
            for ch in 0..c {
                let src = self.plane(n, ch);
                let dst = out.plane_mut(n, ch);
                for i in 0..h {
                    let si = i.min(h0 - 1);
                    for j in 0..w {
                        dst[i * w + j] = src[si * w0 + j.min(w0 - 1)];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Exact adjoint of [`Tensor::pad_replicate`] back to `h x w`.
    pub fn pad_replicate_adjoint(&self, h: usize, w: usize) -> Result<Tensor> {
        let [bn, c, hp, wp] = self.shape;
        if h > hp || w > wp || h == 0 || w == 0 {
            return Err(TdvError::shape(format!(
                "cannot fold {hp}x{wp} back to {h}x{w}"
            )));
        }
        let mut out = Tensor::zeros([bn, c, h, w]);
        for n in 0..bn {
            for ch in 0..c {
                let src = self.plane(n, ch);
                let dst = out.plane_mut(n, ch);
                for i in 0..hp {
                    let di = i.min(h - 1);
                    for j in 0..wp {
                        dst[di * w + j.min(w - 1)] += src[i * wp + j];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Top-left `h x w` window.
    pub fn crop(&self, h: usize, w: usize) -> Result<Tensor> {
        let [bn, c, h0, w0] = self.shape;
        if h > h0 || w > w0 {
            return Err(TdvError::shape(format!("cannot crop {h0}x{w0} to {h}x{w}")));
        }
        let mut out = Tensor::zeros([bn, c, h, w]);
        for n in 0..bn {
            for ch in 0..c {
                let src = self.plane(n, ch);
                let dst = out.plane_mut(n, ch);
                for i in 0..h {
                    dst[i * w..(i + 1) * w].copy_from_slice(&src[i * w0..i * w0 + w]);
                }
            }
        }
        Ok(out)
    }
}

impl Add<&Tensor> for &Tensor {
    type Output = Tensor;
    fn add(self, rhs: &Tensor) -> Tensor {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub<&Tensor> for &Tensor {
    type Output = Tensor;
    fn sub(self, rhs: &Tensor) -> Tensor {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul<f64> for &Tensor {
    type Output = Tensor;
    fn mul(self, rhs: f64) -> Tensor {
        self.scale(rhs)
    }
}

impl Neg for &Tensor {
    type Output = Tensor;
    fn neg(self) -> Tensor {
        self.map(|v| -v)
    }
}

impl AddAssign<&Tensor> for Tensor {
    fn add_assign(&mut self, rhs: &Tensor) {
        self.axpy(1.0, rhs);
    }
}

impl SubAssign<&Tensor> for Tensor {
    fn sub_assign(&mut self, rhs: &Tensor) {
        self.axpy(-1.0, rhs);
    }
}
