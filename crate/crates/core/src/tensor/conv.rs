//! Replicate-padded 2-D cross-correlation with exact adjoints.
//!
//! A kernel of shape `(out, in, k, k)` with odd `k` is applied with `(k-1)/2`
//! pixels of edge-clamp padding on each side, so stride 1 keeps the spatial
//! size and stride `s` divides it by `s`. With `blur` set the learned kernel is
//! first convolved with the binomial filter `[1,2,1]ᵀ[1,2,1] / 16`, producing
//! a `(k+2) x (k+2)` effective kernel.

use super::Tensor;
use crate::error::{Result, TdvError};

/// One-dimensional binomial taps; the 2-D blur is their outer product.
pub const BINOMIAL_TAPS: [f64; 3] = [0.25, 0.5, 0.25];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Padding {
    /// Edge clamp.
    #[default]
    Replicate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    /// `(out_channels, in_channels, k, k)` with `k ∈ {1, 3}`.
    pub kernel: Tensor,
    pub stride: usize,
    pub padding: Padding,
    pub blur: bool,
}

impl ConvSpec {
    pub fn new(kernel: Tensor, stride: usize, blur: bool) -> Result<Self> {
        let spec = Self {
            kernel,
            stride,
            padding: Padding::Replicate,
            blur,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Stride 1, no blur.
    pub fn same(kernel: Tensor) -> Result<Self> {
        Self::new(kernel, 1, false)
    }

    /// Stride 2 with anti-aliasing blur.
    pub fn blurred_stride2(kernel: Tensor) -> Result<Self> {
        Self::new(kernel, 2, true)
    }

    pub fn validate(&self) -> Result<()> {
        validate_geometry(&self.kernel, self.stride, self.blur)
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }
}

pub(crate) fn validate_geometry(kernel: &Tensor, stride: usize, blur: bool) -> Result<()> {
    let [o, i, kh, kw] = kernel.shape();
    if o == 0 || i == 0 {
        return Err(TdvError::shape("kernel with zero channels"));
    }
    if kh != kw || !(kh == 1 || kh == 3) {
        return Err(TdvError::shape(format!(
            "kernel must be 1x1 or 3x3, got {kh}x{kw}"
        )));
    }
    if stride == 0 {
        return Err(TdvError::shape("stride must be positive"));
    }
    if blur && stride != 2 {
        return Err(TdvError::shape("blurred convolutions require stride 2"));
    }
    Ok(())
}

/// Learned kernel composed with the blur (or a copy when `blur` is off).
pub fn effective_kernel(kernel: &Tensor, blur: bool) -> Tensor {
    if !blur {
        return kernel.clone();
    }
    let [o, c, k, _] = kernel.shape();
    let ke = k + 2;
    let mut out = Tensor::zeros([o, c, ke, ke]);
    for oc in 0..o {
        for ic in 0..c {
            let src = kernel.plane(oc, ic);
            let dst = out.plane_mut(oc, ic);
            for u in 0..k {
                for v in 0..k {
                    let w = src[u * k + v];
                    for (p, bp) in BINOMIAL_TAPS.iter().enumerate() {
                        for (q, bq) in BINOMIAL_TAPS.iter().enumerate() {
                            dst[(u + p) * ke + v + q] += w * bp * bq;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Adjoint of [`effective_kernel`] with respect to the learned kernel.
fn effective_kernel_adjoint(grad: &Tensor, blur: bool) -> Tensor {
    if !blur {
        return grad.clone();
    }
    let [o, c, ke, _] = grad.shape();
    let k = ke - 2;
    let mut out = Tensor::zeros([o, c, k, k]);
    for oc in 0..o {
        for ic in 0..c {
            let src = grad.plane(oc, ic);
            let dst = out.plane_mut(oc, ic);
            for u in 0..k {
                for v in 0..k {
                    let mut acc = 0.0;
                    for (p, bp) in BINOMIAL_TAPS.iter().enumerate() {
                        for (q, bq) in BINOMIAL_TAPS.iter().enumerate() {
                            acc += src[(u + p) * ke + v + q] * bp * bq;
                        }
                    }
                    dst[u * k + v] = acc;
                }
            }
        }
    }
    out
}

/// Copy a plane into a `(h + 2p) x (w + 2p)` buffer with edge clamping.
fn pad_plane(src: &[f64], h: usize, w: usize, p: usize, buf: &mut [f64]) {
    let pw = w + 2 * p;
    for pi in 0..h + 2 * p {
        let r = pi.saturating_sub(p).min(h - 1);
        let row = &src[r * w..(r + 1) * w];
        let dst = &mut buf[pi * pw..(pi + 1) * pw];
        dst[..p].fill(row[0]);
        dst[p..p + w].copy_from_slice(row);
        dst[p + w..].fill(row[w - 1]);
    }
}

/// Adjoint of [`pad_plane`]: border cells are summed back onto the edge.
fn fold_plane(buf: &[f64], h: usize, w: usize, p: usize, dst: &mut [f64]) {
    let pw = w + 2 * p;
    for pi in 0..h + 2 * p {
        let r = pi.saturating_sub(p).min(h - 1);
        let src = &buf[pi * pw..(pi + 1) * pw];
        let row = &mut dst[r * w..(r + 1) * w];
        for (y, &v) in row.iter_mut().zip(&src[p..p + w]) {
            *y += v;
        }
        row[0] += src[..p].iter().sum::<f64>();
        row[w - 1] += src[p + w..].iter().sum::<f64>();
    }
}

fn check_spatial(h: usize, w: usize, stride: usize) -> Result<()> {
    if h == 0 || w == 0 {
        return Err(TdvError::shape("spatial dimensions must be at least 1"));
    }
    if h % stride != 0 || w % stride != 0 {
        return Err(TdvError::shape(format!(
            "spatial size {h}x{w} not divisible by stride {stride}"
        )));
    }
    Ok(())
}

pub(crate) fn correlate(x: &Tensor, ek: &Tensor, stride: usize) -> Tensor {
    let [bn, cin, h, w] = x.shape();
    let [cout, _, ke, _] = ek.shape();
    let p = ke / 2;
    let (ho, wo, pw) = (h / stride, w / stride, w + 2 * p);
    let mut padded = vec![0.0; (h + 2 * p) * pw];
    let mut out = Tensor::zeros([bn, cout, ho, wo]);
    for b in 0..bn {
        for c in 0..cin {
            pad_plane(x.plane(b, c), h, w, p, &mut padded);
            for o in 0..cout {
                let taps = ek.plane(o, c);
                let dst = out.plane_mut(b, o);
                for i in 0..ho {
                    let dst_row = &mut dst[i * wo..(i + 1) * wo];
                    for a in 0..ke {
                        let prow = &padded[(stride * i + a) * pw..(stride * i + a + 1) * pw];
                        for d in 0..ke {
                            let wv = taps[a * ke + d];
                            if stride == 1 {
                                for (y, &s) in dst_row.iter_mut().zip(&prow[d..d + wo]) {
                                    *y += wv * s;
                                }
                            } else {
                                for (j, y) in dst_row.iter_mut().enumerate() {
                                    *y += wv * prow[stride * j + d];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn correlate_adjoint(y: &Tensor, ek: &Tensor, stride: usize) -> Tensor {
    let [bn, _, ho, wo] = y.shape();
    let [cout, cin, ke, _] = ek.shape();
    let p = ke / 2;
    let (h, w) = (ho * stride, wo * stride);
    let pw = w + 2 * p;
    let mut acc = vec![0.0; (h + 2 * p) * pw];
    let mut out = Tensor::zeros([bn, cin, h, w]);
    for b in 0..bn {
        for c in 0..cin {
            acc.fill(0.0);
            for o in 0..cout {
                let src = y.plane(b, o);
                let taps = ek.plane(o, c);
                for i in 0..ho {
                    let src_row = &src[i * wo..(i + 1) * wo];
                    for a in 0..ke {
                        let prow = &mut acc[(stride * i + a) * pw..(stride * i + a + 1) * pw];
                        for d in 0..ke {
                            let wv = taps[a * ke + d];
                            if stride == 1 {
                                for (t, &g) in prow[d..d + wo].iter_mut().zip(src_row) {
                                    *t += wv * g;
                                }
                            } else {
                                for (j, &g) in src_row.iter().enumerate() {
                                    prow[stride * j + d] += wv * g;
                                }
                            }
                        }
                    }
                }
            }
            fold_plane(&acc, h, w, p, out.plane_mut(b, c));
        }
    }
    out
}

pub(crate) fn correlate_kernel_grad(x: &Tensor, y: &Tensor, ke: usize, stride: usize) -> Tensor {
    let [bn, cin, h, w] = x.shape();
    let [_, cout, ho, wo] = y.shape();
    let p = ke / 2;
    let pw = w + 2 * p;
    let mut padded = vec![0.0; (h + 2 * p) * pw];
    let mut out = Tensor::zeros([cout, cin, ke, ke]);
    for b in 0..bn {
        for c in 0..cin {
            pad_plane(x.plane(b, c), h, w, p, &mut padded);
            for o in 0..cout {
                let ys = y.plane(b, o);
                let dst = out.plane_mut(o, c);
                for a in 0..ke {
                    for d in 0..ke {
                        let mut s = 0.0;
                        for i in 0..ho {
                            let y_row = &ys[i * wo..(i + 1) * wo];
                            let prow = &padded[(stride * i + a) * pw..(stride * i + a + 1) * pw];
                            if stride == 1 {
                                s += y_row.iter().zip(&prow[d..d + wo]).map(|(g, v)| g * v).sum::<f64>();
                            } else {
                                s += y_row.iter().enumerate().map(|(j, g)| g * prow[stride * j + d]).sum::<f64>();
                            }
                        }
                        dst[a * ke + d] += s;
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv_forward(x: &Tensor, kernel: &Tensor, stride: usize, blur: bool) -> Result<Tensor> {
    validate_geometry(kernel, stride, blur)?;
    let [_, c, h, w] = x.shape();
    if c != kernel.shape()[1] {
        return Err(TdvError::shape(format!(
            "conv2d: input has {c} channels, kernel expects {}",
            kernel.shape()[1]
        )));
    }
    check_spatial(h, w, stride)?;
    Ok(correlate(x, &effective_kernel(kernel, blur), stride))
}

pub(crate) fn conv_adjoint(y: &Tensor, kernel: &Tensor, stride: usize, blur: bool) -> Result<Tensor> {
    validate_geometry(kernel, stride, blur)?;
    let [_, c, h, w] = y.shape();
    if c != kernel.shape()[0] {
        return Err(TdvError::shape(format!(
            "conv2d_adjoint: input has {c} channels, kernel produces {}",
            kernel.shape()[0]
        )));
    }
    if h == 0 || w == 0 {
        return Err(TdvError::shape("spatial dimensions must be at least 1"));
    }
    Ok(correlate_adjoint(y, &effective_kernel(kernel, blur), stride))
}

/// Gradient of `⟨conv(x, W), y⟩` with respect to `W`.
pub(crate) fn conv_kernel_grad(
    x: &Tensor,
    y: &Tensor,
    kernel_shape: [usize; 4],
    stride: usize,
    blur: bool,
) -> Result<Tensor> {
    let [o, c, k, _] = kernel_shape;
    let [xb, xc, h, w] = x.shape();
    let [yb, yc, ho, wo] = y.shape();
    if xb != yb || xc != c || yc != o || ho * stride != h || wo * stride != w {
        return Err(TdvError::shape(format!(
            "kernel gradient: input {:?} and cotangent {:?} incompatible with kernel {:?}",
            x.shape(),
            y.shape(),
            kernel_shape
        )));
    }
    let ke = if blur { k + 2 } else { k };
    let g = correlate_kernel_grad(x, y, ke, stride);
    Ok(effective_kernel_adjoint(&g, blur))
}

/// Replicate-padded convolution (cross-correlation) of `x` by `spec`.
pub fn conv2d(x: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    conv_forward(x, &spec.kernel, spec.stride, spec.blur)
}

/// Exact Euclidean adjoint of [`conv2d`] (a transposed convolution).
pub fn conv2d_adjoint(y: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    conv_adjoint(y, &spec.kernel, spec.stride, spec.blur)
}

/// Gradient of `⟨conv2d(x, spec), y⟩` with respect to `spec.kernel`.
pub fn conv2d_kernel_grad(x: &Tensor, y: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    conv_kernel_grad(x, y, spec.kernel.shape(), spec.stride, spec.blur)
}
