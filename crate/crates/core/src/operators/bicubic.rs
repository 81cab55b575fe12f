use super::LinearMap;
use crate::error::{Result, TdvError};
use crate::tensor::Tensor;

/// Free parameter of the cubic convolution kernel.
pub const CUBIC_A: f64 = -0.5;

/// Keys' cubic convolution kernel with parameter [`CUBIC_A`], support `(-2, 2)`.
pub fn cubic_kernel(t: f64) -> f64 {
    let a = CUBIC_A;
    let t = t.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Antialiased bicubic downsampling by an integer factor `γ`.
///
/// Output pixel `i` is centred at input coordinate `iγ + (γ−1)/2`; the cubic
/// kernel is stretched by `γ`, giving `4γ` taps per axis, and the taps are
/// normalised to sum to one. Out-of-range taps clamp to the border.
#[derive(Clone, Debug)]
pub struct BicubicDown {
    factor: usize,
    /// Offset of the first tap relative to `iγ`.
    first: isize,
    weights: Vec<f64>,
}

impl BicubicDown {
    pub fn new(factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(TdvError::contract("downsampling factor must be positive"));
        }
        let g = factor as f64;
        let centre = (g - 1.0) / 2.0;
        let first = (centre - 2.0 * g).ceil() as isize;
        let last = (centre + 2.0 * g).floor() as isize;
        let mut weights: Vec<f64> = (first..=last)
            .map(|d| cubic_kernel((d as f64 - centre) / g))
            .collect();
        let sum: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= sum;
        }
        Ok(Self {
            factor,
            first,
            weights,
        })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    /// Normalised 1-D taps, first tap at offset [`BicubicDown::tap_offset`].
    pub fn taps(&self) -> &[f64] {
        &self.weights
    }

    pub fn tap_offset(&self) -> isize {
        self.first
    }

    fn check(&self, h: usize, w: usize) -> Result<()> {
        if h == 0 || w == 0 || h % self.factor != 0 || w % self.factor != 0 {
            return Err(TdvError::shape(format!(
                "{h}x{w} is not divisible by the downsampling factor {}",
                self.factor
            )));
        }
        Ok(())
    }

    /// Clamped source indices for output index `i` along an axis of length `n`.
    fn sources(&self, i: usize, n: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let base = (i * self.factor) as isize + self.first;
        self.weights
            .iter()
            .enumerate()
            .map(move |(k, &w)| ((base + k as isize).clamp(0, n as isize - 1) as usize, w))
    }
}

impl LinearMap for BicubicDown {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let [b, c, h, w] = x.shape();
        self.check(h, w)?;
        let (ho, wo) = (h / self.factor, w / self.factor);
        let mut out = Tensor::zeros([b, c, ho, wo]);
        for n in 0..b {
            for ch in 0..c {
                let src = x.plane(n, ch);
                let dst = out.plane_mut(n, ch);
                for i in 0..ho {
                    for j in 0..wo {
                        let mut acc = 0.0;
                        for (si, wi) in self.sources(i, h) {
                            for (sj, wj) in self.sources(j, w) {
                                acc += wi * wj * src[si * w + sj];
                            }
                        }
                        dst[i * wo + j] = acc;
                    }
                }
            }
        }
        Ok(out)
    }

    fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        let [b, c, ho, wo] = y.shape();
        let (h, w) = (ho * self.factor, wo * self.factor);
        self.check(h, w)?;
        let mut out = Tensor::zeros([b, c, h, w]);
        for n in 0..b {
            for ch in 0..c {
                let src = y.plane(n, ch);
                let dst = out.plane_mut(n, ch);
                for i in 0..ho {
                    for j in 0..wo {
                        let v = src[i * wo + j];
                        for (si, wi) in self.sources(i, h) {
                            for (sj, wj) in self.sources(j, w) {
                                dst[si * w + sj] += wi * wj * v;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}
