use super::LinearMap;
use crate::error::{Result, TdvError};
use crate::rng::CounterRng;
use crate::tensor::Tensor;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Multi-coil Cartesian MRI: `x ↦ {M F (cᵢ x)}ᵢ` with an orthonormal 2-D DFT.
///
/// Images are real `(B, 1, H, W)`. Complex quantities are stored as channel
/// pairs: coil maps as `(1, 2·N_C, H, W)` and k-space as `(B, 2·N_C, H, W)`
/// with real part in channel `2i` and imaginary part in `2i + 1`.
#[derive(Clone, Debug)]
pub struct MriOperator {
    mask: Tensor,
    coils: Tensor,
}

/// An MRI operator together with its measured k-space data.
#[derive(Clone, Debug)]
pub struct MriData {
    pub operator: MriOperator,
    pub measurements: Tensor,
}

impl MriOperator {
    pub fn new(mask: Tensor, coils: Tensor) -> Result<Self> {
        let [mb, mc, h, w] = mask.shape();
        if mb != 1 || mc != 1 {
            return Err(TdvError::shape(format!("mask must be (1,1,H,W), got {:?}", mask.shape())));
        }
        if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(TdvError::contract("MRI mask entries must be 0 or 1"));
        }
        let [cb, cc, ch, cw] = coils.shape();
        if cb != 1 || cc == 0 || cc % 2 != 0 || (ch, cw) != (h, w) {
            return Err(TdvError::shape(format!(
                "coil maps must be (1, 2·N_C, {h}, {w}), got {:?}",
                coils.shape()
            )));
        }
        if !coils.is_finite() {
            return Err(TdvError::contract("coil maps must be finite"));
        }
        Ok(Self { mask, coils })
    }

    /// Single unit coil.
    pub fn single_coil(mask: Tensor) -> Result<Self> {
        let [_, _, h, w] = mask.shape();
        let coils = Tensor::from_fn([1, 2, h, w], |[_, c, _, _]| if c == 0 { 1.0 } else { 0.0 });
        Self::new(mask, coils)
    }

    pub fn coil_count(&self) -> usize {
        self.coils.channels() / 2
    }

    pub fn mask(&self) -> &Tensor {
        &self.mask
    }

    pub fn coils(&self) -> &Tensor {
        &self.coils
    }

    fn dims(&self) -> (usize, usize) {
        (self.mask.height(), self.mask.width())
    }

    fn coil(&self, i: usize, k: usize) -> Complex64 {
        Complex64::new(self.coils.plane(0, 2 * i)[k], self.coils.plane(0, 2 * i + 1)[k])
    }
}

/// Orthonormal 2-D DFT in place (row-major `h x w`).
fn fft2(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    for r in buf.chunks_exact_mut(w) {
        row.process(r);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    for j in 0..w {
        for i in 0..h {
            column[i] = buf[i * w + j];
        }
        col.process(&mut column);
        for i in 0..h {
            buf[i * w + j] = column[i];
        }
    }
    let s = 1.0 / ((h * w) as f64).sqrt();
    for v in buf.iter_mut() {
        *v *= s;
    }
}

impl LinearMap for MriOperator {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let (h, w) = self.dims();
        let [b, c, xh, xw] = x.shape();
        if c != 1 || (xh, xw) != (h, w) {
            return Err(TdvError::shape(format!(
                "MRI operator expects (B,1,{h},{w}), got {:?}",
                x.shape()
            )));
        }
        let nc = self.coil_count();
        let mask = self.mask.data();
        let mut out = Tensor::zeros([b, 2 * nc, h, w]);
        let mut buf = vec![Complex64::new(0.0, 0.0); h * w];
        for n in 0..b {
            let img = x.plane(n, 0);
            for i in 0..nc {
                for k in 0..h * w {
                    buf[k] = self.coil(i, k) * img[k];
                }
                fft2(&mut buf, h, w, false);
                for k in 0..h * w {
                    buf[k] *= mask[k];
                }
                let re: Vec<f64> = buf.iter().map(|v| v.re).collect();
                out.plane_mut(n, 2 * i).copy_from_slice(&re);
                let im: Vec<f64> = buf.iter().map(|v| v.im).collect();
                out.plane_mut(n, 2 * i + 1).copy_from_slice(&im);
            }
        }
        Ok(out)
    }

    fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        let (h, w) = self.dims();
        let nc = self.coil_count();
        let [b, c, yh, yw] = y.shape();
        if c != 2 * nc || (yh, yw) != (h, w) {
            return Err(TdvError::shape(format!(
                "MRI k-space must be (B,{},{h},{w}), got {:?}",
                2 * nc,
                y.shape()
            )));
        }
        let mask = self.mask.data();
        let mut out = Tensor::zeros([b, 1, h, w]);
        let mut buf = vec![Complex64::new(0.0, 0.0); h * w];
        for n in 0..b {
            for i in 0..nc {
                let (re, im) = (y.plane(n, 2 * i), y.plane(n, 2 * i + 1));
                for k in 0..h * w {
                    buf[k] = Complex64::new(re[k], im[k]) * mask[k];
                }
                fft2(&mut buf, h, w, true);
                let dst = out.plane_mut(n, 0);
                for k in 0..h * w {
                    dst[k] += (self.coil(i, k).conj() * buf[k]).re;
                }
            }
        }
        Ok(out)
    }
}

/// Seeded Cartesian line mask: the `center` lowest-frequency rows are always
/// sampled, other rows with probability `1/acceleration`. Frequencies use the
/// unshifted DFT layout (row 0 is DC).
pub fn cartesian_mask(h: usize, w: usize, acceleration: f64, center: usize, seed: u64) -> Tensor {
    let mut rng = CounterRng::new(seed);
    let mut mask = Tensor::zeros([1, 1, h, w]);
    for i in 0..h {
        let freq = i.min(h - i);
        let keep = 2 * freq < center.max(1) || rng.uniform() < 1.0 / acceleration;
        if keep {
            for j in 0..w {
                mask.set([0, 0, i, j], 1.0);
            }
        }
    }
    mask
}
