use crate::error::{Result, TdvError};
use crate::tensor::Tensor;

/// `10·log₁₀(peak² / MSE)`; identical inputs give `f64::INFINITY`.
pub fn psnr(x: &Tensor, y: &Tensor, peak: f64) -> f64 {
    assert_eq!(x.shape(), y.shape(), "psnr: shape mismatch");
    let mse = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// Mean PSNR over paired images.
pub fn mean_psnr(xs: &[Tensor], ys: &[Tensor], peak: f64) -> f64 {
    xs.iter().zip(ys).map(|(x, y)| psnr(x, y, peak)).sum::<f64>() / xs.len() as f64
}

/// CSV cell and flag for a PSNR value: `(value, is_infinite)`. Infinite
/// values are written as `inf` with the flag set.
pub fn psnr_csv_field(v: f64) -> (String, u8) {
    if v.is_infinite() {
        ("inf".into(), 1)
    } else {
        (format!("{v:.6}"), 0)
    }
}

/// BT.601 luma of a `(B, 3, H, W)` RGB image in `[0, 1]`.
pub fn to_luma(rgb: &Tensor) -> Result<Tensor> {
    let [b, c, h, w] = rgb.shape();
    if c != 3 {
        return Err(TdvError::shape(format!("luma needs 3 channels, got {c}")));
    }
    let mut out = Tensor::zeros([b, 1, h, w]);
    for n in 0..b {
        let (r, g, bl) = (rgb.plane(n, 0), rgb.plane(n, 1), rgb.plane(n, 2));
        for (k, o) in out.plane_mut(n, 0).iter_mut().enumerate() {
            *o = 0.299 * r[k] + 0.587 * g[k] + 0.114 * bl[k];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let x = Tensor::zeros([1, 1, 2, 2]);
        assert_eq!(psnr(&x, &x, 1.0), f64::INFINITY);
        let y = Tensor::full([1, 1, 2, 2], 0.1);
        assert!((psnr(&x, &y, 1.0) - 20.0).abs() < 1e-12);
        let white = Tensor::full([1, 3, 1, 1], 1.0);
        assert!((to_luma(&white).unwrap().data()[0] - 1.0).abs() < 1e-15);
        assert_eq!(psnr_csv_field(f64::INFINITY), ("inf".to_string(), 1));
    }
}
