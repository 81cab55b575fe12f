use crate::error::{Result, TdvError};
use crate::regularizer::{tdv_r_padded, TdvParams};
use crate::tensor::Tensor;
use rayon::prelude::*;
use std::fmt::Write as _;

/// Values of `(ξ₁, ξ₂) ↦ r(ξ₁x + ξ₂n)_i` on a square grid over `[−1, 1]²`.
#[derive(Clone, Debug, PartialEq)]
pub struct LandscapeGrid {
    pub xi1: Vec<f64>,
    pub xi2: Vec<f64>,
    /// `values[a][b]` belongs to `(xi1[a], xi2[b])`.
    pub values: Vec<Vec<f64>>,
}

impl LandscapeGrid {
    /// Long-format CSV `xi1,xi2,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("xi1,xi2,value\n");
        for (a, &u) in self.xi1.iter().enumerate() {
            for (b, &v) in self.xi2.iter().enumerate() {
                let _ = writeln!(s, "{u:.6},{v:.6},{:.12e}", self.values[a][b]);
            }
        }
        s
    }
}

fn axis(res: usize) -> Vec<f64> {
    if res == 1 {
        return vec![0.0];
    }
    (0..res).map(|k| -1.0 + 2.0 * k as f64 / (res - 1) as f64).collect()
}

/// Evaluate the landscape at pixel `(row, col)` of single images `x` and `n`.
pub fn landscape(
    x: &Tensor,
    n: &Tensor,
    pixel: (usize, usize),
    grid_res: usize,
    params: &TdvParams,
) -> Result<LandscapeGrid> {
    x.check_same_shape(n, "landscape noise")?;
    let [b, _, h, w] = x.shape();
    if b != 1 {
        return Err(TdvError::shape("landscape expects a single image"));
    }
    if pixel.0 >= h || pixel.1 >= w {
        return Err(TdvError::shape(format!("pixel {pixel:?} outside {h}x{w}")));
    }
    if grid_res == 0 {
        return Err(TdvError::shape("grid resolution must be positive"));
    }
    let xs = axis(grid_res);
    let rows: Vec<Result<Vec<f64>>> = xs
        .par_iter()
        .map(|&u| {
            let batch: Vec<Tensor> = xs
                .iter()
                .map(|&v| {
                    let mut img = x.scale(u);
                    img.axpy(v, n);
                    img
                })
                .collect();
            let r = tdv_r_padded(&Tensor::stack(&batch)?, params)?;
            Ok((0..grid_res).map(|k| r.get([k, 0, pixel.0, pixel.1])).collect())
        })
        .collect();
    Ok(LandscapeGrid {
        xi1: xs.clone(),
        xi2: xs,
        values: rows.into_iter().collect::<Result<_>>()?,
    })
}
