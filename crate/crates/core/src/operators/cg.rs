use super::LinearMap;
use crate::error::{Result, TdvError};
use crate::rng::CounterRng;
use crate::tensor::Tensor;

/// Result of a conjugate-gradient run.
#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub solution: Tensor,
    pub iterations: usize,
    /// `‖rhs − B x‖` of the returned iterate.
    pub residual_norm: f64,
}

/// Conjugate gradients for `B x = rhs` from `x = 0`. Stops after `iters`
/// iterations or once `‖r‖ ≤ tol·‖rhs‖`.
pub fn cg_solve<F>(apply_b: F, rhs: &Tensor, iters: usize, tol: f64) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    Ok(cg_solve_observed(apply_b, rhs, iters, tol, |_, _| {})?.solution)
}

/// [`cg_solve`] that reports every iterate to `observe(k, x_k)`.
pub fn cg_solve_observed<F, O>(
    apply_b: F,
    rhs: &Tensor,
    iters: usize,
    tol: f64,
    mut observe: O,
) -> Result<CgOutcome>
where
    F: Fn(&Tensor) -> Result<Tensor>,
    O: FnMut(usize, &Tensor),
{
    if iters == 0 {
        return Err(TdvError::contract("CG needs at least one iteration"));
    }
    let mut x = rhs.zeros_like();
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rr = r.norm_sq();
    let stop = tol * rhs.norm();
    let mut done = 0;
    while done < iters && rr.sqrt() > stop && rr > 0.0 {
        let bp = apply_b(&p)?;
        bp.check_same_shape(&p, "CG operator output")?;
        let pbp = p.dot(&bp);
        if !(pbp > 0.0) {
            return Err(TdvError::numerical(format!(
                "CG breakdown: pᵀBp = {pbp:e} at iteration {done}, operator is not positive definite"
            )));
        }
        let alpha = rr / pbp;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &bp);
        let rr_new = r.norm_sq();
        let beta = rr_new / rr;
        rr = rr_new;
        for (pi, ri) in p.data_mut().iter_mut().zip(r.data()) {
            *pi = ri + beta * *pi;
        }
        done += 1;
        observe(done, &x);
    }
    Ok(CgOutcome {
        solution: x,
        iterations: done,
        residual_norm: rr.sqrt(),
    })
}

/// Power iteration on `AᵀA` from a fixed pseudo-random start; returns the
/// estimate of `‖A‖₂`. The running estimate is kept monotone, so more
/// iterations never give a smaller value.
pub fn estimate_opnorm(a: &dyn LinearMap, shape: [usize; 4], iters: usize) -> Result<f64> {
    let mut rng = CounterRng::new(0x0505_2020);
    let mut v = Tensor::zeros(shape);
    for e in v.data_mut() {
        *e = rng.normal();
    }
    let n = v.norm();
    v.scale_mut(1.0 / n);
    let mut best: f64 = 0.0;
    for _ in 0..iters.max(1) {
        let mv = a.normal(&v)?;
        best = best.max(v.dot(&mv));
        let nm = mv.norm();
        if nm == 0.0 {
            break;
        }
        v = mv.scale(1.0 / nm);
    }
    Ok(best.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_in_one_step() {
        let rhs = Tensor::image(1, 3, &[1.0, -2.0, 0.5]).unwrap();
        let out = cg_solve_observed(|x| Ok(x.clone()), &rhs, 5, 1e-12, |_, _| {}).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.solution, rhs);
    }

    #[test]
    fn diagonal_system() {
        let d = Tensor::image(1, 2, &[2.0, 4.0]).unwrap();
        let rhs = Tensor::image(1, 2, &[2.0, 4.0]).unwrap();
        let x = cg_solve(|v| Ok(v.hadamard(&d)), &rhs, 2, 0.0).unwrap();
        assert!((x.data()[0] - 1.0).abs() < 1e-14 && (x.data()[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn indefinite_operator_breaks_down() {
        let rhs = Tensor::image(1, 2, &[1.0, 1.0]).unwrap();
        let err = cg_solve(|v| Ok(v.scale(-1.0)), &rhs, 3, 0.0).unwrap_err();
        assert!(matches!(err, TdvError::Numerical(_)));
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let rhs = Tensor::zeros([1, 1, 2, 2]);
        assert_eq!(cg_solve(|v| Ok(v.clone()), &rhs, 3, 1e-10).unwrap(), rhs);
    }
}
