//! Task operators `A`, their adjoints, and the linear solvers built on them.

mod bicubic;
mod cg;
mod mri;
mod radon;

pub use bicubic::{cubic_kernel, BicubicDown, CUBIC_A};
pub use cg::{cg_solve, cg_solve_observed, estimate_opnorm, CgOutcome};
pub use mri::{cartesian_mask, MriData, MriOperator};
pub use radon::RadonOperator;

use crate::error::Result;
use crate::tensor::Tensor;

/// A forward/adjoint pair over real tensors.
pub trait LinearMap {
    fn apply(&self, x: &Tensor) -> Result<Tensor>;
    fn adjoint(&self, y: &Tensor) -> Result<Tensor>;

    /// `AᵀA x`
    fn normal(&self, x: &Tensor) -> Result<Tensor> {
        self.adjoint(&self.apply(x)?)
    }
}

/// The data-term operators supported by the flow.
#[derive(Clone, Debug)]
pub enum LinearOperator {
    Identity,
    BicubicDown(BicubicDown),
    Mri(MriOperator),
    Radon(RadonOperator),
}

impl LinearOperator {
    pub fn name(&self) -> &'static str {
        match self {
            LinearOperator::Identity => "identity",
            LinearOperator::BicubicDown(_) => "bicubic_down",
            LinearOperator::Mri(_) => "mri",
            LinearOperator::Radon(_) => "radon",
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, LinearOperator::Identity)
    }

    /// Inner CG iterations used for `B(T)⁻¹` when this operator is the data
    /// term: 7 for super-resolution, 10 otherwise.
    pub fn default_cg_iters(&self) -> usize {
        match self {
            LinearOperator::BicubicDown(_) => 7,
            _ => 10,
        }
    }
}

impl LinearMap for LinearOperator {
    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            LinearOperator::Identity => Ok(x.clone()),
            LinearOperator::BicubicDown(op) => op.apply(x),
            LinearOperator::Mri(op) => op.apply(x),
            LinearOperator::Radon(op) => op.apply(x),
        }
    }

    fn adjoint(&self, y: &Tensor) -> Result<Tensor> {
        match self {
            LinearOperator::Identity => Ok(y.clone()),
            LinearOperator::BicubicDown(op) => op.adjoint(y),
            LinearOperator::Mri(op) => op.adjoint(y),
            LinearOperator::Radon(op) => op.adjoint(y),
        }
    }
}

pub fn op_apply(a: &LinearOperator, x: &Tensor) -> Result<Tensor> {
    a.apply(x)
}

pub fn op_adjoint(a: &LinearOperator, y: &Tensor) -> Result<Tensor> {
    a.adjoint(y)
}
