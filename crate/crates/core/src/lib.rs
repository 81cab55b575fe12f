//! Total deep variation (TDV) regularizer for linear inverse problems.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense 4-D tensors, replicate-padded convolutions with exact
//!   adjoints, and per-primitive vector-Jacobian / Jacobian-vector products.
//! - [`regularizer`]: the multi-scale TDV energy `R(x, θ)`, its gradient,
//!   Hessian-vector products and mixed parameter derivatives.
//! - [`operators`]: task operators (identity, bicubic downsampling, Cartesian
//!   MRI, parallel-beam Radon) and the conjugate-gradient solver.
//! - [`flow`]: the semi-implicit discretised gradient flow.
//! - [`training`]: losses, the discrete adjoint recursion, stopping-time
//!   gradients, ADAM and the sensitivity bound.
//! - [`analysis`]: nonlinear eigenpairs, landscapes, metrics and the
//!   accelerated gradient solver used for transfer reconstructions.
//! - [`data`]: seeded dataset synthesis and PGM image I/O.

pub mod analysis;
pub mod data;
pub mod error;
pub mod flow;
pub mod operators;
pub mod regularizer;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Result, TdvError};
pub use tensor::Tensor;
