//! Analysis tools for trained regularizers and the solver used to transfer
//! them to other inverse problems.

mod agd;
mod eigen;
mod landscape;
mod metrics;

pub use agd::{agd_lipschitz_solve, transfer_reconstruct, AgdOutcome, AgdStep, L_LIMIT};
pub use eigen::{eigenpair_solve, hvp_lipschitz_estimate, tdv_eigenpair, Eigenpair, EigenConfig};
pub use landscape::{landscape, LandscapeGrid};
pub use metrics::{mean_psnr, psnr, psnr_csv_field, to_luma};
