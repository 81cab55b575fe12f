//! Training of `(θ, T)` through the discrete adjoint of the flow.

mod adam;
mod adjoint;
mod loss;
mod sensitivity;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use adjoint::{
    adjoint_and_gradients, adjoint_recursion, adjoint_recursion_normalized, objective,
    optimality_residual, param_gradients, stop_time_gradient, AdjointTrajectory, ControlGradients,
    ResidualVariant,
};
pub use loss::{loss_eval, loss_per_sample, LossSpec};
pub use sensitivity::{sensitivity_bound, SensitivityReport, SensitivityStep};
pub use train::{
    batch_gradients, dataset_objective, history_csv, train, train_from, write_history_csv, Dataset,
    Sample, StepRecord, TrainConfig, TrainOutcome,
};
