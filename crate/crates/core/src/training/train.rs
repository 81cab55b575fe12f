use super::adam::{adam_step, AdamConfig, AdamState};
use super::adjoint::{adjoint_and_gradients, objective};
use super::loss::LossSpec;
use crate::error::{Result, TdvError};
use crate::flow::{run_flow, FlowConfig, T_MAX};
use crate::operators::LinearOperator;
use crate::regularizer::{init_params, TdvParams};
use crate::rng::CounterRng;
use crate::tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// One training triplet; every tensor has batch size one.
#[derive(Clone, Debug)]
pub struct Sample {
    pub x_init: Tensor,
    pub y: Tensor,
    pub z: Tensor,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub operator: LinearOperator,
    pub lambda: f64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// The first `count` samples.
    pub fn subset(&self, count: usize) -> Dataset {
        Dataset {
            samples: self.samples[..count.min(self.len())].to_vec(),
            ..self.clone()
        }
    }

    pub fn channels(&self) -> usize {
        self.samples.first().map_or(1, |s| s.y.channels())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// Side length of the square training patches (informational; the
    /// dataset already holds patches).
    pub patch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Flow depth `S`.
    pub depth: usize,
    pub loss: LossSpec,
    pub init_stop_time: f64,
    pub features: usize,
    pub blocks: usize,
    pub nu: f64,
    /// Overrides the operator's default inner CG iteration count.
    #[serde(default)]
    pub cg_iters: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 8,
            patch_size: 16,
            steps: 500,
            seed: 0,
            depth: 5,
            loss: LossSpec::SquaredL2,
            init_stop_time: 0.05,
            features: 8,
            blocks: 1,
            nu: 9.0,
            cg_iters: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        if !(a.lr > 0.0) || a.lr_stop_time.is_some_and(|l| !(l >= 0.0)) {
            return Err(TdvError::contract("learning rates must be positive"));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(TdvError::contract("ADAM needs 0 ≤ β₁, β₂ < 1 and ε > 0"));
        }
        if self.batch_size == 0 || self.depth == 0 || self.features == 0 || self.blocks == 0 {
            return Err(TdvError::contract("batch size, depth, m and l must be positive"));
        }
        if !(0.0..=T_MAX).contains(&self.init_stop_time) {
            return Err(TdvError::contract("initial stopping time outside [0, T_MAX]"));
        }
        if !(self.nu > 0.0) {
            return Err(TdvError::contract("ν must be positive"));
        }
        self.loss.validate()
    }

    pub fn flow_config(&self, dataset: &Dataset, stop_time: f64) -> FlowConfig {
        let mut cfg = FlowConfig::new(dataset.operator.clone(), stop_time, self.depth).with_lambda(dataset.lambda);
        if let Some(it) = self.cg_iters {
            cfg.cg_iters = it;
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    /// Minibatch objective `J` before the update.
    pub objective: f64,
    /// Stopping time before the update.
    pub stop_time: f64,
    /// Euclidean norm of `(∇_θJ, ∂J/∂T)`.
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: TdvParams,
    pub stop_time: f64,
    pub history: Vec<StepRecord>,
}

/// Objective and control gradients over the given samples. Samples run in
/// parallel; their contributions are summed in index order.
pub fn batch_gradients(
    dataset: &Dataset,
    indices: &[usize],
    params: &TdvParams,
    flow: &FlowConfig,
    loss: LossSpec,
) -> Result<(f64, TdvParams, f64)> {
    let n = indices.len();
    let parts: Vec<Result<_>> = indices
        .par_iter()
        .map(|&i| {
            let s = &dataset.samples[i];
            let traj = run_flow(&s.x_init, &s.z, params, flow)?;
            let (adj, g) = adjoint_and_gradients(&traj, params, loss, &s.y, n)?;
            Ok((adj.objective, g))
        })
        .collect();
    let mut j = 0.0;
    let mut grad = params.zeros_like();
    let mut dt = 0.0;
    for part in parts {
        let (obj, g) = part?;
        j += obj;
        grad.axpy(1.0, &g.params);
        dt += g.stop_time;
    }
    Ok((j, grad, dt))
}

/// Mean objective over the whole dataset.
pub fn dataset_objective(dataset: &Dataset, params: &TdvParams, flow: &FlowConfig, loss: LossSpec) -> Result<f64> {
    let parts: Vec<Result<f64>> = dataset
        .samples
        .par_iter()
        .map(|s| objective(&run_flow(&s.x_init, &s.z, params, flow)?, &s.y, loss))
        .collect();
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total / dataset.len() as f64)
}

/// Train from a seeded initialisation.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let params = init_params(cfg.seed, dataset.channels(), cfg.features, cfg.blocks, cfg.nu);
    train_from(dataset, cfg, params, cfg.init_stop_time)
}

/// ADAM on `(θ, T)` from the given starting point.
pub fn train_from(dataset: &Dataset, cfg: &TrainConfig, mut params: TdvParams, mut stop_time: f64) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(TdvError::usage("training dataset is empty"));
    }
    let mut state = AdamState::new(&params);
    let mut history = Vec::with_capacity(cfg.steps);
    let mut batches = BatchSampler::new(dataset.len(), cfg.batch_size, cfg.seed);
    let mut initial = None;
    for step in 0..cfg.steps {
        let indices = batches.next_batch();
        let flow = cfg.flow_config(dataset, stop_time);
        let (j, grad, dt) = batch_gradients(dataset, &indices, &params, &flow, cfg.loss)?;
        let j0 = *initial.get_or_insert(j);
        if !j.is_finite() || j > 1e6 * j0 {
            return Err(TdvError::TrainingDiverged {
                step,
                loss: j,
                initial: j0,
            });
        }
        history.push(StepRecord {
            step,
            objective: j,
            stop_time,
            grad_norm: (grad.norm().powi(2) + dt * dt).sqrt(),
        });
        adam_step(&mut params, &mut stop_time, &grad, dt, &mut state, &cfg.adam);
        if !params.is_finite() {
            return Err(TdvError::numerical(format!("parameters became non-finite at step {step}")));
        }
    }
    Ok(TrainOutcome {
        params,
        stop_time,
        history,
    })
}

/// Epoch-wise shuffled minibatches. When the batch covers the dataset every
/// step uses all samples in order.
struct BatchSampler {
    n: usize,
    batch: usize,
    rng: CounterRng,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        Self {
            n,
            batch,
            rng: CounterRng::derived(seed, 1),
            order: Vec::new(),
            pos: usize::MAX,
        }
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.batch >= self.n {
            return (0..self.n).collect();
        }
        if self.pos.saturating_add(self.batch) > self.n {
            self.order = self.rng.permutation(self.n);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        out
    }
}

/// `step,objective,stop_time,grad_norm` CSV.
pub fn history_csv(history: &[StepRecord]) -> String {
    let mut s = String::from("step,objective,stop_time,grad_norm\n");
    for r in history {
        let _ = writeln!(s, "{},{:.12e},{:.12e},{:.12e}", r.step, r.objective, r.stop_time, r.grad_norm);
    }
    s
}

pub fn write_history_csv(path: impl AsRef<Path>, history: &[StepRecord]) -> Result<()> {
    std::fs::write(path, history_csv(history))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_covers_each_epoch() {
        let mut b = BatchSampler::new(6, 2, 9);
        let mut seen: Vec<usize> = (0..3).flat_map(|_| b.next_batch()).collect();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3, 4, 5]);
        let mut full = BatchSampler::new(3, 8, 9);
        assert_eq!(full.next_batch(), vec![0, 1, 2]);
    }
}
