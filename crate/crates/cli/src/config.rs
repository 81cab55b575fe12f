//! Run configuration: a versioned JSON record, overridable from the command
//! line, validated before any computation starts.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use tdv_core::data::Task;
use tdv_core::training::{AdamConfig, LossSpec, TrainConfig};
use tdv_core::{Result, TdvError};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Number of training patches.
    pub count: usize,
    pub patch_size: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Separate ADAM step size for the stopping time; `lr` when absent.
    pub lr_stop_time: Option<f64>,
    pub loss: LossSpec,
    pub cg_iters: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            count: 16,
            patch_size: 16,
            steps: 500,
            batch_size: 8,
            lr: 1e-3,
            lr_stop_time: None,
            loss: LossSpec::SquaredL2,
            cg_iters: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Number of synthetic test patches when no input image is given.
    pub count: usize,
    pub patch_size: usize,
    /// Seed of the test set; `seed + 1` when absent.
    pub seed: Option<u64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            count: 10,
            patch_size: 16,
            seed: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    /// Semi-implicit gradient flow up to the learned stopping time.
    Flow,
    /// Accelerated gradient descent on `(λ/2)‖Ax − z‖² + R(x)`.
    Agd,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub version: u32,
    pub task: Task,
    /// Noise level in grey values of an 8-bit image.
    pub sigma: f64,
    /// Noise level the checkpoint was trained for; `sigma` when absent.
    pub sigma_train: Option<f64>,
    /// SR factor, MRI acceleration or CT angular subsampling.
    pub gamma: f64,
    pub lambda: f64,
    pub depth: usize,
    /// Stopping time. Training starts from it; evaluation uses the
    /// checkpoint's value unless this is set.
    pub stop_time: Option<f64>,
    pub features: usize,
    pub blocks: usize,
    pub nu: f64,
    pub seed: u64,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    /// Second checkpoint for `sensitivity`.
    pub compare: Option<PathBuf>,
    /// PGM file or directory of ground-truth images; synthetic patches otherwise.
    pub input: Option<PathBuf>,
    /// PGM directory training patches are cropped from.
    pub data_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub solver: Solver,
    pub agd_iters: usize,
    pub sweep_points: usize,
    /// Upper end of the T sweep; `min(2T̄, T_MAX)` when absent.
    pub sweep_max: Option<f64>,
    pub eigen_steps: usize,
    pub eigen_tol: f64,
    pub eigen_count: usize,
    pub grid: usize,
    /// Landscape pixel `(row, col)`; image centre when absent.
    pub pixel: Option<(usize, usize)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            task: Task::Denoise,
            sigma: 25.0,
            sigma_train: None,
            gamma: 2.0,
            lambda: 1.0,
            depth: 5,
            stop_time: None,
            features: 8,
            blocks: 1,
            nu: 9.0,
            seed: 0,
            out: PathBuf::from("out"),
            checkpoint: None,
            compare: None,
            input: None,
            data_dir: None,
            threads: None,
            train: TrainSection::default(),
            eval: EvalSection::default(),
            solver: Solver::Flow,
            agd_iters: 100,
            sweep_points: 25,
            sweep_max: None,
            eigen_steps: 5000,
            eigen_tol: 1e-4,
            eigen_count: 1,
            grid: 33,
            pixel: None,
        }
    }
}

fn usage(msg: impl Into<String>) -> TdvError {
    TdvError::usage(msg)
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(usage(format!("config version {} is not supported (expected {CONFIG_VERSION})", self.version)));
        }
        let positive = [
            ("lambda", self.lambda),
            ("nu", self.nu),
            ("gamma", self.gamma),
            ("train.lr", self.train.lr),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(usage(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(usage(format!("sigma must be non-negative, got {}", self.sigma)));
        }
        if let Some(s) = self.sigma_train {
            if !(s > 0.0) {
                return Err(usage("sigma_train must be positive"));
            }
        }
        if let Some(t) = self.stop_time {
            if !(0.0..=tdv_core::flow::T_MAX).contains(&t) {
                return Err(usage(format!("stop_time must lie in [0, {}]", tdv_core::flow::T_MAX)));
            }
        }
        let counts = [
            ("depth", self.depth),
            ("features", self.features),
            ("blocks", self.blocks),
            ("train.count", self.train.count),
            ("train.batch_size", self.train.batch_size),
            ("eval.count", self.eval.count),
            ("sweep_points", self.sweep_points),
            ("grid", self.grid),
            ("eigen_count", self.eigen_count),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(usage(format!("{name} must be positive")));
            }
        }
        for (name, p) in [("train.patch_size", self.train.patch_size), ("eval.patch_size", self.eval.patch_size)] {
            if p == 0 || p % 4 != 0 {
                return Err(usage(format!("{name} must be a positive multiple of 4, got {p}")));
            }
        }
        if self.threads == Some(0) {
            return Err(usage("threads must be positive"));
        }
        self.train.loss.validate().map_err(|e| usage(e.to_string()))?;
        Ok(())
    }

    /// `σ` on the `[0, 1]` pixel scale.
    pub fn noise_std(&self) -> f64 {
        self.sigma / 255.0
    }

    /// Task level passed to dataset synthesis: `σ` for denoising, `γ` otherwise.
    pub fn level(&self) -> f64 {
        match self.task {
            Task::Denoise => self.noise_std(),
            _ => self.gamma,
        }
    }

    pub fn eval_seed(&self) -> u64 {
        self.eval.seed.unwrap_or(self.seed.wrapping_add(1))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            adam: AdamConfig {
                lr: self.train.lr,
                lr_stop_time: self.train.lr_stop_time,
                ..Default::default()
            },
            batch_size: self.train.batch_size,
            patch_size: self.train.patch_size,
            steps: self.train.steps,
            seed: self.seed,
            depth: self.depth,
            loss: self.train.loss,
            init_stop_time: self.stop_time.unwrap_or(0.05),
            features: self.features,
            blocks: self.blocks,
            nu: self.nu,
            cg_iters: self.train.cg_iters,
        }
    }

    /// Hex SHA-256 of the canonical JSON form, leaving out the output
    /// directory and thread cap since neither affects results.
    pub fn hash(&self) -> String {
        let canonical = RunConfig {
            out: PathBuf::new(),
            threads: None,
            ..self.clone()
        };
        let json = serde_json::to_string(&canonical).expect("config serialises");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"version": 1, "sigmaa": 3}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"train": {"stepz": 3}}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"version": 2}"#).unwrap();
        assert!(c.validate().is_err());
        let c: RunConfig = serde_json::from_str(r#"{"lambda": -1}"#).unwrap();
        assert!(c.validate().is_err());
        let c: RunConfig = serde_json::from_str(r#"{"eval": {"patch_size": 10}}"#).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 1, ..RunConfig::default() };
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        let moved = RunConfig {
            out: PathBuf::from("elsewhere"),
            threads: Some(3),
            ..RunConfig::default()
        };
        assert_eq!(moved.hash(), a.hash());
    }
}
