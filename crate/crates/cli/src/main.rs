//! `tdv`: train, apply and analyse total deep variation regularizers.
//!
//! Every subcommand reads an optional JSON run configuration, applies flag
//! overrides, validates the result and writes its artifacts plus a
//! `manifest.json` into the output directory.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 numerical failure.

mod artifacts;
mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;
use tdv_core::data::Task;
use tdv_core::{Result, TdvError};

#[derive(Parser, Debug)]
#[command(name = "tdv", version, about = "Total deep variation regularizers for inverse problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a regularizer and its stopping time on synthetic patches.
    Train(Overrides),
    /// Denoise test images with a trained checkpoint.
    Denoise(Overrides),
    /// Reconstruct SR, MRI or CT test images with a trained checkpoint.
    Reconstruct(Overrides),
    /// Mean PSNR and optimality residual over a range of stopping times.
    #[command(name = "sweep-T")]
    SweepT(Overrides),
    /// Nonlinear eigenpairs of the regularizer gradient.
    Eigenmode(Overrides),
    /// Local energy landscape around an image.
    Landscape(Overrides),
    /// Stability bound between two checkpoints.
    Sensitivity(Overrides),
    /// Quick dot tests, derivative checks and CG fixtures.
    Selftest(Overrides),
}

#[derive(Args, Debug, Default)]
#[command(allow_negative_numbers = true)]
struct Overrides {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    task: Option<Task>,
    /// Noise level in 8-bit grey values.
    #[arg(long)]
    sigma: Option<f64>,
    /// SR factor, MRI acceleration or CT angular subsampling.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Number of flow steps S.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    stop_time: Option<f64>,
    /// Feature channels m.
    #[arg(long)]
    features: Option<usize>,
    /// Macro-blocks l.
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Training steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Second checkpoint (sensitivity).
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Ground-truth PGM image or directory.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(if let Some(v) = &self.$field { c.$field = v.clone(); })*};
        }
        set!(task, sigma, gamma, lambda, depth, features, blocks, nu, seed, out);
        if let Some(t) = self.stop_time {
            c.stop_time = Some(t);
        }
        if let Some(s) = self.steps {
            c.train.steps = s;
        }
        for (slot, v) in [
            (&mut c.checkpoint, &self.checkpoint),
            (&mut c.compare, &self.compare),
            (&mut c.input, &self.input),
        ] {
            if v.is_some() {
                *slot = v.clone();
            }
        }
        if self.threads.is_some() {
            c.threads = self.threads;
        }
        c.validate()?;
        Ok(c)
    }
}

fn run(command: &Command) -> Result<String> {
    let (name, o, f): (&str, &Overrides, fn(&RunConfig, &artifacts::OutputDir) -> Result<String>) = match command {
        Command::Train(o) => ("train", o, commands::train_cmd),
        Command::Denoise(o) => ("denoise", o, commands::denoise_cmd),
        Command::Reconstruct(o) => ("reconstruct", o, commands::reconstruct_cmd),
        Command::SweepT(o) => ("sweep-T", o, commands::sweep_cmd),
        Command::Eigenmode(o) => ("eigenmode", o, commands::eigenmode_cmd),
        Command::Landscape(o) => ("landscape", o, commands::landscape_cmd),
        Command::Sensitivity(o) => ("sensitivity", o, commands::sensitivity_cmd),
        Command::Selftest(o) => ("selftest", o, commands::selftest_cmd),
    };
    let cfg = o.resolve()?;
    if let Some(n) = cfg.threads {
        // Results do not depend on the pool size; this only caps the workers.
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| TdvError::usage(format!("thread pool: {e}")))?;
    }
    let out = artifacts::OutputDir::create(&cfg.out)?;
    let summary = f(&cfg, &out)?;
    out.finish(name, &cfg)?;
    Ok(summary)
}

fn exit_code(e: &TdvError) -> u8 {
    match e {
        TdvError::Numerical(_) | TdvError::TrainingDiverged { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
