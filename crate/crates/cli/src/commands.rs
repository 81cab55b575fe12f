//! One function per subcommand. Each writes its artifacts into the output
//! directory and returns a short summary for standard output.

use crate::artifacts::{normalise_for_display, OutputDir};
use crate::config::{RunConfig, Solver};
use std::fmt::Write as _;
use tdv_core::analysis::{landscape, psnr, psnr_csv_field, tdv_eigenpair, transfer_reconstruct};
use tdv_core::data::{data_initialization, gaussian_noise, read_pgm, read_pgm_dir, synth_dataset, task_operator, Task};
use tdv_core::flow::{rescale_wrap, run_flow, FlowConfig, T_MAX};
use tdv_core::operators::{cg_solve, BicubicDown, LinearMap, LinearOperator, MriOperator, RadonOperator};
use tdv_core::regularizer::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use tdv_core::regularizer::{init_params, tdv_energy, tdv_grad, tdv_hvp, TdvParams};
use tdv_core::rng::CounterRng;
use tdv_core::training::{adjoint_and_gradients, adjoint_recursion, objective, optimality_residual, sensitivity_bound, train, write_history_csv, LossSpec, ResidualVariant, Sample};
use tdv_core::{Result, TdvError, Tensor};

/// A ground truth, its observation and initial state, and the operator
/// linking them.
struct Problem {
    sample: Sample,
    op: LinearOperator,
}

fn problem_from_image(cfg: &RunConfig, k: usize, y: Tensor) -> Result<Problem> {
    let (h, w) = (y.height(), y.width());
    if matches!(cfg.task, Task::Mri | Task::Ct) && h != w {
        return Err(TdvError::usage(format!("{:?} needs square images, got {h}x{w}", cfg.task)));
    }
    let op = task_operator(cfg.task, h, cfg.gamma, cfg.eval_seed())?;
    let (z, x_init) = match cfg.task {
        Task::Denoise => {
            let z = &y + &gaussian_noise(cfg.eval_seed(), 1000 + k as u64, y.shape(), cfg.noise_std());
            (z.clone(), z)
        }
        _ => {
            let z = op.apply(&y)?;
            let x = data_initialization(cfg.task, &op, &z)?;
            (z, x)
        }
    };
    Ok(Problem {
        sample: Sample { x_init, y, z },
        op,
    })
}

fn source_images(cfg: &RunConfig) -> Result<Option<Vec<Tensor>>> {
    cfg.data_dir.as_ref().map(read_pgm_dir).transpose()
}

fn problems(cfg: &RunConfig) -> Result<Vec<Problem>> {
    if let Some(path) = &cfg.input {
        let images = if path.is_dir() { read_pgm_dir(path)? } else { vec![read_pgm(path)?] };
        if images.is_empty() {
            return Err(TdvError::usage(format!("no .pgm images in {}", path.display())));
        }
        return images.into_iter().enumerate().map(|(k, y)| problem_from_image(cfg, k, y)).collect();
    }
    let source = source_images(cfg)?;
    let ds = synth_dataset(cfg.eval_seed(), cfg.eval.count, cfg.eval.patch_size, cfg.level(), cfg.task, source.as_deref())?;
    Ok(ds
        .samples
        .into_iter()
        .map(|sample| Problem {
            sample,
            op: ds.operator.clone(),
        })
        .collect())
}

fn checkpoint(cfg: &RunConfig) -> Result<Checkpoint> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| TdvError::usage("this command needs --checkpoint"))?;
    load_checkpoint(path)
}

fn flow_for(cfg: &RunConfig, op: &LinearOperator, stop_time: f64) -> FlowConfig {
    let f = FlowConfig::new(op.clone(), stop_time, cfg.depth).with_lambda(cfg.lambda);
    match cfg.train.cg_iters {
        Some(n) => f.with_cg_iters(n),
        None => f,
    }
}

fn eval_time(cfg: &RunConfig, ckpt: &Checkpoint) -> f64 {
    cfg.stop_time.unwrap_or(ckpt.stopping_time)
}

fn psnr_cells(v: f64) -> String {
    let (s, flag) = psnr_csv_field(v);
    format!("{s},{flag}")
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn train_cmd(cfg: &RunConfig, out: &OutputDir) -> Result<String> {
    let source = source_images(cfg)?;
    let mut ds = synth_dataset(cfg.seed, cfg.train.count, cfg.train.patch_size, cfg.level(), cfg.task, source.as_deref())?;
    ds.lambda = cfg.lambda;
    let tc = cfg.train_config();
    let outcome = train(&ds, &tc)?;
    save_checkpoint(
        out.path("checkpoint"),
        &Checkpoint {
            params: outcome.params.clone(),
            stopping_time: outcome.stop_time,
        },
    )?;
    write_history_csv(out.path("history.csv"), &outcome.history)?;
    let (first, last) = match (outcome.history.first(), outcome.history.last()) {
        (Some(a), Some(b)) => (a.objective, b.objective),
        _ => (f64::NAN, f64::NAN),
    };
    Ok(format!(
        "trained {} steps on {} patches: objective {first:.6} -> {last:.6}, T = {:.6}",
        tc.steps,
        ds.len(),
        outcome.stop_time
    ))
}

pub fn denoise_cmd(cfg: &RunConfig, out: &OutputDir) -> Result<String> {
    if cfg.task != Task::Denoise {
        return Err(TdvError::usage("denoise needs task = denoise; use reconstruct for other tasks"));
    }
    let ckpt = checkpoint(cfg)?;
    let flow = flow_for(cfg, &LinearOperator::Identity, eval_time(cfg, &ckpt));
    let sigma_train = cfg.sigma_train.unwrap_or(cfg.sigma);
    let mut csv = String::from("index,psnr_noisy,psnr_noisy_inf,psnr_denoised,psnr_denoised_inf\n");
    let (mut before, mut after) = (Vec::new(), Vec::new());
    for (k, p) in problems(cfg)?.iter().enumerate() {
        let s = &p.sample;
        let x = if cfg.sigma > 0.0 {
            rescale_wrap(&s.x_init, &s.z, cfg.sigma, sigma_train, &ckpt.params, &flow)?
        } else {
            run_flow(&s.x_init, &s.z, &ckpt.params, &flow)?.last().clone()
        };
        let (a, b) = (psnr(&s.z, &s.y, 1.0), psnr(&x, &s.y, 1.0));
        let _ = writeln!(csv, "{k},{},{}", psnr_cells(a), psnr_cells(b));
        out.pgm(&format!("noisy_{k:03}.pgm"), &s.z)?;
        out.pgm(&format!("denoised_{k:03}.pgm"), &x)?;
        before.push(a);
        after.push(b);
    }
    out.csv("psnr.csv", &csv)?;
    Ok(format!(
        "mean PSNR {:.3} dB -> {:.3} dB over {} images",
        mean(&before),
        mean(&after),
        before.len()
    ))
}

pub fn reconstruct_cmd(cfg: &RunConfig, out: &OutputDir) -> Result<String> {
    let ckpt = checkpoint(cfg)?;
    let t = eval_time(cfg, &ckpt);
    let mut csv = String::from("index,psnr_init,psnr_init_inf,psnr_recon,psnr_recon_inf\n");
    let (mut before, mut after) = (Vec::new(), Vec::new());
    for (k, p) in problems(cfg)?.iter().enumerate() {
        let s = &p.sample;
        let x = match cfg.solver {
            Solver::Flow => run_flow(&s.x_init, &s.z, &ckpt.params, &flow_for(cfg, &p.op, t))?.last().clone(),
            Solver::Agd => transfer_reconstruct(cfg.task, &p.op, &s.z, &ckpt.params, cfg.lambda, Some(&s.x_init), cfg.agd_iters)?.x,
        };
        let (a, b) = (psnr(&s.x_init, &s.y, 1.0), psnr(&x, &s.y, 1.0));
        let _ = writeln!(csv, "{k},{},{}", psnr_cells(a), psnr_cells(b));
        out.pgm(&format!("init_{k:03}.pgm"), &s.x_init)?;
        out.pgm(&format!("recon_{k:03}.pgm"), &x)?;
        before.push(a);
        after.push(b);
    }
    out.csv("psnr.csv", &csv)?;
    Ok(format!(
        "mean PSNR {:.3} dB (initialisation) -> {:.3} dB over {} images",
        mean(&before),
        mean(&after),
        before.len()
    ))
}

pub fn sweep_cmd(cfg: &RunConfig, out: &OutputDir) -> Result<String> {
    let ckpt = checkpoint(cfg)?;
    let probs = problems(cfg)?;
    let t_hi = cfg.sweep_max.unwrap_or((2.0 * ckpt.stopping_time).min(T_MAX));
    if !(t_hi > 0.0 && t_hi <= T_MAX) {
        return Err(TdvError::usage(format!("sweep range [0, {t_hi}] must lie in (0, {T_MAX}]")));
    }
    let n = cfg.sweep_points;
    let mut csv = String::from("T,psnr,psnr_inf,optimality_residual\n");
    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in 0..n {
        let t = if n == 1 { t_hi } else { t_hi * k as f64 / (n - 1) as f64 };
        let (mut ps, mut res) = (Vec::new(), 0.0);
        for p in &probs {
            let traj = run_flow(&p.sample.x_init, &p.sample.z, &ckpt.params, &flow_for(cfg, &p.op, t))?;
            let adj = adjoint_recursion(&traj, &ckpt.params, LossSpec::SquaredL2, &p.sample.y)?;
            res += optimality_residual(&traj, &adj, ResidualVariant::default_for(&traj));
            ps.push(psnr(traj.last(), &p.sample.y, 1.0));
        }
        let m = mean(&ps);
        if m > best.0 {
            best = (m, t);
        }
        let _ = writeln!(csv, "{t:.8},{},{res:.12e}", psnr_cells(m));
    }
    out.csv("sweep.csv", &csv)?;
    Ok(format!("{n} stopping times on [0, {t_hi:.6}]; best mean PSNR {:.3} dB at T = {:.6}", best.0, best.1))
}

pub fn eigenmode_cmd(cfg: &RunConfig, out: &OutputDir) -> Result<String> {
    let ckpt = checkpoint(cfg)?;
    let mut csv = String::from("index,lambda,residual,norm_violation,iterations\n");
    let mut worst: f64 = 0.0;
    let probs = problems(cfg)?;
    for (k, p) in probs.iter().take(cfg.eigen_count).enumerate() {
        let e = tdv_eigenpair(&ckpt.params, &p.sample.y, cfg.eigen_steps, cfg.eigen_tol)?;
        let _ = writeln!(
            csv,
            "{k},{:.12e},{:.6e},{:.6e},{}",
            e.lambda_bar, e.residual, e.norm_violation, e.iterations
        );
        out.tensor(&format!("eigen_{k:03}.tensor"), &e.x_bar)?;
        out.pgm(&format!("eigen_{k:03}.pgm"), &normalise_for_display(&e.x_bar))?;
        worst = worst.max(e.residual);
    }
    out.csv("eigen.csv", &csv)?;
    Ok(format!("{} eigenpairs, worst residual {worst:.3e}", cfg.eigen_count.min(probs.len())))
}

pub fn landscape_cmd(cfg: &RunConfig, out: &OutputDir) -> Result<String> {
    let ckpt = checkpoint(cfg)?;
    let probs = problems(cfg)?;
    let x = &probs[0].sample.y;
    let n = gaussian_noise(cfg.seed, 7, x.shape(), cfg.noise_std());
    let pixel = cfg.pixel.unwrap_or((x.height() / 2, x.width() / 2));
    let grid = landscape(x, &n, pixel, cfg.grid, &ckpt.params)?;
    out.csv("landscape.csv", &grid.to_csv())?;
    Ok(format!("{0}x{0} landscape at pixel {pixel:?}", cfg.grid))
}

pub fn sensitivity_cmd(cfg: &RunConfig, out: &OutputDir) -> Result<String> {
    let a = checkpoint(cfg)?;
    let b = load_checkpoint(
        cfg.compare
            .as_ref()
            .ok_or_else(|| TdvError::usage("sensitivity needs --compare with a second checkpoint"))?,
    )?;
    let mut csv = String::from("image,step,lhs,rhs,holds\n");
    let (mut rows, mut held) = (0, 0);
    for (k, p) in problems(cfg)?.iter().enumerate() {
        let s = &p.sample;
        let ta = run_flow(&s.x_init, &s.z, &a.params, &flow_for(cfg, &p.op, a.stopping_time))?;
        let tb = run_flow(&s.x_init, &s.z, &b.params, &flow_for(cfg, &p.op, b.stopping_time))?;
        let rep = sensitivity_bound(&ta, &tb, &a.params, &b.params)?;
        for st in &rep.steps {
            let ok = st.lhs <= st.rhs;
            let _ = writeln!(csv, "{k},{},{:.12e},{:.12e},{}", st.step, st.lhs, st.rhs, u8::from(ok));
            rows += 1;
            held += usize::from(ok);
        }
    }
    out.csv("sensitivity.csv", &csv)?;
    Ok(format!("bound holds on {held}/{rows} (image, step) pairs"))
}

struct Check {
    name: &'static str,
    value: f64,
    tolerance: f64,
}

fn dot_gap(op: &dyn LinearMap, shape: [usize; 4], rng: &mut CounterRng) -> Result<f64> {
    let x = Tensor::from_fn(shape, |_| rng.normal());
    let ax = op.apply(&x)?;
    let y = Tensor::from_fn(ax.shape(), |_| rng.normal());
    Ok((ax.dot(&y) - x.dot(&op.adjoint(&y)?)).abs() / (x.norm() * y.norm()))
}

fn selftest_params(seed: u64) -> TdvParams {
    let mut p = init_params(seed, 1, 4, 1, 9.0);
    let mut rng = CounterRng::derived(seed, 77);
    p.w = Tensor::from_fn(p.w.shape(), |_| rng.normal());
    p
}

fn run_checks() -> Result<Vec<Check>> {
    let mut rng = CounterRng::new(2024);
    let mut checks = Vec::new();

    let mask = Tensor::from_fn([1, 1, 8, 8], |[_, _, i, j]| ((i * 3 + j) % 2) as f64);
    let maps = Tensor::from_fn([1, 4, 8, 8], |_| rng.normal());
    let ops: [(&'static str, LinearOperator, [usize; 4]); 4] = [
        ("dot test identity", LinearOperator::Identity, [1, 1, 8, 8]),
        ("dot test bicubic", LinearOperator::BicubicDown(BicubicDown::new(2)?), [1, 1, 8, 8]),
        ("dot test mri", LinearOperator::Mri(MriOperator::new(mask, maps)?), [1, 1, 8, 8]),
        ("dot test radon", LinearOperator::Radon(RadonOperator::new(9, 11, 6, None)?), [1, 1, 9, 11]),
    ];
    for (name, op, shape) in &ops {
        let mut worst: f64 = 0.0;
        for _ in 0..10 {
            worst = worst.max(dot_gap(op, *shape, &mut rng)?);
        }
        checks.push(Check {
            name,
            value: worst,
            tolerance: 1e-10,
        });
    }

    let p = selftest_params(3);
    let x = Tensor::from_fn([1, 1, 8, 8], |_| rng.uniform());
    let g = tdv_grad(&x, &p)?;
    let h = 1e-5;
    let mut fd = x.zeros_like();
    for k in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[k] += h;
        let mut xm = x.clone();
        xm.data_mut()[k] -= h;
        fd.data_mut()[k] = (tdv_energy(&xp, &p)? - tdv_energy(&xm, &p)?) / (2.0 * h);
    }
    checks.push(Check {
        name: "gradient vs finite differences",
        value: (&g - &fd).norm() / g.norm(),
        tolerance: 1e-6,
    });

    let v = Tensor::from_fn(x.shape(), |_| rng.normal());
    let u = Tensor::from_fn(x.shape(), |_| rng.normal());
    let (hv, hu) = (tdv_hvp(&x, &p, &v)?, tdv_hvp(&x, &p, &u)?);
    let (a, b) = (hv.dot(&u), v.dot(&hu));
    checks.push(Check {
        name: "hessian symmetry",
        value: (a - b).abs() / a.abs().max(b.abs()),
        tolerance: 1e-10,
    });

    let sr = LinearOperator::BicubicDown(BicubicDown::new(2)?);
    let rhs = Tensor::from_fn([1, 1, 8, 8], |_| rng.normal());
    let system = |t: &Tensor| -> Result<Tensor> {
        let mut out = t.clone();
        out.axpy(1.0, &sr.normal(t)?);
        Ok(out)
    };
    let sol = cg_solve(system, &rhs, 64, 1e-14)?;
    checks.push(Check {
        name: "cg on (I + AᵀA) for SR",
        value: (&system(&sol)? - &rhs).norm() / rhs.norm(),
        tolerance: 1e-9,
    });

    let y = Tensor::from_fn([1, 1, 8, 8], |_| rng.uniform());
    let z = Tensor::from_fn([1, 1, 8, 8], |[_, _, i, j]| y.get([0, 0, i, j]) + 0.1 * rng.normal());
    let t0 = 0.3;
    let flow = FlowConfig::denoising(t0, 4);
    let traj = run_flow(&z, &z, &p, &flow)?;
    let (_, grads) = adjoint_and_gradients(&traj, &p, LossSpec::SquaredL2, &y, 1)?;
    let j = |t: f64| -> Result<f64> { objective(&run_flow(&z, &z, &p, &flow.with_stop_time(t))?, &y, LossSpec::SquaredL2) };
    let fd_t = (j(t0 + h)? - j(t0 - h)?) / (2.0 * h);
    checks.push(Check {
        name: "stopping-time gradient vs finite differences",
        value: (fd_t - grads.stop_time).abs() / fd_t.abs().max(grads.stop_time.abs()),
        tolerance: 1e-4,
    });
    Ok(checks)
}

pub fn selftest_cmd(_cfg: &RunConfig, out: &OutputDir) -> Result<String> {
    let checks = run_checks()?;
    let mut csv = String::from("check,value,tolerance,passed\n");
    let mut failed = Vec::new();
    for c in &checks {
        let ok = c.value <= c.tolerance;
        let _ = writeln!(csv, "{},{:.3e},{:.0e},{}", c.name, c.value, c.tolerance, u8::from(ok));
        println!("{} {:<46} {:.3e} (tol {:.0e})", if ok { "PASS" } else { "FAIL" }, c.name, c.value, c.tolerance);
        if !ok {
            failed.push(c.name);
        }
    }
    out.csv("selftest.csv", &csv)?;
    if !failed.is_empty() {
        return Err(TdvError::numerical(format!("self-test failed: {}", failed.join(", "))));
    }
    Ok(format!("all {} checks passed", checks.len()))
}
