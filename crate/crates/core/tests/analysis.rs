mod common;

use common::*;
use proptest::prelude::*;
use tdv_core::analysis::*;
use tdv_core::data::Task;
use tdv_core::operators::{LinearMap, LinearOperator, MriOperator};
use tdv_core::regularizer::{tdv_derivatives_padded, tdv_r_padded, TdvParams};
use tdv_core::rng::CounterRng;
use tdv_core::Tensor;

fn eig_cfg(step_size: f64, steps: usize) -> EigenConfig {
    EigenConfig {
        steps,
        step_size,
        tol: 0.0,
        check_every: 0,
    }
}

#[test]
fn eigenpair_of_a_diagonal_quadratic() {
    // ∇R(x) = diag(1, 3)x. A large step amplifies the second coordinate.
    let grad = |x: &Tensor| Ok(Tensor::image(1, 2, &[x.data()[0], 3.0 * x.data()[1]]).unwrap());
    let start = Tensor::image(1, 2, &[1.0, 0.2]).unwrap();
    for tau in [0.75, 1.0] {
        let e = eigenpair_solve(grad, &start, &eig_cfg(tau, 400)).unwrap();
        assert!((e.lambda_bar - 3.0).abs() < 1e-8, "τ={tau}: {}", e.lambda_bar);
        assert!(e.residual < 1e-8);
        assert!(e.norm_violation < 1e-12);
        assert!((e.x_bar.data()[0]).abs() < 1e-8);
    }
    // A small step keeps the direction of slowest decay instead.
    let e = eigenpair_solve(grad, &start, &eig_cfg(0.2, 400)).unwrap();
    assert!((e.lambda_bar - 1.0).abs() < 1e-8);
    assert!(e.residual < 1e-8);
}

#[test]
fn eigenpair_early_exit() {
    let grad = |x: &Tensor| Ok(x.scale(2.0));
    let start = Tensor::image(1, 3, &[0.5, -1.0, 0.25]).unwrap();
    let cfg = EigenConfig {
        steps: 100,
        step_size: 0.1,
        tol: 1e-6,
        check_every: 5,
    };
    let e = eigenpair_solve(grad, &start, &cfg).unwrap();
    assert_eq!(e.iterations, 5);
    assert!((e.lambda_bar - 2.0).abs() < 1e-14);
}

#[test]
fn tdv_eigenpair_is_certified() {
    let p = toy_params(21, 4, 1);
    let mut rng = CounterRng::new(21);
    let x = rand_uniform(&mut rng, [1, 1, 8, 8], 0.0, 1.0);
    let e = tdv_eigenpair(&p, &x, 3000, 1e-6).unwrap();
    let g = tdv_derivatives_padded(&e.x_bar, &p, None, false).unwrap().grad;
    let mut r = g.clone();
    r.axpy(-e.lambda_bar, &e.x_bar);
    assert!((r.norm() / g.norm() - e.residual).abs() < 1e-12);
    assert!(e.norm_violation < 1e-8);
    assert!(e.residual < 1e-3, "residual {}", e.residual);
}

#[test]
fn agd_solves_the_unit_quadratic() {
    let mut rng = CounterRng::new(20);
    let a = rand_tensor(&mut rng, [1, 1, 6, 6]);
    let out = agd_lipschitz_solve(|x| Ok(0.5 * (x - &a).norm_sq()), |x| Ok(x - &a), &a.zeros_like(), 200, 1.0).unwrap();
    assert!((&out.x - &a).norm() < 1e-8);
}

#[test]
fn agd_solves_an_anisotropic_quadratic() {
    let mut rng = CounterRng::new(22);
    let diag = rand_uniform(&mut rng, [1, 1, 4, 4], 0.5, 4.0);
    let exact = rand_tensor(&mut rng, [1, 1, 4, 4]);
    // Centered form, so energy differences stay resolvable near the minimum.
    let scaled = |x: &Tensor| Tensor::from_fn(x.shape(), |i| diag.get(i) * (x.get(i) - exact.get(i)));
    let energy = |x: &Tensor| Ok(0.5 * scaled(x).dot(&(x - &exact)));
    let grad = |x: &Tensor| Ok(scaled(x));
    let out = agd_lipschitz_solve(energy, grad, &Tensor::zeros([1, 1, 4, 4]), 400, 1.0).unwrap();
    assert!((&out.x - &exact).norm() < 1e-8);
    for s in &out.steps {
        assert!(s.energy <= s.energy_extrapolated);
    }
    assert!(agd_lipschitz_solve(energy, grad, &exact, 1, 0.0).is_err());
}

#[test]
fn agd_inverts_a_fully_sampled_mri_operator() {
    let mut rng = CounterRng::new(23);
    let y = rand_uniform(&mut rng, [1, 1, 16, 16], 0.0, 1.0);
    let op = LinearOperator::Mri(MriOperator::single_coil(Tensor::full([1, 1, 16, 16], 1.0)).unwrap());
    let z = op.apply(&y).unwrap();
    let flat = TdvParams::zeros(1, 2, 1, 9.0);
    let x0 = Tensor::zeros(y.shape());
    let out = transfer_reconstruct(Task::Mri, &op, &z, &flat, 1.0, Some(&x0), 200).unwrap();
    assert!((&out.x - &op.adjoint(&z).unwrap()).norm() < 1e-8);
    assert!((&out.x - &y).norm() < 1e-8);
}

#[test]
fn agd_accepted_steps_never_increase_energy() {
    let p = toy_params(24, 4, 1);
    let mut rng = CounterRng::new(24);
    let y = rand_uniform(&mut rng, [1, 1, 8, 8], 0.0, 1.0);
    let mut z = y.clone();
    z.axpy(0.1, &rand_tensor(&mut rng, y.shape()));
    let out = transfer_reconstruct(Task::Denoise, &LinearOperator::Identity, &z, &p, 2.0, None, 60).unwrap();
    assert_eq!(out.steps.len(), 60);
    for s in &out.steps {
        assert!(s.energy <= s.energy_extrapolated, "{s:?}");
        assert!(s.lipschitz > 0.0);
    }
    assert!(transfer_reconstruct(Task::Denoise, &LinearOperator::Identity, &z, &p, 0.0, None, 1).is_err());

    // A dominant data term pins the output to the observation.
    let flat = TdvParams::zeros(1, 2, 1, 9.0);
    let out = transfer_reconstruct(Task::Denoise, &LinearOperator::Identity, &z, &flat, 1e4, Some(&y), 100).unwrap();
    assert!((&out.x - &z).norm() < 1e-8);
}

#[test]
fn landscape_examples() {
    let mut rng = CounterRng::new(25);
    let x = rand_uniform(&mut rng, [1, 1, 8, 8], 0.0, 1.0);
    let n = rand_tensor(&mut rng, [1, 1, 8, 8]);
    let flat = TdvParams::zeros(1, 2, 1, 9.0);
    let g = landscape(&x, &n, (3, 4), 5, &flat).unwrap();
    assert!(g.values.iter().flatten().all(|&v| v == 0.0));
    assert_eq!(g.xi1, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);

    let p = toy_params(25, 4, 1);
    let g = landscape(&x, &n, (2, 5), 33, &p).unwrap();
    for &(a, b) in &[(0, 0), (7, 20), (16, 16), (32, 1)] {
        let mut img = x.scale(g.xi1[a]);
        img.axpy(g.xi2[b], &n);
        let r = tdv_r_padded(&img, &p).unwrap().get([0, 0, 2, 5]);
        assert!((r - g.values[a][b]).abs() < 1e-12);
    }
    let csv = g.to_csv();
    assert!(csv.starts_with("xi1,xi2,value\n"));
    assert_eq!(csv.lines().count(), 1 + 33 * 33);

    assert!(landscape(&x, &n, (8, 0), 3, &p).is_err());
    assert!(landscape(&x, &n, (0, 0), 0, &p).is_err());
}

#[test]
fn psnr_examples() {
    let mut rng = CounterRng::new(26);
    let a = rand_uniform(&mut rng, [1, 1, 6, 6], 0.0, 1.0);
    let b = rand_uniform(&mut rng, [1, 1, 6, 6], 0.0, 1.0);
    assert_eq!(psnr(&a, &b, 1.0), psnr(&b, &a, 1.0));
    assert!((psnr(&a.add_scalar(0.3), &b.add_scalar(0.3), 1.0) - psnr(&a, &b, 1.0)).abs() < 1e-12);
    assert!((psnr(&a, &b, 2.0) - psnr(&a, &b, 1.0) - 20.0 * 2f64.log10()).abs() < 1e-12);
    assert_eq!(mean_psnr(&[a.clone(), b.clone()], &[b.clone(), a.clone()], 1.0), psnr(&a, &b, 1.0));
    assert_eq!(psnr_csv_field(31.25), ("31.250000".to_string(), 0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn landscape_is_gray_shift_invariant_at_the_origin(seed in 0u64..1000, c in -1.0f64..1.0) {
        // At ξ = (1, 0) the image is x itself, so shifting x leaves r unchanged.
        let p = toy_params(seed, 2, 1);
        let mut rng = CounterRng::new(seed);
        let x = rand_uniform(&mut rng, [1, 1, 8, 8], 0.0, 1.0);
        let n = Tensor::zeros([1, 1, 8, 8]);
        let a = landscape(&x, &n, (1, 1), 3, &p).unwrap();
        let b = landscape(&x.add_scalar(c), &n, (1, 1), 3, &p).unwrap();
        prop_assert!((a.values[2][1] - b.values[2][1]).abs() < 1e-10);
    }
}
