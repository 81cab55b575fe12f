mod common;

use common::*;
use proptest::prelude::*;
use tdv_core::rng::CounterRng;
use tdv_core::tensor::io::{decode, encode, read_tensor, write_tensor};
use tdv_core::tensor::{conv2d, conv2d_adjoint, conv2d_kernel_grad, jvp, vjp, ConvSpec, Dual, OpTag, Primitive};
use tdv_core::{TdvError, Tensor};

#[test]
fn identity_kernel_examples() {
    let mut k = Tensor::zeros([1, 1, 3, 3]);
    k.set([0, 0, 1, 1], 1.0);
    let spec = ConvSpec::same(k).unwrap();
    let x = Tensor::image(1, 1, &[2.0]).unwrap();
    assert_eq!(conv2d(&x, &spec).unwrap().data(), &[2.0]);
    let mut rng = CounterRng::new(3);
    let y = rand_tensor(&mut rng, [1, 1, 4, 5]);
    assert_eq!(conv2d_adjoint(&y, &spec).unwrap(), y);
    let z = Tensor::zeros([1, 1, 4, 5]);
    assert_eq!(conv2d_adjoint(&z, &spec).unwrap(), z);
}

#[test]
fn replicate_padding_extends_constants() {
    let spec = ConvSpec::same(Tensor::full([1, 1, 3, 3], 1.0)).unwrap();
    let out = conv2d(&Tensor::full([1, 1, 3, 3], 1.0), &spec).unwrap();
    assert!(out.data().iter().all(|&v| v == 9.0));
}

#[test]
fn conv_matches_direct_summation_and_passes_dot_test() {
    let mut rng = CounterRng::new(11);
    for trial in 0..20 {
        let (stride, blur, k) = match trial % 4 {
            0 => (1, false, 3),
            1 => (1, false, 1),
            2 => (2, true, 3),
            _ => (2, false, 3),
        };
        let b = 1 + rng.below(2);
        let cin = 1 + rng.below(3);
        let cout = 1 + rng.below(3);
        let h = stride * (1 + rng.below(5));
        let w = stride * (1 + rng.below(5));
        let spec = ConvSpec::new(rand_tensor(&mut rng, [cout, cin, k, k]), stride, blur).unwrap();
        let x = rand_tensor(&mut rng, [b, cin, h, w]);
        let fx = conv2d(&x, &spec).unwrap();
        let oracle = conv_oracle(&x, &spec.kernel, stride, blur);
        assert!(rel_err_t(&fx, &oracle) < 1e-13, "trial {trial}");
        let y = rand_tensor(&mut rng, fx.shape());
        let lhs = fx.dot(&y);
        let rhs = x.dot(&conv2d_adjoint(&y, &spec).unwrap());
        assert!((lhs - rhs).abs() <= 1e-12 * x.norm() * y.norm(), "trial {trial}: {lhs} vs {rhs}");

        // Kernel gradient: ⟨conv(x, V), y⟩ = ⟨∂_W⟨conv(x, W), y⟩, V⟩ by linearity in W.
        let v = rand_tensor(&mut rng, spec.kernel.shape());
        let gk = conv2d_kernel_grad(&x, &y, &spec).unwrap();
        let direct = conv_oracle(&x, &v, stride, blur).dot(&y);
        assert!(rel_err(gk.dot(&v), direct) < 1e-11, "trial {trial}");
    }
}

#[test]
fn geometry_errors() {
    let spec = ConvSpec::blurred_stride2(Tensor::zeros([1, 1, 3, 3])).unwrap();
    assert!(matches!(conv2d(&Tensor::zeros([1, 1, 3, 4]), &spec), Err(TdvError::Shape(_))));
    let spec = ConvSpec::same(Tensor::zeros([1, 2, 3, 3])).unwrap();
    assert!(matches!(conv2d(&Tensor::zeros([1, 1, 4, 4]), &spec), Err(TdvError::Shape(_))));
    assert!(ConvSpec::new(Tensor::zeros([1, 1, 3, 3]), 1, true).is_err());
    assert!(ConvSpec::new(Tensor::zeros([1, 1, 5, 5]), 1, false).is_err());
}

#[test]
fn vjp_examples() {
    let x = Tensor::image(1, 1, &[3.0]).unwrap();
    let one = Tensor::image(1, 1, &[1.0]).unwrap();
    let g = vjp(&Primitive::new(OpTag::Square), &[&x], &one).unwrap();
    assert_eq!(g[0].data(), &[6.0]);

    let mut rng = CounterRng::new(5);
    let xs = rand_tensor(&mut rng, [2, 2, 8, 8]);
    let kernel = rand_tensor(&mut rng, [3, 2, 3, 3]);
    let cot = rand_tensor(&mut rng, [2, 3, 4, 4]);
    let g = vjp(&Primitive::conv(2, true), &[&xs, &kernel], &cot).unwrap();
    let spec = ConvSpec::blurred_stride2(kernel).unwrap();
    assert_eq!(g[0], conv2d_adjoint(&cot, &spec).unwrap());
}

#[test]
fn jvp_examples() {
    let x = Tensor::image(1, 1, &[3.0]).unwrap();
    let t = Tensor::image(1, 1, &[2.0]).unwrap();
    let out = jvp(&Primitive::new(OpTag::Square), &[Dual::new(x.clone(), t.clone()).unwrap()]).unwrap();
    assert_eq!(out.tangent.data(), &[12.0]);
    let out = jvp(&Primitive::new(OpTag::Identity), &[Dual::new(x, t.clone()).unwrap()]).unwrap();
    assert_eq!(out.tangent, t);
    assert!(Dual::new(Tensor::zeros([1, 1, 2, 2]), Tensor::zeros([1, 1, 2, 3])).is_err());
}

#[test]
fn unknown_tag_is_contract_error() {
    assert!(matches!(Primitive::from_tag("relu"), Err(TdvError::Contract(_))));
    assert_eq!(Primitive::from_tag("phi").unwrap().tag, OpTag::Phi);
}

/// Inputs for each primitive, drawn at random.
fn primitive_fixture(prim: &Primitive, rng: &mut CounterRng) -> Vec<Tensor> {
    match prim.tag {
        OpTag::Conv2d if prim.stride == 2 => vec![rand_tensor(rng, [1, 2, 8, 8]), rand_tensor(rng, [3, 2, 3, 3])],
        OpTag::Conv2d => vec![rand_tensor(rng, [2, 2, 5, 6]), rand_tensor(rng, [3, 2, 3, 3])],
        OpTag::Conv2dAdjoint => vec![rand_tensor(rng, [1, 3, 4, 4]), rand_tensor(rng, [3, 2, 3, 3])],
        OpTag::Add => vec![rand_tensor(rng, [1, 2, 4, 4]), rand_tensor(rng, [1, 2, 4, 4])],
        OpTag::ConcatFuse => vec![
            rand_tensor(rng, [1, 2, 4, 4]),
            rand_tensor(rng, [1, 2, 4, 4]),
            rand_tensor(rng, [2, 4, 1, 1]),
        ],
        _ => vec![rand_tensor(rng, [1, 2, 4, 4])],
    }
}

fn all_primitives() -> Vec<Primitive> {
    vec![
        Primitive::conv(1, false),
        Primitive::conv(2, true),
        Primitive::conv_adjoint(2, true),
        Primitive::phi(9.0),
        Primitive::new(OpTag::Square),
        Primitive::new(OpTag::Identity),
        Primitive::new(OpTag::Add),
        Primitive::new(OpTag::ConcatFuse),
    ]
}

#[test]
fn jvp_vjp_transpose_identity() {
    let mut rng = CounterRng::new(21);
    for prim in all_primitives() {
        let inputs = primitive_fixture(&prim, &mut rng);
        let tangents: Vec<Tensor> = inputs.iter().map(|t| rand_tensor(&mut rng, t.shape())).collect();
        let duals: Vec<Dual> = inputs
            .iter()
            .zip(&tangents)
            .map(|(p, t)| Dual::new(p.clone(), t.clone()).unwrap())
            .collect();
        let out = jvp(&prim, &duals).unwrap();
        let w = rand_tensor(&mut rng, out.primal.shape());
        let refs: Vec<&Tensor> = inputs.iter().collect();
        let cots = vjp(&prim, &refs, &w).unwrap();
        let lhs = out.tangent.dot(&w);
        let rhs: f64 = tangents.iter().zip(&cots).map(|(v, c)| v.dot(c)).sum();
        assert!(rel_err(lhs, rhs) < 1e-12, "{}: {lhs} vs {rhs}", prim.tag);
        assert_eq!(out.primal, prim.forward(&refs).unwrap());
    }
}

#[test]
fn vjp_matches_finite_differences_per_primitive() {
    let mut rng = CounterRng::new(31);
    for prim in all_primitives() {
        let inputs = primitive_fixture(&prim, &mut rng);
        let refs: Vec<&Tensor> = inputs.iter().collect();
        let probe = rand_tensor(&mut rng, prim.forward(&refs).unwrap().shape());
        let cots = vjp(&prim, &refs, &probe).unwrap();
        for (slot, input) in inputs.iter().enumerate() {
            let dir = rand_tensor(&mut rng, input.shape());
            let f = |t: &Tensor| {
                let mut args: Vec<&Tensor> = refs.clone();
                args[slot] = t;
                prim.forward(&args).unwrap().dot(&probe)
            };
            let fd = fd_directional(f, input, &dir, 1e-5);
            assert!(rel_err(fd, cots[slot].dot(&dir)) < 1e-6, "{} slot {slot}", prim.tag);
        }
    }
}

/// `s(x) = ⟨φ(conv_adjoint(conv(x, k1), k2)), probe⟩` through three primitives.
#[test]
fn composite_chain_gradient() {
    let mut rng = CounterRng::new(41);
    let conv = Primitive::conv(2, true);
    let conv_t = Primitive::conv_adjoint(2, true);
    let phi = Primitive::phi(9.0);
    let k1 = rand_tensor(&mut rng, [3, 2, 3, 3]);
    let k2 = rand_tensor(&mut rng, [3, 2, 3, 3]);
    let x = rand_tensor(&mut rng, [1, 2, 8, 8]);
    let probe = rand_tensor(&mut rng, [1, 2, 8, 8]);
    let chain = |x: &Tensor| -> (Tensor, Tensor) {
        let a = conv.forward(&[x, &k1]).unwrap();
        let b = conv_t.forward(&[&a, &k2]).unwrap();
        (a, b)
    };
    let scalar = |x: &Tensor| phi.forward(&[&chain(x).1]).unwrap().dot(&probe);
    let (a, b) = chain(&x);
    let gb = vjp(&phi, &[&b], &probe).unwrap().remove(0);
    let ga = vjp(&conv_t, &[&a, &k2], &gb).unwrap().remove(0);
    let gx = vjp(&conv, &[&x, &k1], &ga).unwrap().remove(0);
    let fd = fd_gradient(scalar, &x, 1e-5);
    assert!(rel_err_t(&gx, &fd) < 1e-6, "{}", rel_err_t(&gx, &fd));
}

#[test]
fn container_round_trip() {
    let mut rng = CounterRng::new(51);
    let t = rand_tensor(&mut rng, [2, 3, 4, 5]);
    assert_eq!(decode(&encode(&t)).unwrap(), t);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.tensor");
    write_tensor(&path, &t).unwrap();
    assert_eq!(read_tensor(&path).unwrap(), t);
    let mut bad = encode(&t);
    bad.pop();
    assert!(matches!(decode(&bad), Err(TdvError::Format(_))));
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let mut rng = CounterRng::new(61);
    let x = rand_tensor(&mut rng, [4, 2, 8, 8]);
    let spec = ConvSpec::same(rand_tensor(&mut rng, [3, 2, 3, 3])).unwrap();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let a = one.install(|| conv2d(&x, &spec).unwrap());
    let b = conv2d(&x, &spec).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_adjoint_consistency(
        seed in any::<u64>(),
        cin in 1usize..4,
        cout in 1usize..4,
        h2 in 1usize..6,
        w2 in 1usize..6,
        mode in 0usize..3,
    ) {
        let mut rng = CounterRng::new(seed);
        let (stride, blur, k) = [(1, false, 3), (1, false, 1), (2, true, 3)][mode];
        let spec = ConvSpec::new(rand_tensor(&mut rng, [cout, cin, k, k]), stride, blur).unwrap();
        let x = rand_tensor(&mut rng, [1, cin, 2 * h2, 2 * w2]);
        let fx = conv2d(&x, &spec).unwrap();
        let y = rand_tensor(&mut rng, fx.shape());
        let gap = (fx.dot(&y) - x.dot(&conv2d_adjoint(&y, &spec).unwrap())).abs();
        prop_assert!(gap <= 1e-12 * x.norm() * y.norm());
    }

    #[test]
    fn conv_is_linear(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let mut rng = CounterRng::new(seed);
        let spec = ConvSpec::blurred_stride2(rand_tensor(&mut rng, [2, 2, 3, 3])).unwrap();
        let x = rand_tensor(&mut rng, [1, 2, 6, 6]);
        let y = rand_tensor(&mut rng, [1, 2, 6, 6]);
        let mut comb = x.scale(alpha);
        comb.axpy(beta, &y);
        let mut expect = conv2d(&x, &spec).unwrap().scale(alpha);
        expect.axpy(beta, &conv2d(&y, &spec).unwrap());
        let got = conv2d(&comb, &spec).unwrap();
        prop_assert!((&got - &expect).max_abs() <= 1e-12 * (1.0 + expect.max_abs()));
    }
}
