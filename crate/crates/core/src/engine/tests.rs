use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::testing::{central_difference, relative_error};

fn rand_real(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn_real(shape, |_| rng.gen_range(-1.0..1.0))
}

fn rand_complex(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn_complex(shape, |_| {
        C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    })
}

#[test]
fn identity_graph() {
    let mut b = GraphBuilder::new();
    let u = b.input("u", &[3], DType::Real).unwrap();
    let g = b.finish(u);
    let x = Tensor::vector(&[1.0, 2.0, 3.0]);
    assert_eq!(g.evaluate(&[("u", &x)]).unwrap(), x);
}

#[test]
fn square_plus_one() {
    let mut b = GraphBuilder::new();
    let u = b.input("u", &[2], DType::Real).unwrap();
    let sq = b.mul(u, u).unwrap();
    let one = b.scalar(1.0);
    let y = b.add(sq, one).unwrap();
    let g = b.finish(y);
    let out = g.evaluate(&[("u", &Tensor::vector(&[0.0, 2.0]))]).unwrap();
    assert_eq!(out.as_real().unwrap(), &[1.0, 5.0]);
}

#[test]
fn missing_binding_and_shape_mismatch() {
    let mut b = GraphBuilder::new();
    let u = b.input("u", &[2], DType::Real).unwrap();
    let g = b.finish(u);
    let empty: [(&str, &Tensor); 0] = [];
    assert!(matches!(g.evaluate(&empty), Err(Error::MissingBinding(n)) if n == "u"));
    let bad = Tensor::vector(&[1.0, 2.0, 3.0]);
    assert!(matches!(
        g.evaluate(&[("u", &bad)]),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn dft_round_trip_and_dc_bin() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_real(&mut rng, &[16]);
    let mut b = GraphBuilder::new();
    let u = b.input("u", &[16], DType::Real).unwrap();
    let f = b.dft(u, &[0]).unwrap();
    let r = b.idft(f, &[0]).unwrap();
    let g = b.finish(r);
    let back = g.evaluate(&[("u", &x)]).unwrap();
    assert!(back.max_abs_diff(&x.to_complex()) < 1e-12);

    let c = Tensor::full(&[8], 2.5);
    let mut b = GraphBuilder::new();
    let u = b.input("u", &[8], DType::Real).unwrap();
    let f = b.dft(u, &[0]).unwrap();
    let g = b.finish(f);
    let spec = g.evaluate(&[("u", &c)]).unwrap();
    let v = spec.as_complex().unwrap();
    assert!((v[0] - C64::new(20.0, 0.0)).norm() < 1e-12);
    assert!(v[1..].iter().all(|z| z.norm() < 1e-12));
}

#[test]
fn dft_matches_direct_sum() {
    // O(N²) definition with e^{-2πi jk/N}
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = rand_complex(&mut rng, &[3, 12]);
    let mut b = GraphBuilder::new();
    let u = b.input("u", &[3, 12], DType::Complex).unwrap();
    let f = b.dft(u, &[1]).unwrap();
    let out = b.finish(f).evaluate(&[("u", &x)]).unwrap();
    let xv = x.as_complex().unwrap();
    let mut expected = vec![C64::new(0.0, 0.0); 36];
    for r in 0..3 {
        for kk in 0..12 {
            for j in 0..12 {
                let ph = -2.0 * std::f64::consts::PI * (j * kk) as f64 / 12.0;
                expected[r * 12 + kk] += xv[r * 12 + j] * C64::from_polar(1.0, ph);
            }
        }
    }
    let expected = Tensor::complex(&[3, 12], expected).unwrap();
    assert!(out.max_abs_diff(&expected) < 1e-12);
}

#[test]
fn parseval() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_complex(&mut rng, &[32]);
    let mut b = GraphBuilder::new();
    let u = b.input("u", &[32], DType::Complex).unwrap();
    let f = b.dft(u, &[0]).unwrap();
    let spec = b.finish(f).evaluate(&[("u", &x)]).unwrap();
    let lhs: f64 = x.as_complex().unwrap().iter().map(|z| z.norm_sqr()).sum();
    let rhs: f64 = spec
        .as_complex()
        .unwrap()
        .iter()
        .map(|z| z.norm_sqr())
        .sum::<f64>()
        / 32.0;
    assert!((lhs - rhs).abs() < 1e-10);
}

fn conv_graph(n: usize, k: usize) -> ExprGraph {
    let mut b = GraphBuilder::new();
    let x = b.input("x", &[n], DType::Real).unwrap();
    let w = b.input("w", &[k], DType::Real).unwrap();
    let y = b.convolve(x, w, 0).unwrap();
    b.finish(y)
}

#[test]
fn convolve_examples() {
    let g = conv_graph(3, 3);
    let out = g
        .evaluate(&[
            ("x", &Tensor::vector(&[0.0, 1.0, 0.0])),
            ("w", &Tensor::vector(&[1.0, -2.0, 1.0])),
        ])
        .unwrap();
    assert_eq!(out.as_real().unwrap(), &[1.0, -2.0, 1.0]);

    let g = conv_graph(8, 3);
    let out = g
        .evaluate(&[
            ("x", &Tensor::full(&[8], 3.0)),
            ("w", &Tensor::vector(&[1.0, -2.0, 1.0])),
        ])
        .unwrap();
    assert!(out.as_real().unwrap()[1..7].iter().all(|v| v.abs() < 1e-15));

    let mut b = GraphBuilder::new();
    let x = b.input("x", &[8], DType::Real).unwrap();
    let w = b.input("w", &[4], DType::Real).unwrap();
    assert!(matches!(b.convolve(x, w, 0), Err(Error::EvenKernel(4))));
}

#[test]
fn convolve_matches_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_real(&mut rng, &[16]);
    let w = rand_real(&mut rng, &[5]);
    let out = conv_graph(16, 5).evaluate(&[("x", &x), ("w", &w)]).unwrap();
    let (xv, wv) = (x.as_real().unwrap(), w.as_real().unwrap());
    let naive: Vec<f64> = (0..16i64)
        .map(|i| {
            (0..5i64)
                .map(|k| {
                    let j = i + k - 2;
                    if (0..16).contains(&j) {
                        wv[k as usize] * xv[j as usize]
                    } else {
                        0.0
                    }
                })
                .sum()
        })
        .collect();
    assert!(out.max_abs_diff(&Tensor::vector(&naive)) < 1e-13);
}

#[test]
fn gradient_of_sum_of_squares() {
    let mut b = GraphBuilder::new();
    let u = b.input("u", &[3], DType::Real).unwrap();
    let sq = b.powi(u, 2).unwrap();
    let l = b.sum_all(sq);
    let g = b.finish(l);
    let r = g
        .gradient(&["u"], &[("u", &Tensor::vector(&[1.0, 2.0, 3.0]))])
        .unwrap();
    assert_eq!(r.value, 14.0);
    assert_eq!(r.grads["u"].as_real().unwrap(), &[2.0, 4.0, 6.0]);
}

#[test]
fn complex_modulus_squared_gradient_is_descent_direction() {
    let mut b = GraphBuilder::new();
    let z = b.input("z", &[], DType::Complex).unwrap();
    let a = b.abs(z).unwrap();
    let l = b.powi(a, 2).unwrap();
    let g = b.finish(l);
    let z0 = Tensor::complex_scalar(C64::new(1.0, 2.0));
    let r = g.gradient(&["z"], &[("z", &z0)]).unwrap();
    let fd = central_difference(
        &mut |t| g.evaluate(&[("z", t)]).unwrap().as_real().unwrap()[0],
        &z0,
        1e-5,
    );
    assert!(relative_error(&r.grads["z"], &fd, 1e-12) < 1e-8);
    // ∂L/∂x + i∂L/∂y = 2z
    assert!((r.grads["z"].get_c(0) - C64::new(2.0, 4.0)).norm() < 1e-12);
    let stepped = z0.axpby(1.0, &r.grads["z"], -0.1).unwrap();
    let after = g.evaluate(&[("z", &stepped)]).unwrap().as_real().unwrap()[0];
    assert!(after < r.value);
}

#[test]
fn non_scalar_and_complex_outputs_rejected() {
    let mut b = GraphBuilder::new();
    let u = b.input("u", &[3], DType::Real).unwrap();
    let g = b.finish(u);
    let x = Tensor::vector(&[1.0, 2.0, 3.0]);
    assert!(matches!(
        g.gradient(&["u"], &[("u", &x)]),
        Err(Error::NonScalarOutput(_))
    ));

    let mut b = GraphBuilder::new();
    let u = b.input("u", &[], DType::Complex).unwrap();
    let g = b.finish(u);
    let z = Tensor::complex_scalar(C64::new(1.0, 0.0));
    assert!(matches!(
        g.gradient(&["u"], &[("u", &z)]),
        Err(Error::NonRealOutput)
    ));
}

#[test]
fn gradient_for_unused_input_is_zero() {
    let mut b = GraphBuilder::new();
    let u = b.input("u", &[2], DType::Real).unwrap();
    let l = b.sum_all(u);
    let g = b.finish(l);
    let x = Tensor::vector(&[1.0, 2.0]);
    let w = Tensor::vector(&[5.0, 6.0, 7.0]);
    let r = g.gradient(&["u", "w"], &[("u", &x), ("w", &w)]).unwrap();
    assert_eq!(r.grads["w"], Tensor::zeros(&[3], DType::Real));
}

/// Builds `L = Σ|y|² + Re Σ(c·y)` on top of `y`, so both the modulus and the
/// phase of every output entry influence the loss.
fn scalarize(b: &mut GraphBuilder, y: NodeId, rng: &mut ChaCha8Rng) -> NodeId {
    let shape = b.shape(y).to_vec();
    let a = b.abs(y).unwrap();
    let sq = b.powi(a, 2).unwrap();
    let s1 = b.sum_all(sq);
    let c = b.constant(rand_complex(rng, &shape));
    let cy = b.mul(c, y).unwrap();
    let s2 = b.sum_all(cy);
    let re = b.real(s2).unwrap();
    b.add(s1, re).unwrap()
}

type Build = fn(&mut GraphBuilder, &[NodeId]) -> NodeId;

fn check_primitive(name: &str, inputs: &[(&str, Tensor)], build: Build) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut b = GraphBuilder::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .map(|(n, t)| b.input(n, t.shape(), t.dtype()).unwrap())
        .collect();
    let y = build(&mut b, &ids);
    let l = scalarize(&mut b, y, &mut rng);
    let g = b.finish(l);
    let names: Vec<&str> = inputs.iter().map(|(n, _)| *n).collect();
    let bind: Vec<(&str, &Tensor)> = inputs.iter().map(|(n, t)| (*n, t)).collect();
    let r = g.gradient(&names, &bind).unwrap();
    for (i, (n, t)) in inputs.iter().enumerate() {
        let fd = central_difference(
            &mut |probe| {
                let mut bb = bind.clone();
                bb[i] = (n, probe);
                g.evaluate(&bb).unwrap().as_real().unwrap()[0]
            },
            t,
            1e-5,
        );
        let err = relative_error(&r.grads[*n], &fd, 1e-8);
        assert!(err < 1e-6, "{name}: gradient wrt {n} rel err {err:e}");
    }
}

#[test]
fn every_primitive_passes_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let xr = rand_real(&mut rng, &[4, 6]);
    let xc = rand_complex(&mut rng, &[4, 6]);
    let pos = Tensor::from_fn_real(&[4, 6], |i| 0.5 + 0.1 * i as f64);
    let row = rand_real(&mut rng, &[6]);
    let kern = rand_real(&mut rng, &[3]);
    let kc = rand_complex(&mut rng, &[5]);

    macro_rules! un {
        ($name:expr, $x:expr, $op:expr) => {
            check_primitive($name, &[("x", $x.clone())], |b, i| {
                b.unary($op, i[0]).unwrap()
            })
        };
    }
    for x in [&xr, &xc] {
        un!("neg", x, UnaryOp::Neg);
        un!("abs", x, UnaryOp::Abs);
        un!("sigmoid", x, UnaryOp::Sigmoid);
        un!("exp", x, UnaryOp::Exp);
        un!("sin", x, UnaryOp::Sin);
        un!("cos", x, UnaryOp::Cos);
        un!("reciprocal", x, UnaryOp::Reciprocal);
        un!("real", x, UnaryOp::Real);
        un!("imag", x, UnaryOp::Imag);
        un!("conj", x, UnaryOp::Conj);
        un!("powi3", x, UnaryOp::PowI(3));
        un!("powi-2", x, UnaryOp::PowI(-2));
    }
    un!("powf", pos, UnaryOp::PowF(1.7));

    for (a, c) in [(&xr, &xc), (&xc, &xr), (&xc, &xc), (&xr, &xr)] {
        let ins = [("a", a.clone()), ("c", c.clone())];
        check_primitive("add", &ins, |b, i| b.add(i[0], i[1]).unwrap());
        check_primitive("sub", &ins, |b, i| b.sub(i[0], i[1]).unwrap());
        check_primitive("mul", &ins, |b, i| b.mul(i[0], i[1]).unwrap());
    }
    check_primitive("div", &[("a", xc.clone()), ("c", pos.clone())], |b, i| {
        b.div(i[0], i[1]).unwrap()
    });
    check_primitive("div-c", &[("a", xr.clone()), ("c", xc.clone())], |b, i| {
        b.div(i[0], i[1]).unwrap()
    });
    check_primitive(
        "broadcast-mul",
        &[("a", xc.clone()), ("c", row.clone())],
        |b, i| b.mul(i[0], i[1]).unwrap(),
    );
    check_primitive(
        "scalar-broadcast",
        &[("a", xr.clone()), ("c", Tensor::scalar(0.3))],
        |b, i| b.div(i[0], i[1]).unwrap(),
    );
    check_primitive(
        "make_complex",
        &[("a", xr.clone()), ("c", pos.clone())],
        |b, i| b.make_complex(i[0], i[1]).unwrap(),
    );

    for x in [&xr, &xc] {
        let ins = [("x", x.clone())];
        check_primitive("sum_all", &ins, |b, i| b.sum_all(i[0]));
        check_primitive("mean_all", &ins, |b, i| b.mean_all(i[0]));
        check_primitive("sum_axis", &ins, |b, i| b.sum_axis(i[0], 1).unwrap());
        check_primitive("reshape", &ins, |b, i| b.reshape(i[0], &[24]).unwrap());
        check_primitive("slice", &ins, |b, i| b.slice(i[0], 1, 2, 3).unwrap());
        check_primitive("pad", &ins, |b, i| b.pad(i[0], &[(1, 0), (2, 3)]).unwrap());
        check_primitive("gather", &ins, |b, i| b.gather(i[0], &[2, 5]).unwrap());
        check_primitive("concat", &ins, |b, i| {
            let s = b.slice(i[0], 0, 1, 2).unwrap();
            b.concat(&[i[0], s], 0).unwrap()
        });
        check_primitive("dft", &ins, |b, i| b.dft(i[0], &[1]).unwrap());
        check_primitive("dft2", &ins, |b, i| b.dft(i[0], &[0, 1]).unwrap());
        check_primitive("idft", &ins, |b, i| b.idft(i[0], &[0]).unwrap());
    }
    check_primitive("broadcast_to", &[("x", row.clone())], |b, i| {
        b.broadcast_to(i[0], &[3, 6]).unwrap()
    });
    check_primitive(
        "convolve",
        &[("x", xr.clone()), ("w", kern.clone())],
        |b, i| b.convolve(i[0], i[1], 1).unwrap(),
    );
    check_primitive(
        "convolve-c",
        &[("x", xc.clone()), ("w", kc.clone())],
        |b, i| b.convolve(i[0], i[1], 1).unwrap(),
    );
    check_primitive(
        "convolve-axis0",
        &[("x", xc.clone()), ("w", kern.clone())],
        |b, i| b.convolve(i[0], i[1], 0).unwrap(),
    );
    check_primitive(
        "scale_axis",
        &[("x", xc.clone()), ("s", row.clone())],
        |b, i| b.scale_axis(i[0], i[1], 1).unwrap(),
    );
}

#[test]
fn abs_subgradient_at_zero_is_zero() {
    let mut b = GraphBuilder::new();
    let u = b.input("u", &[3], DType::Real).unwrap();
    let a = b.abs(u).unwrap();
    let l = b.sum_all(a);
    let g = b.finish(l);
    let r = g
        .gradient(&["u"], &[("u", &Tensor::vector(&[0.0, -2.0, 3.0]))])
        .unwrap();
    assert_eq!(r.grads["u"].as_real().unwrap(), &[0.0, -1.0, 1.0]);
}

#[test]
fn sum_abs_conv_kernel_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_real(&mut rng, &[16]);
    let w = rand_real(&mut rng, &[5]);
    let mut b = GraphBuilder::new();
    let xi = b.input("x", &[16], DType::Real).unwrap();
    let wi = b.input("w", &[5], DType::Real).unwrap();
    let y = b.convolve(xi, wi, 0).unwrap();
    let a = b.abs(y).unwrap();
    let l = b.sum_all(a);
    let g = b.finish(l);
    let r = g.gradient(&["w"], &[("x", &x), ("w", &w)]).unwrap();
    let fd = central_difference(
        &mut |p| {
            g.evaluate(&[("x", &x), ("w", p)])
                .unwrap()
                .as_real()
                .unwrap()[0]
        },
        &w,
        1e-5,
    );
    assert!(relative_error(&r.grads["w"], &fd, 1e-12) < 1e-6);
}

#[test]
fn evaluation_is_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_complex(&mut rng, &[8, 8]);
    let mut b = GraphBuilder::new();
    let u = b.input("u", &[8, 8], DType::Complex).unwrap();
    let f = b.dft(u, &[0, 1]).unwrap();
    let e = b.exp(f).unwrap();
    let g = b.finish(e);
    assert_eq!(
        g.evaluate(&[("u", &x)]).unwrap(),
        g.evaluate(&[("u", &x)]).unwrap()
    );
}

#[test]
fn jvp_graph_matches_finite_difference() {
    // f(x) = sigmoid(3·x0) + x0·x1², directional derivative along e0
    let mut b = GraphBuilder::new();
    let x = b.input("x", &[2], DType::Real).unwrap();
    let x0 = b.slice(x, 0, 0, 1).unwrap();
    let x1 = b.slice(x, 0, 1, 1).unwrap();
    let three = b.scalar(3.0);
    let s = b.mul(three, x0).unwrap();
    let s = b.sigmoid(s).unwrap();
    let q = b.powi(x1, 2).unwrap();
    let p = b.mul(x0, q).unwrap();
    let y = b.add(s, p).unwrap();
    let g = b.finish(y);
    let d = g.jvp_graph("x", &Tensor::vector(&[1.0, 0.0])).unwrap();
    let at = Tensor::vector(&[0.0, 2.0]);
    let out = d.evaluate(&[("x", &at)]).unwrap().as_real().unwrap()[0];
    assert!((out - (0.75 + 4.0)).abs() < 1e-14);
}

#[test]
fn inline_substitutes_leaves() {
    let mut b = GraphBuilder::new();
    let u = b.input("u", &[2], DType::Real).unwrap();
    let two = b.scalar(2.0);
    let y = b.mul(u, two).unwrap();
    let inner = b.finish(y);

    let mut b = GraphBuilder::new();
    let v = b.input("v", &[2], DType::Real).unwrap();
    let once = b.inline(&inner, |n| (n == "u").then_some(v)).unwrap();
    let twice = b.inline(&inner, |n| (n == "u").then_some(once)).unwrap();
    let g = b.finish(twice);
    let out = g.evaluate(&[("v", &Tensor::vector(&[1.0, -1.0]))]).unwrap();
    assert_eq!(out.as_real().unwrap(), &[4.0, -4.0]);
    assert!(!g.has_input("u"));
}

proptest! {
    #[test]
    fn dft_and_convolve_are_linear(
        xs in prop::collection::vec(-1.0f64..1.0, 12),
        ys in prop::collection::vec(-1.0f64..1.0, 12),
        a in -2.0f64..2.0,
        c in -2.0f64..2.0,
    ) {
        let x = Tensor::vector(&xs);
        let y = Tensor::vector(&ys);
        let mix = x.axpby(a, &y, c).unwrap();
        let mut b = GraphBuilder::new();
        let u = b.input("u", &[12], DType::Real).unwrap();
        let f = b.dft(u, &[0]).unwrap();
        let w = b.constant(Tensor::vector(&[0.5, -1.0, 0.25]));
        let k = b.convolve(u, w, 0).unwrap();
        let both = b.concat(&[f, k], 0).unwrap();
        let g = b.finish(both);
        let fx = g.evaluate(&[("u", &x)]).unwrap();
        let fy = g.evaluate(&[("u", &y)]).unwrap();
        let fm = g.evaluate(&[("u", &mix)]).unwrap();
        prop_assert!(fm.max_abs_diff(&fx.axpby(a, &fy, c).unwrap()) < 1e-12);
    }

    #[test]
    fn dft_round_trip_any_shape(n0 in 1usize..7, n1 in 1usize..9, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_complex(&mut rng, &[n0, n1]);
        let mut b = GraphBuilder::new();
        let u = b.input("u", &[n0, n1], DType::Complex).unwrap();
        let f = b.dft(u, &[0, 1]).unwrap();
        let r = b.idft(f, &[1, 0]).unwrap();
        let back = b.finish(r).evaluate(&[("u", &x)]).unwrap();
        prop_assert!(back.max_abs_diff(&x) < 1e-12);
    }
}
