use std::collections::BTreeMap;
use std::f64::consts::PI;

use proptest::prelude::*;

use super::*;
use crate::discretization::Family;
use crate::geometry::Domain;
use crate::operator::Expr;
use crate::solvers::{GmresConfig, LinearMap, OperatorMap};
use crate::tensor::{DType, Tensor, C64};

fn lcg(seed: u64) -> impl FnMut() -> f64 {
    let mut s = seed;
    move || {
        s = s
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    }
}

fn random_complex(shape: &[usize], seed: u64) -> Tensor {
    let mut r = lcg(seed);
    Tensor::from_fn_complex(shape, |_| C64::new(r(), r()))
}

fn gamma_on_grid(n: usize) -> Tensor {
    let d = Domain::square(n, 1.0).unwrap();
    let fx = Family::fourier(&d, 2, DType::Real).unwrap();
    let op = pml_gamma(&Expr::field("x"), Pml::for_grid(n))
        .trace_families(&[("x", &fx)])
        .unwrap();
    op.evaluate(&[("x", &d.grid_coordinates())]).unwrap()
}

#[test]
fn pml_profile() {
    let pml = Pml::for_grid(256);
    assert_eq!(pml.onset, 110.0);
    assert_eq!(pml.width, 18.0);
    assert_eq!(pml.absorption(119.0), 0.25);
    assert_eq!(pml.absorption(-119.0), 0.25);
    assert_eq!(pml.absorption(110.0), 0.0);

    let g = gamma_on_grid(256);
    // row 247 sits at x = 119, column 128 at x = 0
    let at = |i: usize, j: usize, k: usize| g.get_c((i * 256 + j) * 2 + k);
    let expect = C64::new(1.0, 0.0) / C64::new(1.0, 0.25);
    assert!((at(247, 128, 0) - expect).norm() < 1e-15);
    assert_eq!(at(247, 128, 1), C64::new(1.0, 0.0));
    assert_eq!(at(128, 128, 0), C64::new(1.0, 0.0));
    assert_eq!(at(20, 200, 1), C64::new(1.0, 0.0));
    for z in g.to_complex_vec() {
        assert!(z.norm() <= 1.0 + 1e-15 && z.im <= 0.0);
    }
}

fn helmholtz_map(n: usize, dx: f64, pml: Pml) -> (crate::operator::TracedOperator, Domain) {
    let d = Domain::square(n, dx).unwrap();
    let fu = Family::complex_fourier(&d);
    let fc = Family::real_fourier(&d);
    let fx = Family::fourier(&d, 2, DType::Real).unwrap();
    let (u, c, x) = (Expr::field("u"), Expr::field("c"), Expr::field("x"));
    let op = helmholtz(&u, &c, &x, 1.0, pml)
        .trace_families(&[("u", &fu), ("c", &fc), ("x", &fx)])
        .unwrap();
    (op, d)
}

#[test]
fn plane_wave_solves_homogeneous_equation() {
    let n = 32;
    let (op, d) = helmholtz_map(n, 2.0 * PI / n as f64, Pml::none());
    let x = d.grid_coordinates();
    let xs = x.as_real().unwrap();
    for (kx, ky) in [(1.0, 0.0), (0.0, 1.0)] {
        let u = Tensor::from_fn_complex(&[n, n, 1], |i| {
            C64::new(0.0, kx * xs[2 * i] + ky * xs[2 * i + 1]).exp()
        });
        let c = Tensor::full(&[n, n, 1], 1.0);
        let hu = op.evaluate(&[("u", &u), ("c", &c), ("x", &x)]).unwrap();
        assert!(hu.max_abs() < 1e-6 * u.max_abs(), "{}", hu.max_abs());
    }
}

#[test]
fn helmholtz_is_linear() {
    let n = 32;
    let (op, d) = helmholtz_map(n, 1.0, Pml::for_grid(n));
    let x = d.grid_coordinates();
    let mut r = lcg(7);
    let c = Tensor::from_fn_real(&[n, n, 1], |_| 1.5 + 0.4 * r());
    let h = |u: &Tensor| op.evaluate(&[("u", u), ("c", &c), ("x", &x)]).unwrap();
    let zero = Tensor::zeros(&[n, n, 1], DType::Complex);
    assert_eq!(h(&zero).max_abs(), 0.0);
    let (u1, u2) = (random_complex(&[n, n, 1], 1), random_complex(&[n, n, 1], 2));
    let (a, b) = (C64::new(0.3, -1.2), C64::new(2.0, 0.5));
    let lhs = h(&u1.scale_c(a).add(&u2.scale_c(b)).unwrap());
    let rhs = h(&u1).scale_c(a).add(&h(&u2).scale_c(b)).unwrap();
    assert!(lhs.max_abs_diff(&rhs) < 1e-10 * rhs.max_abs());
}

#[test]
fn adjoint_matches_inner_product() {
    let cfg = HelmholtzProblem::scaled(32).unwrap();
    let p = LensProblem::new(cfg).unwrap();
    let sys = p.system();
    let rho = p.initial_params();
    let c = p.config.speed_of_sound(&rho).unwrap();
    let params = BTreeMap::from([("c".to_string(), c)]);
    let x = random_complex(&[32, 32, 1], 3);
    let y = random_complex(&[32, 32, 1], 4);
    let ax = sys.apply(&params, &x).unwrap();
    let ahy = sys.apply_adjoint(&params, &y).unwrap();
    let (l, r) = (y.dot(&ax), ahy.dot(&x));
    assert!((l - r).norm() < 1e-10 * l.norm(), "{l} vs {r}");
}

#[test]
fn operator_map_adjoint_for_constant_speed() {
    let n = 16;
    let (op, d) = helmholtz_map(n, 1.0, Pml::for_grid(n));
    let fu = Family::complex_fourier(&d);
    let fc = Family::real_fourier(&d);
    let fx = Family::fourier(&d, 2, DType::Real).unwrap();
    let (u, c, x) = (Expr::field("u"), Expr::field("c"), Expr::field("x"));
    let adj = helmholtz_adjoint(&u, &c, &x, 1.0, Pml::for_grid(n))
        .trace_families(&[("u", &fu), ("c", &fc), ("x", &fx)])
        .unwrap();
    let fixed = BTreeMap::from([
        ("c".to_string(), Tensor::full(&[n, n, 1], 1.0)),
        ("x".to_string(), d.grid_coordinates()),
    ]);
    let map = OperatorMap {
        op: &op,
        adjoint: Some(&adj),
        unknown: "u",
        fixed: &fixed,
    };
    let a = random_complex(&[n, n, 1], 8);
    let b = random_complex(&[n, n, 1], 9);
    let l = b.dot(&map.apply(&a).unwrap());
    let r = map.adjoint_apply(&b).unwrap().dot(&a);
    assert!((l - r).norm() < 1e-10 * l.norm());
}

fn real_field(n: usize, seed: u64) -> crate::discretization::Field {
    let d = Domain::square(n, 1.0).unwrap();
    let mut r = lcg(seed);
    Family::real_fourier(&d)
        .field("c", Tensor::from_fn_real(&[n, n, 1], |_| r()))
        .unwrap()
}

#[test]
fn tv_basic_properties() {
    let d = Domain::square(16, 1.0).unwrap();
    let f = Family::real_fourier(&d);
    let constant = f.field("c", Tensor::full(&[16, 16, 1], 3.0)).unwrap();
    assert!(tv_value(&constant).unwrap().abs() < 1e-14);

    let c = real_field(16, 5);
    let tv = tv_value(&c).unwrap();
    assert!(tv > 0.0);
    let shifted = c
        .with_params(c.params.map_real(|v| v + 2.5).unwrap())
        .unwrap();
    assert!((tv_value(&shifted).unwrap() - tv).abs() < 1e-12);
    let scaled = c.with_params(c.params.scale(-3.0)).unwrap();
    assert!((tv_value(&scaled).unwrap() - 3.0 * tv).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn tv_is_nonnegative(seed in any::<u64>()) {
        prop_assert!(tv_value(&real_field(8, seed)).unwrap() >= 0.0);
    }
}

#[test]
fn scaled_configurations() {
    let r = HelmholtzProblem::reference();
    assert_eq!(
        r.lens,
        LensRegion {
            row: 44,
            rows: 168,
            col: 108,
            cols: 40
        }
    );
    assert_eq!(r.target, [70, 210]);
    assert_eq!(r.source.get_c(128 * 256 + 40), C64::new(1.0, 0.0));
    assert_eq!(r.source.sum_c(), C64::new(1.0, 0.0));
    assert_eq!(r.lambda_tv, 1e-4);
    assert_eq!(r.omega, 1.0);

    let s = HelmholtzProblem::scaled(64).unwrap();
    assert_eq!(
        s.lens,
        LensRegion {
            row: 11,
            rows: 42,
            col: 27,
            cols: 10
        }
    );
    assert_eq!(s.target, [17, 52]);
    assert_eq!(s.source.get_c(32 * 64 + 10), C64::new(1.0, 0.0));
    assert_eq!(s.pml.onset, 27.5);
}

#[test]
fn lens_must_avoid_the_absorbing_layer() {
    let mut p = HelmholtzProblem::scaled(64).unwrap();
    p.lens.row = 1;
    assert!(matches!(
        p.validate(),
        Err(crate::Error::RegionOutOfBounds(_))
    ));
    p.lens.row = 40;
    assert!(matches!(
        p.validate(),
        Err(crate::Error::RegionOutOfBounds(_))
    ));
}

#[test]
fn sound_speed_parametrization() {
    let p = HelmholtzProblem::scaled(32).unwrap();
    let l = p.lens;
    let c = p
        .speed_of_sound(&Tensor::zeros(&l.shape(), DType::Real))
        .unwrap();
    let cv = c.as_real().unwrap();
    for i in 0..32 {
        for j in 0..32 {
            let inside =
                (l.row..l.row + l.rows).contains(&i) && (l.col..l.col + l.cols).contains(&j);
            assert_eq!(cv[i * 32 + j], if inside { 1.5 } else { 1.0 });
        }
    }
    let c = p.speed_of_sound(&Tensor::full(&l.shape(), -4.0)).unwrap();
    let expect = 1.0 + 1.0 / (1.0 + 4f64.exp());
    assert!((c.as_real().unwrap()[l.row * 32 + l.col] - expect).abs() < 1e-15);
    assert!((expect - 1.0180).abs() < 1e-4);

    let c = p
        .speed_of_sound(&Tensor::from_fn_real(&l.shape(), |i| {
            (i as f64 - 50.0) * 0.3
        }))
        .unwrap();
    for (k, v) in c.as_real().unwrap().iter().enumerate() {
        let (i, j) = (k / 32, k % 32);
        let inside = (l.row..l.row + l.rows).contains(&i) && (l.col..l.col + l.cols).contains(&j);
        if inside {
            assert!(*v > 1.0 && *v < 2.0);
        } else {
            assert_eq!(*v, 1.0);
        }
    }
}

#[test]
fn initial_params_are_seeded() {
    let a = init_lens_params(42, &[168, 40]);
    assert_eq!(a, init_lens_params(42, &[168, 40]));
    assert_ne!(a, init_lens_params(43, &[168, 40]));
    let v = a.as_real().unwrap();
    assert!(v.iter().all(|x| (-4.0..-3.0).contains(x)));
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    assert!((mean + 3.5).abs() < 0.02);
    let p = HelmholtzProblem::reference();
    let c = p.speed_of_sound(&a).unwrap();
    let l = p.lens;
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let (lo, hi) = (1.0 + sig(-4.0), 1.0 + sig(-3.0));
    assert!((lo - 1.018).abs() < 1e-4 && (hi - 1.047).abs() < 1e-3);
    for i in l.row..l.row + l.rows {
        for j in l.col..l.col + l.cols {
            let v = c.as_real().unwrap()[i * 256 + j];
            assert!(v >= lo && v < hi);
        }
    }
}

#[test]
fn zero_source_gives_zero_loss() {
    let mut cfg = HelmholtzProblem::scaled(32).unwrap();
    cfg.lambda_tv = 0.0;
    cfg.source = Tensor::zeros(&[32, 32, 1], DType::Complex);
    let p = LensProblem::new(cfg).unwrap();
    let e = p.evaluate(&p.initial_params(), true).unwrap();
    assert_eq!(e.loss, 0.0);
    assert_eq!(e.grad.unwrap().max_abs(), 0.0);
}

#[test]
fn source_sign_only_rotates_phase() {
    let mut cfg = HelmholtzProblem::scaled(32).unwrap();
    cfg.gmres = GmresConfig {
        tol: 1e-10,
        ..Default::default()
    };
    let p = LensProblem::new(cfg.clone()).unwrap();
    cfg.source = cfg.source.scale(-1.0);
    let q = LensProblem::new(cfg).unwrap();
    let rho = p.initial_params();
    let (a, b) = (
        p.evaluate(&rho, false).unwrap(),
        q.evaluate(&rho, false).unwrap(),
    );
    assert!(a.converged() && b.converged());
    assert!((a.loss - b.loss).abs() < 1e-12);
    assert!(a.u.add(&b.u).unwrap().max_abs() < 1e-12);
}

#[test]
fn lens_gradient_matches_finite_differences() {
    let mut cfg = HelmholtzProblem::scaled(32).unwrap();
    cfg.gmres = GmresConfig {
        tol: 1e-8,
        ..Default::default()
    };
    // a larger weight makes the regularizer's share of the gradient visible
    cfg.lambda_tv = 1e-2;
    let p = LensProblem::new(cfg).unwrap();
    let mut r = lcg(21);
    let rho = Tensor::from_fn_real(&p.config.lens.shape(), |_| 2.0 * r());
    let e = p.evaluate(&rho, true).unwrap();
    assert!(e.converged());
    let g = e.grad.unwrap();
    let gv = g.as_real().unwrap();
    let scale = gv.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let h = 1e-3;
    for k in [0, 17, 40, 63, gv.len() - 1] {
        let f = |d: f64| {
            let mut v = rho.as_real().unwrap().to_vec();
            v[k] += d;
            p.loss(&Tensor::real(rho.shape(), v).unwrap()).unwrap()
        };
        let fd = (f(h) - f(-h)) / (2.0 * h);
        let err = (fd - gv[k]).abs() / scale;
        assert!(
            err < 1e-4,
            "entry {k}: analytic {} fd {fd} rel {err}",
            gv[k]
        );
    }
}

#[test]
fn adam_zero_gradient_is_a_fixed_point() {
    let s = AdamState::new(&[3], 0.1, 0.9, 0.9);
    let p = Tensor::vector(&[1.0, -2.0, 3.0]);
    let (s, q) = adam_step(&s, &p, &Tensor::zeros(&[3], DType::Real)).unwrap();
    assert_eq!(p, q);
    assert_eq!(s.t, 1);
}

#[test]
fn adam_first_step_is_sign_step() {
    let s = AdamState::new(&[4], 0.1, 0.9, 0.9);
    let p = Tensor::zeros(&[4], DType::Real);
    let g = Tensor::vector(&[3.0, -0.5, 1e-3, -40.0]);
    let (_, q) = adam_step(&s, &p, &g).unwrap();
    for (gi, qi) in g.as_real().unwrap().iter().zip(q.as_real().unwrap()) {
        let expect = -0.1 * gi / (gi.abs() + 1e-8);
        assert!((qi - expect).abs() < 1e-12);
        assert!((qi + 0.1 * gi.signum()).abs() < 1e-6);
    }
}

#[test]
fn adam_moves_against_gradient_and_is_odd() {
    let s0 = AdamState::new(&[2], 0.1, 0.9, 0.9);
    let p0 = Tensor::vector(&[0.5, 0.5]);
    let g = Tensor::vector(&[2.0, -1.0]);
    let (s1, p1) = adam_step(&s0, &p0, &g).unwrap();
    let (_, p2) = adam_step(&s1, &p1, &g).unwrap();
    let (v0, v1, v2) = (
        p0.as_real().unwrap(),
        p1.as_real().unwrap(),
        p2.as_real().unwrap(),
    );
    assert!(v2[0] < v1[0] && v1[0] < v0[0]);
    assert!(v2[1] > v1[1] && v1[1] > v0[1]);

    let (_, m) = adam_step(&s0, &p0, &g.scale(-1.0)).unwrap();
    let d_plus = p1.sub(&p0).unwrap();
    let d_minus = m.sub(&p0).unwrap();
    assert!(d_plus.add(&d_minus).unwrap().max_abs() < 1e-9);
}

#[test]
fn adam_rejects_shape_mismatch() {
    let s = AdamState::new(&[2], 0.1, 0.9, 0.9);
    let r = adam_step(&s, &Tensor::vector(&[1.0, 2.0]), &Tensor::vector(&[1.0]));
    assert!(matches!(r, Err(crate::Error::ShapeMismatch { .. })));
}
