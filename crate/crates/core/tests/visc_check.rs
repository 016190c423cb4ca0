use std::f64::consts::PI;
use std::sync::Arc;

use mglab_core::grid_resolvent::*;
use mglab_core::operator_core::boundary::BoundarySpec;
use mglab_core::operator_core::field::PolyField;
use mglab_core::operator_core::generator::{manufacture_rhs, GeneratorSpec};
use mglab_core::operator_core::polynomial::Polynomial;
use mglab_core::operator_core::test_function::{ScalarField, TestFunction};
use mglab_core::visc_check::*;
use mglab_core::LabError;

fn interval() -> BoundarySpec {
    let psi = Polynomial::from_terms(&[(1.0, &[1]), (-1.0, &[2])]);
    let ell = PolyField::new(vec![Polynomial::linear(&[-2.0], 1.0)]);
    BoundarySpec::new(psi, Arc::new(ell), vec![0.0], vec![1.0]).unwrap()
}

fn bm() -> GeneratorSpec {
    GeneratorSpec::linear(1, &[1.0], &[0.0], &[0.0]).unwrap()
}

fn ou() -> GeneratorSpec {
    GeneratorSpec::linear(1, &[1.0], &[-1.0], &[0.0]).unwrap()
}

struct Solved {
    u: GridFunction,
    spec: GeneratorSpec,
    h: ScalarField,
    bspec: Option<BoundarySpec>,
}

fn rbm_solve() -> Solved {
    let b = interval();
    let g = Arc::new(build_grid(&Domain::Region(b.clone()), Resolution::Spacing(1.0 / 200.0)).unwrap());
    let op = assemble(&bm(), g.clone(), 1.0, Some(&b), &AssembleOptions::default()).unwrap();
    let h = ScalarField::cos_pi(0);
    let hg = GridFunction::from_fn(g, |x| h.eval(x)).unwrap();
    let u = solve_resolvent(&op, &hg, 1e-10).unwrap().u;
    Solved { u, spec: bm(), h, bspec: Some(b) }
}

fn ou_solve() -> Solved {
    let g = Arc::new(build_grid(&Domain::Box { lo: vec![-3.0], hi: vec![3.0] }, Resolution::Spacing(0.005)).unwrap());
    let op = assemble(&ou(), g.clone(), 1.0, None, &AssembleOptions::default()).unwrap();
    let h = manufacture_rhs(&ou(), 1.0, &TestFunction::squared_norm(1)).unwrap();
    let hg = GridFunction::from_fn(g, |x| h.eval(x)).unwrap();
    let u = solve_resolvent(&op, &hg, 1e-10).unwrap().u;
    Solved { u, spec: ou(), h, bspec: None }
}

fn nearest(u: &GridFunction, x0: f64) -> usize {
    let g = u.grid();
    (0..g.n_active())
        .min_by(|&a, &b| (g.point(a)[0] - x0).abs().total_cmp(&(g.point(b)[0] - x0).abs()))
        .unwrap()
}

fn spiked(u: &GridFunction, s: usize, amount: f64) -> GridFunction {
    let mut v = u.clone();
    v.values_mut()[s] += amount;
    v
}

#[test]
fn certified_solves_pass_every_check() {
    for sc in [rbm_solve(), ou_solve()] {
        let bank = TestBank::touching(&sc.u, 1.0, 2, 0.05, 7);
        let sub = subsolution_check(&sc.u, &sc.spec, 1.0, &sc.h, &bank, None).unwrap();
        assert!(sub.pass(), "{:?}", &sub.violations[..sub.violations.len().min(3)]);
        assert!(sub.checked_count > bank.len() / 4, "{} of {}", sub.checked_count, bank.len());
        println!("slack {}", sub.slack);
        let sup = supersolution_check(&sc.u, &sc.spec, 1.0, &sc.h, &bank, None).unwrap();
        assert!(sup.pass(), "{:?}", &sup.violations[..sup.violations.len().min(3)]);
        let seq = sequential_viscosity_check(&sc.u, &sc.spec, 1.0, &sc.h, &bank, 5, None).unwrap();
        assert!(seq.pass());
        if let Some(b) = &sc.bspec {
            let (bs, bp) = boundary_viscosity_check(&sc.u, &sc.spec, b, 1.0, &sc.h, &bank, None).unwrap();
            assert!(bs.pass() && bp.pass(), "{:?} {:?}", bs.violations, bp.violations);
        }
    }
}

#[test]
fn spike_is_located_exactly() {
    for sc in [rbm_solve(), ou_solve()] {
        let s = nearest(&sc.u, 0.5);
        let up = spiked(&sc.u, s, 0.5);
        let bank = TestBank::touching(&sc.u, 1.0, 2, 0.05, 11);
        let sub = subsolution_check(&up, &sc.spec, 1.0, &sc.h, &bank, None).unwrap();
        assert!(!sub.pass());
        assert_eq!(sub.violating_nodes(), vec![s]);
        assert!(sub.violations.iter().all(|v| v.lhs > sub.slack && v.margin > 0.0));
        let seq = sequential_viscosity_check(&up, &sc.spec, 1.0, &sc.h, &bank, 5, None).unwrap();
        assert_eq!(seq.violating_nodes(), vec![s]);

        let down = spiked(&sc.u, s, -0.5);
        let sup = supersolution_check(&down, &sc.spec, 1.0, &sc.h, &bank, None).unwrap();
        assert_eq!(sup.violating_nodes(), vec![s]);
        // A downward spike does not break the subsolution side.
        assert!(subsolution_check(&down, &sc.spec, 1.0, &sc.h, &bank, None).unwrap().pass());
    }
}

#[test]
fn zero_function_with_signed_data() {
    let g = Arc::new(build_grid(&Domain::Box { lo: vec![-1.0, -1.0], hi: vec![1.0, 1.0] }, Resolution::Spacing(0.05)).unwrap());
    let spec = GeneratorSpec::linear(2, &[1.0, 0.3, 0.0, 0.8], &[0.0; 4], &[0.0, 0.0]).unwrap();
    let zero = GridFunction::constant(g.clone(), 0.0);
    let bank = TestBank::random_quadratics(&g, 1, 1.0, 1.0, 3);
    let pos = ScalarField::new("1+x^2", |x| 1.0 + x[0] * x[0]);
    let neg = ScalarField::new("-1-x^2", |x| -1.0 - x[0] * x[0]);
    let zero_h = ScalarField::constant(0.0);
    for h in [&pos, &zero_h] {
        assert!(subsolution_check(&zero, &spec, 2.0, h, &bank, None).unwrap().pass());
        assert!(sequential_viscosity_check(&zero, &spec, 2.0, h, &bank, 5, None).unwrap().pass());
    }
    for h in [&neg, &zero_h] {
        assert!(supersolution_check(&zero, &spec, 2.0, h, &bank, None).unwrap().pass());
    }
}

#[test]
fn verdicts_are_monotone_in_slack() {
    let sc = rbm_solve();
    let s = nearest(&sc.u, 0.3);
    let up = spiked(&sc.u, s, 0.2);
    let bank = TestBank::touching(&sc.u, 1.0, 1, 0.05, 5);
    let mut failures = Vec::new();
    for slack in [0.0, 0.05, 0.1, 0.2, 0.4, 1.0] {
        let r = subsolution_check(&up, &sc.spec, 1.0, &sc.h, &bank, Some(slack)).unwrap();
        failures.push(r.violations.len());
        let q = sequential_viscosity_check(&up, &sc.spec, 1.0, &sc.h, &bank, 4, Some(slack)).unwrap();
        assert!(!r.pass() || q.pass(), "plain pass must imply sequential pass at slack {slack}");
    }
    assert!(failures.windows(2).all(|w| w[1] <= w[0]), "{failures:?}");
    assert!(failures[0] > 0 && *failures.last().unwrap() == 0);
}

#[test]
fn boundary_disjunction() {
    let b = interval();
    let g = Arc::new(build_grid(&Domain::Region(b.clone()), Resolution::Spacing(0.02)).unwrap());
    let zero_h = ScalarField::constant(0.0);
    // u = 1 - 5x falls faster than f = -x, so u - f peaks at x = 0 where
    // -Bf = 1 and lambda u - Af - h = 1: both branches fail.
    let u = GridFunction::from_fn(g.clone(), |x| 1.0 - 5.0 * x[0]).unwrap();
    let f = TestFunction::quadratic(vec![0.0], vec![-1.0], vec![0.0], 0.0);
    let (sub, _) = boundary_viscosity_check(&u, &bm(), &b, 1.0, &zero_h, &TestBank::new(vec![f]), None).unwrap();
    assert!(!sub.pass());
    assert_eq!(sub.checked_count, 1);
    assert!((g.anchor(sub.violations[0].node).unwrap()[0]).abs() < 1e-9);

    // Constant solution of lambda u = lambda c.
    let c = 0.7;
    let u = GridFunction::constant(g.clone(), c);
    let bank = TestBank::random_quadratics(&g, 2, 1.0, 1.0, 9);
    let (sub, sup) = boundary_viscosity_check(&u, &bm(), &b, 2.0, &ScalarField::constant(2.0 * c), &bank, None).unwrap();
    assert!(sub.pass() && sup.pass());
    assert!(sub.checked_count > 0);

    let boxed = Arc::new(build_grid(&Domain::Box { lo: vec![0.0], hi: vec![1.0] }, Resolution::Spacing(0.1)).unwrap());
    let u = GridFunction::constant(boxed, 0.0);
    assert!(matches!(
        boundary_viscosity_check(&u, &bm(), &b, 1.0, &zero_h, &TestBank::new(vec![TestFunction::Coordinate(0)]), None),
        Err(LabError::Precondition(_))
    ));
}

#[test]
fn empty_bank_and_clipping() {
    let sc = ou_solve();
    assert!(matches!(
        subsolution_check(&sc.u, &sc.spec, 1.0, &sc.h, &TestBank::default(), None),
        Err(LabError::Precondition(_))
    ));
    let bank = TestBank::touching(&sc.u, 1.0, 0, 0.0, 1);
    let r = sequential_viscosity_check(&sc.u, &sc.spec, 1.0, &sc.h, &bank, 1_000_000, None).unwrap();
    assert!(r.pass());
    assert_eq!(r.warnings.len(), 1);
    let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    for key in ["verdict", "violations", "slack", "bank_size"] {
        assert!(json.get(key).is_some(), "{key}");
    }
    assert_eq!(json["verdict"], "pass");
}

#[test]
fn comparison_examples() {
    let sc = rbm_solve();
    let lo = sc.u.map(|_, v| v - 0.1);
    let hi = sc.u.map(|_, v| v + 0.1);
    let r = comparison_check(&lo, &hi, 1e-9).unwrap();
    assert!(r.pass());
    assert!((r.gap + 0.2).abs() < 1e-12);

    let g = Arc::new(build_grid(&Domain::Box { lo: vec![-1.0], hi: vec![1.0] }, Resolution::Nodes(21)).unwrap());
    let x = GridFunction::from_fn(g.clone(), |p| p[0]).unwrap();
    let minus_x = x.map(|_, v| -v);
    let r = comparison_check(&x, &minus_x, 1e-9).unwrap();
    assert!(!r.pass());
    assert!((r.gap - 2.0).abs() < 1e-12);
    assert!((r.point[0] - 1.0).abs() < 1e-12);

    // Ordered data gives ordered solutions.
    let b = sc.bspec.unwrap();
    let grid = sc.u.grid().clone();
    let op = assemble(&bm(), grid.clone(), 1.0, Some(&b), &AssembleOptions::default()).unwrap();
    let h_sub = GridFunction::from_fn(grid.clone(), |p| (PI * p[0]).cos() - 0.3).unwrap();
    let h_sup = GridFunction::from_fn(grid.clone(), |p| (PI * p[0]).cos() + p[0] * p[0]).unwrap();
    let a = solve_resolvent(&op, &h_sub, 1e-10).unwrap().u;
    let c = solve_resolvent(&op, &h_sup, 1e-10).unwrap().u;
    assert!(comparison_check(&a, &c, 1e-8).unwrap().pass());

    let other = GridFunction::constant(g, 0.0);
    assert!(matches!(comparison_check(&a, &other, 0.0), Err(LabError::Precondition(_))));
}

#[test]
fn range_residual_examples() {
    let spec = ou();
    let pts: Vec<Vec<f64>> = (0..=40).map(|i| vec![-2.0 + 0.1 * i as f64]).collect();
    let f = TestFunction::quadratic(vec![0.3], vec![0.5], vec![2.0], 1.0);
    let h = manufacture_rhs(&spec, 1.5, &f).unwrap();
    let bank = TestBank::new(vec![TestFunction::Coordinate(0), f.clone()]);
    let r = range_residual_check(&bank, &spec, 1.5, &h, &pts).unwrap();
    assert!(r.residual < 1e-12);
    assert_eq!(r.best.as_deref(), Some(f.descriptor().as_str()));

    let bank = TestBank::new(vec![TestFunction::Coordinate(0), TestFunction::Constant(1.0)]);
    let r = range_residual_check(&bank, &spec, 2.0, &ScalarField::constant(2.0), &pts).unwrap();
    assert_eq!(r.residual, 0.0);

    let b = interval();
    let g = build_grid(&Domain::Region(b), Resolution::Spacing(0.02)).unwrap();
    let pts: Vec<Vec<f64>> = g.points().collect();
    let bank = TestBank::random_quadratics(&g, 1, 1.0, 2.0, 4);
    let r = range_residual_check(&bank, &bm(), 1.0, &ScalarField::cos_pi(0), &pts).unwrap();
    assert!(r.residual > 0.1, "{}", r.residual);
    assert_eq!(r.per_function.len(), bank.len());
}
