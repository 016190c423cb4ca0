use std::sync::Arc;

use mglab_core::mc_verify::*;
use mglab_core::operator_core::boundary::BoundarySpec;
use mglab_core::operator_core::field::PolyField;
use mglab_core::operator_core::generator::GeneratorSpec;
use mglab_core::operator_core::polynomial::Polynomial;
use mglab_core::operator_core::test_function::{ScalarField, TestFunction};
use mglab_core::path_sim::{Ensemble, InitialLaw, PathObserver, SimConfig, Simulator};
use mglab_core::LabError;

fn ensemble(spec: GeneratorSpec, boundary: Option<BoundarySpec>, x0: f64, horizon: f64, dt: f64, n: usize, seed: u64) -> Ensemble {
    let sim = Simulator::new(spec, boundary, SimConfig::new(horizon, dt)).unwrap();
    Ensemble::new(Arc::new(sim), InitialLaw::Point(vec![x0]), seed, n).unwrap()
}

fn bm() -> GeneratorSpec {
    GeneratorSpec::linear(1, &[1.0], &[0.0], &[0.0]).unwrap()
}

fn ou() -> GeneratorSpec {
    GeneratorSpec::linear(1, &[1.0], &[-1.0], &[0.0]).unwrap()
}

fn drift() -> GeneratorSpec {
    GeneratorSpec::linear(1, &[0.0], &[0.0], &[1.0]).unwrap()
}

fn half_line() -> BoundarySpec {
    BoundarySpec::new(Polynomial::linear(&[1.0], 0.0), Arc::new(PolyField::constant(&[1.0])), vec![0.0], vec![8.0]).unwrap()
}

fn exp_neg() -> ScalarField {
    ScalarField::new("exp(-x)", |x| (-x[0]).exp())
}

#[test]
fn constant_payoff_is_exact() {
    let ens = ensemble(bm(), None, 0.0, 4.0, 0.01, 200, 1);
    let e = discounted_payoff(&ens, &ScalarField::constant(1.0), 1.0).unwrap();
    assert!((e.value - 1.0).abs() < 1e-12);
    assert_eq!(e.stderr, 0.0);
    let e = discounted_payoff(&ens, &ScalarField::constant(1.0), 2.5).unwrap();
    assert!((e.value - 0.4).abs() < 1e-12);
}

#[test]
fn drift_path_payoff() {
    let ens = ensemble(drift(), None, 0.0, 6.0, 0.01, 4, 1);
    let e = discounted_payoff(&ens, &exp_neg(), 1.0).unwrap();
    assert!((e.value - 0.5).abs() < 1e-4, "{}", e.value);
    assert!(e.value.abs() <= 1.0 / 1.0 * 1.0 + e.bias_budget);
}

#[test]
fn short_horizon_reports_required_time() {
    let ens = ensemble(bm(), None, 0.0, 0.5, 0.01, 10, 1);
    match discounted_payoff(&ens, &ScalarField::cos_pi(0), 1.0) {
        Err(LabError::Config(m)) => assert!(m.contains("need T >="), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn payoff_is_linear_on_common_paths() {
    let ens = ensemble(ou(), None, 0.4, 6.0, 0.01, 300, 9);
    let (f, g) = (ScalarField::cos_pi(0), ScalarField::tanh(0));
    let sum = f.combine(2.0, &g, -0.5);
    let v = discounted_payoffs(&ens, &[f, g, sum], &[1.0], &PayoffOptions::default()).unwrap();
    let lin = 2.0 * v[0][0].value - 0.5 * v[1][0].value;
    assert!((v[2][0].value - lin).abs() < 1e-12);
}

#[test]
fn restart_at_zero_matches_payoff() {
    let ens = ensemble(ou(), None, 0.2, 6.0, 0.01, 200, 4);
    let h = ScalarField::cos_pi(0);
    let a = discounted_payoff(&ens, &h, 1.0).unwrap();
    let b = restart_estimate(&ens, &StoppingRule::Zero, 1.0, &h).unwrap();
    assert!((a.value - b.value).abs() < 1e-12);
}

#[test]
fn restart_of_drift_path_at_one() {
    let ens = ensemble(drift(), None, 0.0, 8.0, 0.01, 3, 1);
    let e = restart_estimate(&ens, &StoppingRule::Fixed(1.0), 1.0, &exp_neg()).unwrap();
    let exact = (-1.0f64).exp() / 2.0;
    assert!((e.value - exact).abs() < 1e-4, "{} vs {exact}", e.value);
}

#[test]
fn restart_weight_can_degenerate() {
    let ens = ensemble(drift(), None, 0.0, 3.0, 0.01, 3, 1);
    let r = restart_estimate(&ens, &StoppingRule::Fixed(2.0), 20.0, &exp_neg());
    assert!(matches!(r, Err(LabError::DegenerateWeight(_))), "{r:?}");
}

#[test]
fn tower_identity_on_common_paths() {
    let ens = ensemble(bm(), None, 0.0, 6.0, 0.01, 500, 2);
    let t = tower_check(&ens, &StoppingRule::ExitBall { eps: 0.1 }, 1.0, &ScalarField::cos_pi(0)).unwrap();
    assert!(t.residual.abs() < 1e-10, "{t:?}");
}

struct ExitPoint {
    dt: f64,
    eps: f64,
    x0: f64,
    hit: Option<(f64, f64)>,
}

impl PathObserver for ExitPoint {
    fn start(&mut self, x0: &[f64]) {
        self.x0 = x0[0];
    }

    fn step(&mut self, i: usize, x: &[f64], _gamma: &[f64], _touched: bool) -> bool {
        let t = (i + 1) as f64 * self.dt;
        if (x[0] - self.x0).abs() >= self.eps || t >= self.eps - 1e-9 * self.dt {
            self.hit = Some((t, x[0]));
            return false;
        }
        true
    }
}

#[test]
fn restart_at_exit_matches_free_resolvent() {
    // Free BM: u(x) = cos(pi x) / (1 + pi^2 / 2) solves u - u''/2 = cos(pi x), so the
    // restarted payoff must equal E[H u(X_tau)] / E[H].
    let ens = ensemble(bm(), None, 0.0, 4.0, 0.01, 4000, 5);
    let k = 1.0 + std::f64::consts::PI.powi(2) / 2.0;
    let rule = StoppingRule::ExitBall { eps: 0.1 };
    let e = restart_estimate(&ens, &rule, 1.0, &ScalarField::cos_pi(0)).unwrap();
    let hits = ens
        .observe(
            |_| ExitPoint { dt: 0.01, eps: 0.1, x0: 0.0, hit: None },
            |_, o| Ok(o.hit.unwrap()),
        )
        .unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for (t, y) in hits {
        let w = (-t).exp();
        num += w * (std::f64::consts::PI * y).cos() / k;
        den += w;
    }
    let oracle = num / den;
    assert!((e.value - oracle).abs() <= e.tolerance(), "{} vs {oracle}", e.value);
}

#[test]
fn increment_test_cases() {
    let ens = ensemble(bm(), None, 0.0, 1.0, 0.01, 20000, 3);
    let bias = BiasModel::default();
    let r = martingale_increment_test(&ens, &ScalarField::constant(1.0), &ScalarField::constant(0.0), 0.5, 0.5, &[], &bias).unwrap();
    assert_eq!(r.statistic, 0.0);
    assert!(r.pass);
    let sq = ScalarField::new("x^2", |x| x[0] * x[0]);
    let r = martingale_increment_test(&ens, &sq, &ScalarField::constant(1.0), 0.5, 0.5, &[], &bias).unwrap();
    assert!(r.pass, "{}", r.to_json());
    let r = martingale_increment_test(
        &ens,
        &sq,
        &ScalarField::constant(1.0),
        0.5,
        0.5,
        &[(0.25, ScalarField::tanh(0)), (0.5, ScalarField::cos_pi(0))],
        &bias,
    )
    .unwrap();
    assert!(r.pass, "{}", r.to_json());
    let r = martingale_increment_test(&ens, &sq, &ScalarField::constant(0.0), 0.5, 0.5, &[], &bias).unwrap();
    assert!(!r.pass);
    assert!((r.statistic - 0.5).abs() < 0.05);
}

#[test]
fn increment_test_preconditions() {
    let ens = ensemble(bm(), None, 0.0, 1.0, 0.01, 10, 3);
    let bias = BiasModel::default();
    let one = ScalarField::constant(1.0);
    assert!(matches!(
        martingale_increment_test(&ens, &one, &one, 0.8, 0.5, &[], &bias),
        Err(LabError::Precondition(_))
    ));
    assert!(matches!(
        martingale_increment_test(&ens, &one, &one, 0.2, 0.5, &[(0.3, one.clone())], &bias),
        Err(LabError::Precondition(_))
    ));
}

#[test]
fn constrained_martingale_on_half_line() {
    let ens = ensemble(bm(), Some(half_line()), 0.2, 1.0, 1e-3, 4000, 8);
    let bias = BiasModel::default();
    let r = constrained_martingale_test(&ens, &TestFunction::Constant(1.0), 1.0, None, &bias).unwrap();
    assert_eq!(r.statistic, 0.0);
    let r = constrained_martingale_test(&ens, &TestFunction::Coordinate(0), 1.0, None, &bias).unwrap();
    assert!(r.pass, "{}", r.to_json());
    let r = constrained_martingale_test(&ens, &TestFunction::squared_norm(1), 1.0, Some(1.0), &bias).unwrap();
    assert!(r.pass, "{}", r.to_json());
    let free = ensemble(bm(), None, 0.2, 1.0, 0.01, 10, 8);
    assert!(matches!(
        constrained_martingale_test(&free, &TestFunction::Coordinate(0), 1.0, None, &bias),
        Err(LabError::Precondition(_))
    ));
}

#[test]
fn resolvent_identity_cases() {
    let opts = PayoffOptions::default();
    let ens = ensemble(bm(), None, 0.0, 6.0, 0.01, 3000, 6);
    let r = resolvent_identity_test(&ens, &TestFunction::Constant(2.0), 1.0, &opts).unwrap();
    assert!(r.statistic.abs() < 1e-12 && r.pass);
    let cos = TestFunction::Cosine { axis: 0, freq: 1.0, amplitude: 1.0 };
    let r = resolvent_identity_test(&ens, &cos, 1.0, &opts).unwrap();
    assert!(r.pass, "{}", r.to_json());
    let ens = ensemble(ou(), None, 1.0, 8.0, 0.01, 3000, 6);
    let r = resolvent_identity_test(&ens, &TestFunction::squared_norm(1), 1.0, &opts).unwrap();
    assert!(r.pass, "{}", r.to_json());
}

#[test]
fn laplace_matching() {
    let opts = PayoffOptions::default();
    let h = [ScalarField::tanh_sq(0)];
    let lams = [0.5, 1.0, 2.0];
    let a = ensemble(ou(), None, 0.5, 11.0, 1e-3, 2000, 1).with_label("ou");
    let b = ensemble(ou(), None, 0.5, 11.0, 1e-3, 2000, 2);
    let m = laplace_match_test(&a, &b, &h, &lams, &opts).unwrap();
    assert!(m.report.pass, "{}", m.to_csv());
    assert_eq!(m.tested, vec!["tanh(x1^2)".to_string()]);
    assert!(m.to_csv().starts_with("lambda,valueA,valueB,stderrA,stderrB,pass\n"));
    assert_eq!(m.rows.len(), 3);

    let c = ensemble(bm(), None, 0.5, 11.0, 1e-3, 2000, 3);
    let m = laplace_match_test(&a, &c, &h, &lams, &opts).unwrap();
    assert!(!m.report.pass, "{}", m.to_csv());

    let d = ensemble(ou(), None, 1.5, 11.0, 1e-3, 2000, 3);
    assert!(matches!(laplace_match_test(&a, &d, &h, &lams, &opts), Err(LabError::Precondition(_))));
}
