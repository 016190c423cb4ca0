use std::f64::consts::PI;
use std::sync::Arc;

use mglab_core::grid_resolvent::*;
use mglab_core::operator_core::boundary::BoundarySpec;
use mglab_core::operator_core::field::PolyField;
use mglab_core::operator_core::generator::GeneratorSpec;
use mglab_core::operator_core::polynomial::Polynomial;
use mglab_core::LabError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn interval() -> BoundarySpec {
    // psi = x (1 - x), l = 1 - 2x: +1 at 0 and -1 at 1.
    let psi = Polynomial::from_terms(&[(1.0, &[1]), (-1.0, &[2])]);
    let ell = PolyField::new(vec![Polynomial::linear(&[-2.0], 1.0)]);
    BoundarySpec::new(psi, Arc::new(ell), vec![0.0], vec![1.0]).unwrap()
}

fn disk_psi() -> Polynomial {
    Polynomial::from_terms(&[(1.0, &[0, 0]), (-1.0, &[2, 0]), (-1.0, &[0, 2])])
}

fn shear_disk() -> BoundarySpec {
    let ell = PolyField::new(vec![
        Polynomial::from_terms(&[(1.0, &[0, 1]), (-1.0, &[1, 0]), (1.0, &[2, 0])]),
        Polynomial::from_terms(&[(-1.0, &[1, 0]), (-1.0, &[0, 1]), (1.0, &[1, 1])]),
    ]);
    BoundarySpec::new(disk_psi(), Arc::new(ell), vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap()
}

fn bm() -> GeneratorSpec {
    GeneratorSpec::linear(1, &[1.0], &[0.0], &[0.0]).unwrap()
}

fn ou() -> GeneratorSpec {
    GeneratorSpec::linear(1, &[1.0], &[-1.0], &[0.0]).unwrap()
}

fn ou_box(dx: f64) -> Arc<Grid> {
    Arc::new(build_grid(&Domain::Box { lo: vec![-3.0], hi: vec![3.0] }, Resolution::Spacing(dx)).unwrap())
}

fn rbm_error(dx: f64) -> f64 {
    let b = interval();
    let g = Arc::new(build_grid(&Domain::Region(b.clone()), Resolution::Spacing(dx)).unwrap());
    let op = assemble(&bm(), g.clone(), 1.0, Some(&b), &AssembleOptions::default()).unwrap();
    let h = GridFunction::from_fn(g.clone(), |x| (PI * x[0]).cos()).unwrap();
    let sol = solve_resolvent(&op, &h, 1e-10).unwrap();
    let k = 1.0 + PI * PI / 2.0;
    g.points()
        .zip(sol.u.values())
        .map(|(x, u)| (u - (PI * x[0]).cos() / k).abs())
        .fold(0.0, f64::max)
}

fn ou_error(dx: f64) -> f64 {
    let g = ou_box(dx);
    let op = assemble(&ou(), g.clone(), 1.0, None, &AssembleOptions::default()).unwrap();
    let h = GridFunction::from_fn(g.clone(), |x| 3.0 * x[0] * x[0] - 1.0).unwrap();
    let sol = solve_resolvent(&op, &h, 1e-10).unwrap();
    g.points().zip(sol.u.values()).map(|(x, u)| (u - x[0] * x[0]).abs()).fold(0.0, f64::max)
}

#[test]
fn disk_interior_count_tracks_area() {
    let g = build_grid(&Domain::Region(shear_disk()), Resolution::Spacing(0.05)).unwrap();
    let c = g.counts();
    let area = PI / 0.05f64.powi(2);
    assert!((c.interior as f64 - area).abs() / area < 0.02, "{c:?}");
    assert!(c.boundary > 0);
}

#[test]
fn textbook_bm_row_and_unit_probe() {
    let g = Arc::new(build_grid(&Domain::Box { lo: vec![0.0], hi: vec![1.0] }, Resolution::Spacing(0.1)).unwrap());
    let op = assemble(&bm(), g.clone(), 1.0, None, &AssembleOptions::default()).unwrap();
    let dx2 = 0.01;
    let row: Vec<(usize, f64)> = op.row(5).collect();
    assert_eq!(row.len(), 3);
    assert_eq!(row[0].0, 4);
    assert!((row[0].1 + 1.0 / (2.0 * dx2)).abs() < 1e-9);
    assert!((row[1].1 - (1.0 + 1.0 / dx2)).abs() < 1e-9);
    assert!((row[2].1 + 1.0 / (2.0 * dx2)).abs() < 1e-9);
    let ones = op.apply(&vec![1.0; op.n_rows()]);
    for (r, v) in ones.iter().enumerate() {
        if op.kinds()[r] == RowKind::Interior {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }
    assert!(mmatrix_check(&op).pass);
}

#[test]
fn degenerate_disk_is_certified() {
    let b = shear_disk();
    let spec = GeneratorSpec::linear(2, &[1.0, 0.0, 0.0, 0.0], &[0.0; 4], &[0.0, 0.0]).unwrap();
    let g = Arc::new(build_grid(&Domain::Region(b.clone()), Resolution::Spacing(0.05)).unwrap());
    let op = assemble(&spec, g.clone(), 1.0, Some(&b), &AssembleOptions::default()).unwrap();
    assert!(op.flags().certified());
    let m = mmatrix_check(&op);
    assert!(m.pass, "{m:?}");
    let h = GridFunction::from_fn(g, |x| x[0] * x[0] - x[1]).unwrap();
    let sol = solve_resolvent(&op, &h, 1e-9).unwrap();
    assert!(sol.certified);
    assert!(sol.u.max_abs() <= h.max_abs() + 1e-6);
}

#[test]
fn constant_data_gives_constant_solution() {
    let b = interval();
    let g = Arc::new(build_grid(&Domain::Region(b.clone()), Resolution::Spacing(0.02)).unwrap());
    let op = assemble(&bm(), g.clone(), 2.0, Some(&b), &AssembleOptions::default()).unwrap();
    let sol = solve_resolvent(&op, &GridFunction::constant(g, 2.0 * 1.5), 1e-12).unwrap();
    assert!(sol.u.values().iter().all(|v| (v - 1.5).abs() < 1e-9));
    assert!(!sol.history.is_empty() && sol.residual <= 1e-12 * 3.0 * 2.0);
}

#[test]
fn neumann_interval_converges_at_first_order() {
    let (e1, e2) = (rbm_error(1.0 / 50.0), rbm_error(1.0 / 100.0));
    assert!(e1 < 0.05 && e2 < e1, "{e1} {e2}");
    assert!(rbm_error(1.0 / 200.0) <= 0.01);
}

#[test]
fn manufactured_ou_converges_at_first_order() {
    let (e1, e2) = (ou_error(0.1), ou_error(0.05));
    let order = (e1 / e2).log2();
    assert!(order >= 0.9, "{e1} {e2} {order}");
}

#[test]
fn boundary_rows_apply_to_linear_functions() {
    let b = shear_disk();
    let spec = GeneratorSpec::linear(2, &[1.0, 0.0, 0.0, 1.0], &[0.0; 4], &[0.0, 0.0]).unwrap();
    let g = Arc::new(build_grid(&Domain::Region(b.clone()), Resolution::Spacing(0.05)).unwrap());
    let op = assemble(&spec, g.clone(), 1.0, Some(&b), &AssembleOptions::default()).unwrap();
    let p = [0.7, -0.4];
    let f = GridFunction::from_fn(g.clone(), |x| p[0] * x[0] + p[1] * x[1]).unwrap();
    let mf = op.apply(f.values());
    let boundary = op.kinds().iter().filter(|k| !k.is_generator_row()).count();
    assert!(op.renormalized_rows().len() * 10 < boundary, "{}", op.renormalized_rows().len());
    for (r, kind) in op.kinds().iter().enumerate() {
        if let RowKind::Boundary(k) = kind {
            if op.renormalized_rows().contains(&r) {
                continue;
            }
            let l = b.ell(*k, g.anchor(r).unwrap());
            let expect = -(p[0] * l[0] + p[1] * l[1]);
            assert!((mf[r] - expect).abs() < 0.05, "row {r} at {:?} l={l:?}: {} vs {expect}", g.point(r), mf[r]);
        }
    }
}

#[test]
fn hand_built_positive_off_diagonal_is_listed() {
    let g = ou_box(1.0);
    let n = g.n_active();
    let mut t: Vec<(usize, usize, f64)> = (0..n).map(|r| (r, r, 2.0)).collect();
    t.push((3, 4, 0.5));
    t.push((2, 1, -0.5));
    let op = DiscreteOperator::from_triplets(g, 1.0, &t).unwrap();
    let m = mmatrix_check(&op);
    assert!(!m.pass);
    assert_eq!(m.sign_violations, vec![3]);
    assert!(m.dominance_violations.is_empty());
}

fn random_quadratics(g: &Arc<Grid>, n: usize, seed: u64) -> Vec<GridFunction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let (c, p, q): (f64, f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            GridFunction::from_fn(g.clone(), move |x| c + p * x[0] + q * x[0] * x[0]).unwrap()
        })
        .collect()
}

#[test]
fn dissipativity_and_its_negative_control() {
    let g = ou_box(0.1);
    let op = assemble(&ou(), g.clone(), 1.0, None, &AssembleOptions::default()).unwrap();
    let r = discrete_dissipativity_test(&op, 1.0, &[GridFunction::constant(g.clone(), 1.0)]).unwrap();
    assert!(r.pass && (r.samples[0].lhs - 1.0).abs() < 1e-9);
    let bank = random_quadratics(&g, 100, 1);
    assert!(discrete_dissipativity_test(&op, 1.0, &bank).unwrap().pass);
    // lambda + A_h in place of lambda - A_h.
    let flipped: Vec<(usize, usize, f64)> = op
        .triplets()
        .into_iter()
        .map(|(r, c, v)| (r, c, if r == c { 2.0 - v } else { -v }))
        .collect();
    let bad = DiscreteOperator::from_triplets(g, 1.0, &flipped).unwrap();
    assert!(!bad.flags().certified());
    assert!(!discrete_dissipativity_test(&bad, 1.0, &bank).unwrap().pass);
}

#[test]
fn dissipativity_on_constrained_grid() {
    let b = shear_disk();
    let spec = GeneratorSpec::linear(2, &[1.0, 0.0, 0.0, 0.0], &[0.0; 4], &[0.0, 0.0]).unwrap();
    let g = Arc::new(build_grid(&Domain::Region(b.clone()), Resolution::Spacing(0.1)).unwrap());
    let op = assemble(&spec, g.clone(), 1.0, Some(&b), &AssembleOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bank: Vec<GridFunction> = (0..100)
        .map(|_| {
            let c: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            GridFunction::from_fn(g.clone(), move |x| {
                c[0] + c[1] * x[0] + c[2] * x[1] + c[3] * x[0] * x[0] + c[4] * x[0] * x[1] + c[5] * x[1] * x[1]
            })
            .unwrap()
        })
        .collect();
    let r = discrete_dissipativity_test(&op, 1.0, &bank).unwrap();
    assert!(r.pass && r.certified);
}

#[test]
fn maximum_principle_and_bound() {
    let b = interval();
    let g = Arc::new(build_grid(&Domain::Region(b.clone()), Resolution::Spacing(0.01)).unwrap());
    let op = assemble(&bm(), g.clone(), 0.5, Some(&b), &AssembleOptions::default()).unwrap();
    let tol = 1e-9;
    let h = GridFunction::from_fn(g.clone(), |x| (x[0] - 0.3).max(0.0)).unwrap();
    let sol = solve_resolvent(&op, &h, tol).unwrap();
    assert!(sol.u.values().iter().all(|&v| v >= -tol));
    assert!(sol.u.max_abs() <= h.max_abs() / 0.5 + tol);
}

#[test]
fn triplet_export_and_missing_boundary() {
    let g = ou_box(1.0);
    let op = assemble(&ou(), g, 1.0, None, &AssembleOptions::default()).unwrap();
    let mut out = Vec::new();
    op.write_triplets(&mut out).unwrap();
    let s = String::from_utf8(out).unwrap();
    assert_eq!(s.lines().next().unwrap(), format!("7,7,{}", op.nnz()));
    assert_eq!(s.lines().count(), 1 + op.nnz());

    let b = interval();
    let g = Arc::new(build_grid(&Domain::Region(b), Resolution::Spacing(0.1)).unwrap());
    assert!(matches!(
        assemble(&bm(), g, 1.0, None, &AssembleOptions::default()),
        Err(LabError::Precondition(_))
    ));
}
