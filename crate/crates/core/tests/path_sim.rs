use std::sync::Arc;

use mglab_core::lab::registry::{alpha_jumps, poisson_jumps, unit_interval};
use mglab_core::mc_verify::mean_stderr;
use mglab_core::operator_core::GeneratorSpec;
use mglab_core::path_sim::*;
use mglab_core::LabError;

fn bm() -> GeneratorSpec {
    GeneratorSpec::linear(1, &[1.0], &[0.0], &[0.0]).unwrap()
}

fn ensemble(spec: GeneratorSpec, cfg: SimConfig, x0: f64, n: usize, seed: u64) -> Ensemble {
    let sim = Simulator::new(spec, None, cfg).unwrap();
    Ensemble::new(Arc::new(sim), InitialLaw::Point(vec![x0]), seed, n).unwrap()
}

#[test]
fn brownian_terminal_law() {
    let n = 100_000;
    let ens = ensemble(bm(), SimConfig::new(1.0, 0.01), 0.0, n, 3);
    let x1 = ens.map(|p| p.state(p.n_steps)[0]).unwrap();
    let (mean, _) = mean_stderr(&x1);
    let var = x1.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!(mean.abs() <= 3.0 / (n as f64).sqrt(), "{mean}");
    assert!((var - 1.0).abs() <= 0.05, "{var}");
}

#[test]
fn poisson_jump_counts() {
    let spec = GeneratorSpec::linear(1, &[0.0], &[0.0], &[0.0]).unwrap().with_jump(poisson_jumps().unwrap()).unwrap();
    let n = 100_000;
    let ens = ensemble(spec, SimConfig::new(1.0, 0.01), 0.0, n, 5);
    let counts = ens.map(|p| p.jumps.len() as f64).unwrap();
    let (mean, _) = mean_stderr(&counts);
    assert!((mean - 2.0).abs() <= 3.0 * (2.0 / n as f64).sqrt(), "{mean}");
}

#[test]
fn absent_jump_part_matches_diffusion() {
    let ou = GeneratorSpec::linear(1, &[0.7], &[-1.0], &[0.2]).unwrap();
    let a = simulate_diffusion(&ou, &[0.3], 1.0, 0.01, 17).unwrap();
    let b = simulate_jump_diffusion(&ou, &[0.3], 1.0, 0.01, 0.1, 17).unwrap();
    assert_eq!(a.states, b.states);
    assert!(b.jumps.is_empty());
}

#[test]
fn stable_like_small_jumps_are_accounted() {
    let spec = GeneratorSpec::linear(1, &[0.0], &[0.0], &[0.0]).unwrap().with_jump(alpha_jumps().unwrap()).unwrap();
    let p = simulate_jump_diffusion(&spec, &[0.0], 1.0, 0.01, 0.1, 2).unwrap();
    // int_{|z|<0.1} z^2 |z|^{-2.5} dz = 4 sqrt(0.1)
    assert!((p.variance_loss_bound - 4.0 * 0.1f64.sqrt()).abs() < 1e-9, "{}", p.variance_loss_bound);
    assert!(p.jumps.iter().all(|j| j.mark.abs() >= 0.1));
    assert!(matches!(simulate_jump_diffusion(&spec, &[0.0], 1.0, 0.01, 0.0, 2), Err(LabError::Config(_))));
}

#[test]
fn reflected_paths_stay_in_the_interval() {
    let b = unit_interval().unwrap();
    let sim = Simulator::new(bm(), Some(b.clone()), SimConfig::new(1.0, 1e-3)).unwrap();
    let ens = Ensemble::new(Arc::new(sim), InitialLaw::Cycle(vec![vec![0.0], vec![0.5], vec![1.0]]), 4, 300).unwrap();
    let ok = ens
        .map(|p| (0..=p.n_steps).all(|i| b.psi(p.state(i)) >= -b.boundary_tolerance()) && p.local_time_support_holds())
        .unwrap();
    assert!(ok.iter().all(|&v| v));
}

#[test]
fn mean_exit_time_is_positive_and_capped() {
    let ens = ensemble(bm(), SimConfig::new(0.2, 1e-3), 0.0, 10_000, 8);
    let taus = ens.map(|p| first_exit_time(p, &[0.0], 0.1).time).unwrap();
    let (mean, _) = mean_stderr(&taus);
    assert!(mean > 0.0 && mean <= 0.1, "{mean}");
    assert!(taus.iter().all(|&t| t > 0.0 && t <= 0.1));
}
