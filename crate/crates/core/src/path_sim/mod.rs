//! Euler simulation of diffusions, jump diffusions, and obliquely reflected
//! diffusions with explicit local times.

pub mod ensemble;
pub mod exit;
pub mod record;
pub mod rng;
pub mod simulate;

pub use ensemble::{Ensemble, InitialLaw};
pub use exit::{first_exit_time, ExitBranch, ExitTime};
pub use record::{write_paths_csv, JumpEvent, LocalTimeIncrement, PathRecord};
pub use rng::path_rng;
pub use simulate::{simulate_diffusion, simulate_jump_diffusion, simulate_reflected, PathObserver, SimConfig, Simulator, Visit};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator_core::field::PolyField;
    use crate::operator_core::generator::GeneratorSpec;
    use crate::operator_core::boundary::BoundarySpec;
    use crate::operator_core::polynomial::Polynomial;
    use std::sync::Arc;

    #[test]
    fn frozen_and_deterministic_paths() {
        let still = GeneratorSpec::linear(1, &[0.0], &[0.0], &[0.0]).unwrap();
        let p = simulate_diffusion(&still, &[1.0], 1.0, 0.01, 3).unwrap();
        assert!(p.states.iter().all(|&v| v == 1.0));
        let drift = GeneratorSpec::linear(1, &[0.0], &[0.0], &[1.0]).unwrap();
        let p = simulate_diffusion(&drift, &[0.0], 1.0, 0.01, 3).unwrap();
        assert!((p.state(p.n_steps)[0] - 1.0).abs() <= 0.01);
    }

    #[test]
    fn reproducible_from_seed() {
        let bm = GeneratorSpec::linear(1, &[1.0], &[0.0], &[0.0]).unwrap();
        let a = simulate_diffusion(&bm, &[0.0], 1.0, 0.01, 11).unwrap();
        let b = simulate_diffusion(&bm, &[0.0], 1.0, 0.01, 11).unwrap();
        let c = simulate_diffusion(&bm, &[0.0], 1.0, 0.01, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn still_path_in_interval_has_no_local_time() {
        let still = GeneratorSpec::linear(1, &[0.0], &[0.0], &[0.0]).unwrap();
        let psi = Polynomial::from_terms(&[(1.0, &[1]), (-1.0, &[2])]);
        let b = BoundarySpec::new(psi, Arc::new(PolyField::constant(&[1.0])), vec![0.0], vec![1.0]).unwrap();
        let p = simulate_reflected(&still, &b, &[0.5], 1.0, 0.01, 1).unwrap();
        assert!(p.states.iter().all(|&v| v == 0.5));
        assert!(p.local_times[0].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn outside_start_is_rejected() {
        let bm = GeneratorSpec::linear(1, &[1.0], &[0.0], &[0.0]).unwrap();
        let b = BoundarySpec::new(
            Polynomial::linear(&[1.0], 0.0),
            Arc::new(PolyField::constant(&[1.0])),
            vec![0.0],
            vec![6.0],
        )
        .unwrap();
        assert!(matches!(
            simulate_reflected(&bm, &b, &[-0.5], 1.0, 0.01, 1),
            Err(crate::error::LabError::Precondition(_))
        ));
    }

    #[test]
    fn exit_time_branches() {
        let still = GeneratorSpec::linear(1, &[0.0], &[0.0], &[0.0]).unwrap();
        let p = simulate_diffusion(&still, &[0.0], 1.0, 0.01, 1).unwrap();
        let e = first_exit_time(&p, &[0.0], 0.3);
        assert_eq!(e.branch, ExitBranch::TimeCap);
        assert_eq!(e.time, 0.3);
        let drift = GeneratorSpec::linear(1, &[0.0], &[0.0], &[1.0]).unwrap();
        let p = simulate_diffusion(&drift, &[0.0], 1.0, 0.01, 1).unwrap();
        let e = first_exit_time(&p, &[0.0], 0.5);
        assert_eq!(e.time, 0.5);
        assert!((p.time(e.index) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let bm = GeneratorSpec::linear(1, &[1.0], &[0.0], &[0.0]).unwrap();
        let p = simulate_diffusion(&bm, &[0.0], 0.02, 0.01, 1).unwrap();
        let mut out = Vec::new();
        write_paths_csv(&mut out, &[p]).unwrap();
        let s = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "path_id,t,x1,jump_flag");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,0,0,0"));
    }
}
