//! Monte Carlo estimators and statistical tests: discounted payoffs, the
//! resolvent identity, martingale characterizations, restart measures and
//! Laplace-transform matching.

pub mod estimate;
pub mod laplace;
pub mod martingale;
pub mod payoff;

pub use estimate::{mean_stderr, required_horizon, tail_bound, BiasModel, McEstimate, TestReport};
pub use laplace::{ks_distance, laplace_match_test, LaplaceMatch, LaplaceRow};
pub use martingale::{constrained_martingale_test, extended_pair_test, martingale_increment_test, resolvent_identity_test};
pub use payoff::{
    discounted_payoff, discounted_payoff_with, discounted_payoffs, payoff_horizon, restart_estimate, restart_estimate_with,
    tower_check, PayoffOptions, StoppingRule, TowerCheck,
};
