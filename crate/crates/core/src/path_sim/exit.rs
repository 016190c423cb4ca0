use serde::Serialize;

use super::record::PathRecord;
use crate::numerics::dist;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitBranch {
    /// The path left the ball of radius `eps` first.
    Exit,
    /// The time cap `eps` came first.
    TimeCap,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExitTime {
    pub time: f64,
    pub index: usize,
    pub branch: ExitBranch,
}

/// `tau_eps = eps ^ inf{t_i > 0 : |X(t_i) - x0| >= eps}` on the path grid.
/// The cap is realised at the first grid time `>= eps`.
pub fn first_exit_time(path: &PathRecord, x0: &[f64], eps: f64) -> ExitTime {
    let cap = path.index_at(eps);
    for i in 1..=cap {
        if dist(path.state(i), x0) >= eps {
            return ExitTime {
                time: path.time(i).min(eps),
                index: i,
                branch: if path.time(i) < eps { ExitBranch::Exit } else { ExitBranch::TimeCap },
            };
        }
    }
    ExitTime {
        time: eps,
        index: cap,
        branch: ExitBranch::TimeCap,
    }
}
