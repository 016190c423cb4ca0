use rand_distr::{Distribution, Poisson, StandardNormal};

use super::record::{JumpEvent, LocalTimeIncrement, PathRecord};
use super::rng::path_rng;
use crate::error::{LabError, Result};
use crate::numerics::{dot, norm};
use crate::operator_core::boundary::BoundarySpec;
use crate::operator_core::generator::GeneratorSpec;
use crate::operator_core::jump::MarkNode;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimConfig {
    pub horizon: f64,
    pub dt: f64,
    /// Marks below this magnitude are discarded.
    pub eps_cut: f64,
    /// Sub-steps allowed for one reflection.
    pub max_push: usize,
}

impl SimConfig {
    pub fn new(horizon: f64, dt: f64) -> Self {
        SimConfig {
            horizon,
            dt,
            eps_cut: 0.1,
            max_push: 2000,
        }
    }

    pub fn with_eps_cut(mut self, eps: f64) -> Self {
        self.eps_cut = eps;
        self
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt - 1e-9).ceil().max(0.0) as usize
    }
}

struct JumpPlan {
    rate: f64,
    poisson: Option<Poisson<f64>>,
    comp_nodes: Vec<MarkNode>,
    variance_loss: f64,
}

/// Euler scheme for a generator, optionally with marked Poisson jumps and
/// oblique reflection at the boundary of `{psi > 0}`.
pub struct Simulator {
    spec: GeneratorSpec,
    boundary: Option<BoundarySpec>,
    cfg: SimConfig,
    jumps: Option<JumpPlan>,
}

impl Simulator {
    pub fn new(spec: GeneratorSpec, boundary: Option<BoundarySpec>, cfg: SimConfig) -> Result<Self> {
        if !(cfg.dt > 0.0) || !(cfg.horizon >= 0.0) {
            return Err(LabError::Config(format!(
                "need dt > 0 and horizon >= 0, got dt = {}, T = {}",
                cfg.dt, cfg.horizon
            )));
        }
        if let Some(b) = &boundary {
            if b.dim() != spec.dim() {
                return Err(LabError::Config("boundary and generator dimensions differ".into()));
            }
        }
        let jumps = match spec.jump() {
            None => None,
            Some(j) => {
                if !(cfg.eps_cut > 0.0) {
                    return Err(LabError::Config("eps_cut must be positive".into()));
                }
                let rate = j.restricted_mass(cfg.eps_cut)?;
                let mean = rate * cfg.dt;
                let poisson = if mean > 0.0 {
                    Some(Poisson::new(mean).map_err(|e| LabError::Config(e.to_string()))?)
                } else {
                    None
                };
                Some(JumpPlan {
                    rate,
                    poisson,
                    comp_nodes: j.compensator_nodes(cfg.eps_cut),
                    variance_loss: j.rho_sq_mass_below(cfg.eps_cut),
                })
            }
        };
        Ok(Simulator {
            spec,
            boundary,
            cfg,
            jumps,
        })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn boundary(&self) -> Option<&BoundarySpec> {
        self.boundary.as_ref()
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn n_pieces(&self) -> usize {
        self.boundary.as_ref().map_or(0, |b| b.n_pieces())
    }

    pub fn is_reflected(&self) -> bool {
        self.boundary.is_some()
    }

    /// Intensity of the simulated jumps `m({|z| >= eps_cut})`.
    pub fn jump_rate(&self) -> f64 {
        self.jumps.as_ref().map_or(0.0, |j| j.rate)
    }

    /// `int_{|z| < eps_cut} rho^2 dm`, the variance dropped with the small jumps.
    pub fn small_jump_variance(&self) -> f64 {
        self.jumps.as_ref().map_or(0.0, |j| j.variance_loss)
    }

    /// Path `index` of the ensemble seeded by `seed`, stored in full.
    pub fn simulate(&self, x0: &[f64], seed: u64, index: u64) -> Result<PathRecord> {
        let mut rec = Recorder::new(self, x0, seed, index);
        self.run(x0, seed, index, &mut rec)?;
        Ok(rec.finish())
    }

    /// Streams path `index` into `obs` without storing it. The path is the
    /// same one [`simulate`](Self::simulate) returns.
    pub fn run<O: PathObserver>(&self, x0: &[f64], seed: u64, index: u64, obs: &mut O) -> Result<()> {
        let d = self.spec.dim();
        let r = self.spec.noise_dim();
        if x0.len() != d {
            return Err(LabError::Precondition(format!(
                "initial point has dimension {}, expected {d}",
                x0.len()
            )));
        }
        if let Some(b) = &self.boundary {
            if !b.in_closure(x0) {
                return Err(LabError::Precondition(format!(
                    "initial point {x0:?} lies outside the closed domain (psi = {:.3e})",
                    b.psi(x0)
                )));
            }
        }
        let mut rng = path_rng(seed, index);
        let n = self.cfg.n_steps();
        let dt = self.cfg.dt;
        let sdt = dt.sqrt();
        let n_pieces = self.boundary.as_ref().map_or(0, |b| b.n_pieces());
        let events = obs.wants_events();
        obs.start(x0);

        let mut gamma = vec![0.0; n_pieces];
        let mut x = x0.to_vec();
        let mut sig = vec![0.0; d * r];
        let mut b = vec![0.0; d];
        let mut xi = vec![0.0; r];
        let mut y = vec![0.0; d];
        let mut buf = vec![0.0; d + 1];
        let mut eta = vec![0.0; d];
        let sig_const = self.spec.constant_sigma();
        let drift_const = self.spec.constant_drift();
        if let Some(c) = &sig_const {
            sig.copy_from_slice(c);
        }
        let jump = match (&self.jumps, self.spec.jump()) {
            (Some(plan), Some(j)) => Some((plan, j)),
            _ => None,
        };
        let fixed_drift = drift_const.is_some() && jump.is_none();
        if let (true, Some(c)) = (fixed_drift, &drift_const) {
            b.copy_from_slice(c);
        }
        // One-dimensional constant-coefficient diffusions skip the vector loops.
        let scalar = (d == 1 && r == 1 && fixed_drift)
            .then(|| sig_const.as_ref().map(|c| (b[0] * dt, c[0] * sdt)))
            .flatten();
        for i in 0..n {
            if let Some((bdt, s_sdt)) = scalar {
                let z: f64 = StandardNormal.sample(&mut rng);
                y[0] = x[0] + bdt + s_sdt * z;
            } else {
                if sig_const.is_none() {
                    self.spec.sigma_into(&x, &mut sig);
                }
                if !fixed_drift {
                    match &drift_const {
                        Some(c) => b.copy_from_slice(c),
                        None => self.spec.drift_into(&x, &mut b),
                    }
                }
                if let Some((plan, j)) = jump {
                    for node in &plan.comp_nodes {
                        j.eta_into(&x, node.z, &mut buf, &mut eta);
                        for k in 0..d {
                            b[k] -= node.weight * eta[k];
                        }
                    }
                }
                for v in xi.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                for k in 0..d {
                    let mut s = 0.0;
                    for m in 0..r {
                        s += sig[k * r + m] * xi[m];
                    }
                    y[k] = x[k] + b[k] * dt + s * sdt;
                }
                if let Some((plan, j)) = jump {
                    let count = plan.poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as u64);
                    for _ in 0..count {
                        let z = j.sample_mark(&mut rng, self.cfg.eps_cut, plan.rate);
                        j.eta_into(&x, z, &mut buf, &mut eta);
                        for k in 0..d {
                            y[k] += eta[k];
                        }
                        if events {
                            obs.jump(JumpEvent {
                                step: i,
                                time: (i + 1) as f64 * dt,
                                mark: z,
                                amplitude: eta.clone(),
                            });
                        }
                    }
                }
            }
            let mut touched = false;
            if let Some(bs) = &self.boundary {
                if bs.psi(&y) < 0.0 {
                    touched = true;
                    self.reflect(bs, &x, &mut y, i, &mut gamma, obs, events)?;
                }
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(LabError::Simulation {
                    step: i + 1,
                    detail: format!("non-finite state {y:?}"),
                });
            }
            std::mem::swap(&mut x, &mut y);
            if !obs.step(i, &x, &gamma, touched) {
                break;
            }
        }
        Ok(())
    }

    /// Polygonal push of `y` along the reflection field until
    /// `psi >= -tau/2`. Each leg fixes `l` at the normal projection of the
    /// current point and line-searches along it (Newton, with bisection when
    /// Newton overshoots); legs are capped in length so the field is
    /// re-evaluated often where it turns tangential.
    #[allow(clippy::too_many_arguments)]
    fn reflect<O: PathObserver>(
        &self,
        bs: &BoundarySpec,
        x_prev: &[f64],
        y: &mut [f64],
        step: usize,
        gamma: &mut [f64],
        obs: &mut O,
        events: bool,
    ) -> Result<()> {
        let d = y.len();
        if d > 8 {
            return Err(LabError::Config("reflection is implemented for dimension <= 8".into()));
        }
        let target = -0.5 * bs.boundary_tolerance();
        let move_len = y
            .iter()
            .zip(x_prev)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let leg_cap = move_len.max(self.cfg.dt.sqrt()).max(1e-9 * bs.diameter());
        let mut bufs = [[0.0; 8]; 4];
        let [l, trial, grad, p] = &mut bufs;
        let (l, trial, grad, p) = (&mut l[..d], &mut trial[..d], &mut grad[..d], &mut p[..d]);
        let mut legs = 0;
        let mut val = bs.psi(y);
        while val < target {
            if legs == self.cfg.max_push {
                return Err(LabError::Reflection {
                    point: y.to_vec(),
                    detail: format!(
                        "push along l did not re-enter the domain within {} legs",
                        self.cfg.max_push
                    ),
                });
            }
            legs += 1;
            if !bs.project_into(y, p) {
                return Err(LabError::Reflection {
                    point: y.to_vec(),
                    detail: "normal projection onto the boundary failed".into(),
                });
            }
            let Some(k) = bs.piece_at(p) else {
                return Err(LabError::Reflection {
                    point: p.to_vec(),
                    detail: "projection lies on no boundary piece".into(),
                });
            };
            bs.ell_into(k, p, l);
            let ln = norm(l);
            if !(ln > 0.0) {
                return Err(LabError::Reflection {
                    point: p.to_vec(),
                    detail: "reflection field vanishes".into(),
                });
            }
            let s_cap = leg_cap / ln;
            let at = |s: f64, out: &mut [f64]| {
                for i in 0..d {
                    out[i] = y[i] + s * l[i];
                }
            };
            // Newton along the line from s = 0.
            let mut s = 0.0;
            let mut v_s = val;
            let mut bracket = None;
            for _ in 0..50 {
                at(s, trial);
                bs.grad_psi_into(trial, grad);
                let slope = dot(grad, l);
                let next = if slope > 0.0 { (s - v_s / slope).min(s_cap) } else { s_cap };
                at(next, trial);
                let v = bs.psi(trial);
                if v >= 0.0 {
                    bracket = Some((s, next, v));
                    break;
                }
                s = next;
                v_s = v;
                if v >= target || s >= s_cap {
                    break;
                }
            }
            if let Some((mut lo, mut hi, mut v_hi)) = bracket {
                // Smallest crossing in the bracket.
                for _ in 0..60 {
                    if v_hi < 0.5 * bs.boundary_tolerance() {
                        break;
                    }
                    let mid = 0.5 * (lo + hi);
                    at(mid, trial);
                    let v = bs.psi(trial);
                    if v >= target {
                        hi = mid;
                        v_hi = v;
                    } else {
                        lo = mid;
                    }
                }
                s = hi;
                v_s = v_hi;
            }
            at(s, trial);
            y.copy_from_slice(trial);
            val = v_s;
            gamma[k] += s;
            if events {
                obs.increment(LocalTimeIncrement {
                    step,
                    piece: k,
                    point: p.to_vec(),
                    amount: s,
                });
            }
        }
        Ok(())
    }
}

/// Receives a path as it is generated.
pub trait PathObserver {
    fn start(&mut self, _x0: &[f64]) {}

    /// State at `t_{i+1}`, cumulative local times per piece, and whether the
    /// step was reflected. Returning `false` ends the path.
    fn step(&mut self, i: usize, x: &[f64], gamma: &[f64], touched: bool) -> bool;

    /// Whether local-time increments and jump events should be reported.
    fn wants_events(&self) -> bool {
        false
    }

    fn increment(&mut self, _inc: LocalTimeIncrement) {}

    fn jump(&mut self, _ev: JumpEvent) {}
}

struct Recorder {
    rec: PathRecord,
}

impl Recorder {
    fn new(sim: &Simulator, x0: &[f64], seed: u64, index: u64) -> Self {
        let n = sim.cfg.n_steps();
        let n_pieces = sim.boundary.as_ref().map_or(0, |b| b.n_pieces());
        let mut states = Vec::with_capacity((n + 1) * x0.len());
        states.extend_from_slice(x0);
        let mut contact = Vec::with_capacity(n + 1);
        contact.push(false);
        Recorder {
            rec: PathRecord {
                dim: x0.len(),
                dt: sim.cfg.dt,
                n_steps: n,
                states,
                local_times: (0..n_pieces)
                    .map(|_| {
                        let mut g = Vec::with_capacity(n + 1);
                        g.push(0.0);
                        g
                    })
                    .collect(),
                increments: Vec::new(),
                contact,
                jumps: Vec::new(),
                seed,
                path_index: index,
                eps_cut: sim.jumps.as_ref().map(|_| sim.cfg.eps_cut),
                variance_loss_bound: sim.jumps.as_ref().map_or(0.0, |j| j.variance_loss),
            },
        }
    }

    fn finish(self) -> PathRecord {
        self.rec
    }
}

impl PathObserver for Recorder {
    fn step(&mut self, _i: usize, x: &[f64], gamma: &[f64], touched: bool) -> bool {
        self.rec.states.extend_from_slice(x);
        for (g, &v) in self.rec.local_times.iter_mut().zip(gamma) {
            g.push(v);
        }
        self.rec.contact.push(touched);
        true
    }

    fn wants_events(&self) -> bool {
        true
    }

    fn increment(&mut self, inc: LocalTimeIncrement) {
        self.rec.increments.push(inc);
    }

    fn jump(&mut self, ev: JumpEvent) {
        self.rec.jumps.push(ev);
    }
}

/// Euler-Maruyama path of a generator without jumps or boundary.
pub fn simulate_diffusion(spec: &GeneratorSpec, x0: &[f64], horizon: f64, dt: f64, seed: u64) -> Result<PathRecord> {
    if spec.jump().is_some() {
        return Err(LabError::Precondition("generator has a jump part; use simulate_jump_diffusion".into()));
    }
    Simulator::new(spec.clone(), None, SimConfig::new(horizon, dt))?.simulate(x0, seed, 0)
}

/// Euler scheme plus jumps with `|z| >= eps_cut`, compensated on `[eps_cut, 1)`.
pub fn simulate_jump_diffusion(
    spec: &GeneratorSpec,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    eps_cut: f64,
    seed: u64,
) -> Result<PathRecord> {
    let cfg = SimConfig::new(horizon, dt).with_eps_cut(eps_cut);
    Simulator::new(spec.clone(), None, cfg)?.simulate(x0, seed, 0)
}

/// Euler step followed by a push along the reflection field when the step
/// leaves the domain.
pub fn simulate_reflected(
    spec: &GeneratorSpec,
    bspec: &BoundarySpec,
    x0: &[f64],
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<PathRecord> {
    Simulator::new(spec.clone(), Some(bspec.clone()), SimConfig::new(horizon, dt))?.simulate(x0, seed, 0)
}

/// Observer calling `f(index, state, gamma)` at every grid time, `index = 0`
/// being the initial point. Returning `false` ends the path.
pub struct Visit<F> {
    f: F,
    zeros: Vec<f64>,
}

impl<F> Visit<F>
where
    F: FnMut(usize, &[f64], &[f64]) -> bool,
{
    pub fn new(n_pieces: usize, f: F) -> Self {
        Visit {
            f,
            zeros: vec![0.0; n_pieces],
        }
    }

    pub fn into_inner(self) -> F {
        self.f
    }
}

impl<F> PathObserver for Visit<F>
where
    F: FnMut(usize, &[f64], &[f64]) -> bool,
{
    fn start(&mut self, x0: &[f64]) {
        (self.f)(0, x0, &self.zeros);
    }

    fn step(&mut self, i: usize, x: &[f64], gamma: &[f64], _touched: bool) -> bool {
        (self.f)(i + 1, x, gamma)
    }
}
