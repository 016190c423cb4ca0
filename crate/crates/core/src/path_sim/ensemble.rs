use std::sync::Arc;

use rayon::prelude::*;

use super::record::PathRecord;
use super::simulate::{PathObserver, Simulator};
use crate::error::{LabError, Result};

/// Initial law of an ensemble.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialLaw {
    Point(Vec<f64>),
    /// Path `i` starts at `points[i % len]`.
    Cycle(Vec<Vec<f64>>),
}

impl InitialLaw {
    pub fn point(&self, i: usize) -> &[f64] {
        match self {
            InitialLaw::Point(x) => x,
            InitialLaw::Cycle(v) => &v[i % v.len()],
        }
    }
}

/// A lazily generated family of paths. Path `i` is a pure function of
/// `(simulator, seed, i)`, so folds may run in parallel without storing paths.
#[derive(Clone)]
pub struct Ensemble {
    sim: Arc<Simulator>,
    init: InitialLaw,
    seed: u64,
    n_paths: usize,
    label: String,
}

impl Ensemble {
    pub fn new(sim: Arc<Simulator>, init: InitialLaw, seed: u64, n_paths: usize) -> Result<Self> {
        if n_paths == 0 {
            return Err(LabError::Precondition("ensemble needs at least one path".into()));
        }
        if let InitialLaw::Cycle(v) = &init {
            if v.is_empty() {
                return Err(LabError::Precondition("empty initial law".into()));
            }
        }
        Ok(Ensemble {
            sim,
            init,
            seed,
            n_paths,
            label: String::new(),
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn initial_law(&self) -> &InitialLaw {
        &self.init
    }

    pub fn dt(&self) -> f64 {
        self.sim.config().dt
    }

    pub fn horizon(&self) -> f64 {
        self.sim.config().n_steps() as f64 * self.sim.config().dt
    }

    pub fn path(&self, i: usize) -> Result<PathRecord> {
        self.sim.simulate(self.init.point(i), self.seed, i as u64)
    }

    /// `f` applied to every path, in path order.
    pub fn map<T, F>(&self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&PathRecord) -> T + Sync + Send,
    {
        (0..self.n_paths)
            .into_par_iter()
            .map(|i| self.path(i).map(|p| f(&p)))
            .collect()
    }

    /// Streams every path through a fresh observer from `make` and maps the
    /// finished observer with `finish`. Results come back in path order.
    pub fn observe<O, T, M, F>(&self, make: M, finish: F) -> Result<Vec<T>>
    where
        O: PathObserver,
        T: Send,
        M: Fn(usize) -> O + Sync + Send,
        F: Fn(usize, O) -> Result<T> + Sync + Send,
    {
        (0..self.n_paths)
            .into_par_iter()
            .map(|i| {
                let mut obs = make(i);
                self.sim.run(self.init.point(i), self.seed, i as u64, &mut obs)?;
                finish(i, obs)
            })
            .collect()
    }

    /// First `n` paths, materialised.
    pub fn take(&self, n: usize) -> Result<Vec<PathRecord>> {
        (0..n.min(self.n_paths)).map(|i| self.path(i)).collect()
    }
}
