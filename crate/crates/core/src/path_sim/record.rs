use std::io::Write;

use serde::Serialize;

/// One push of the reflection scheme: `amount` of local time on `piece`,
/// charged at the boundary point `point` during step `step` (from `t_step`
/// to `t_{step+1}`).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalTimeIncrement {
    pub step: usize,
    pub piece: usize,
    pub point: Vec<f64>,
    pub amount: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JumpEvent {
    pub step: usize,
    pub time: f64,
    pub mark: f64,
    pub amplitude: Vec<f64>,
}

/// Discrete trajectory on the grid `t_i = i dt`, `i = 0..=n_steps`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathRecord {
    pub dim: usize,
    pub dt: f64,
    pub n_steps: usize,
    /// Row-major `(n_steps + 1) x dim`.
    pub states: Vec<f64>,
    /// One nondecreasing series of length `n_steps + 1` per boundary piece.
    pub local_times: Vec<Vec<f64>>,
    pub increments: Vec<LocalTimeIncrement>,
    /// `contact[i]`: the step ending at `t_i` was reflected.
    pub contact: Vec<bool>,
    pub jumps: Vec<JumpEvent>,
    pub seed: u64,
    pub path_index: u64,
    pub eps_cut: Option<f64>,
    /// `int_{|z| < eps_cut} rho^2 dm` for the discarded small jumps.
    pub variance_loss_bound: f64,
}

impl PathRecord {
    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| self.time(i)).collect()
    }

    #[inline]
    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.n_steps)
    }

    pub fn n_pieces(&self) -> usize {
        self.local_times.len()
    }

    /// Index of the grid time nearest `t` from above.
    pub fn index_at(&self, t: f64) -> usize {
        let k = (t / self.dt - 1e-9).ceil().max(0.0) as usize;
        k.min(self.n_steps)
    }

    /// Every local-time increase happens on a step flagged as contact, and
    /// every series starts at 0 and never decreases.
    pub fn local_time_support_holds(&self) -> bool {
        self.local_times.iter().all(|g| {
            g[0] == 0.0
                && g.windows(2)
                    .enumerate()
                    .all(|(i, w)| w[1] >= w[0] && (w[1] == w[0] || self.contact[i + 1]))
        })
    }

    fn jump_steps(&self) -> Vec<bool> {
        let mut flags = vec![false; self.n_steps + 1];
        for j in &self.jumps {
            flags[j.step + 1] = true;
        }
        flags
    }

    pub fn csv_header(dim: usize, n_pieces: usize, with_path_id: bool) -> String {
        let mut cols: Vec<String> = Vec::new();
        if with_path_id {
            cols.push("path_id".into());
        }
        cols.push("t".into());
        cols.extend((1..=dim).map(|i| format!("x{i}")));
        cols.extend((1..=n_pieces).map(|k| format!("gamma_{k}")));
        cols.push("jump_flag".into());
        cols.join(",")
    }

    /// Rows `t,x1..xd,gamma_1..gamma_m,jump_flag`, optionally prefixed by the
    /// path index.
    pub fn write_csv_rows<W: Write>(&self, w: &mut W, with_path_id: bool) -> std::io::Result<()> {
        let flags = self.jump_steps();
        for i in 0..=self.n_steps {
            if with_path_id {
                write!(w, "{},", self.path_index)?;
            }
            write!(w, "{}", self.time(i))?;
            for v in self.state(i) {
                write!(w, ",{v}")?;
            }
            for g in &self.local_times {
                write!(w, ",{}", g[i])?;
            }
            writeln!(w, ",{}", u8::from(flags[i]))?;
        }
        Ok(())
    }
}

/// Writes several records into one CSV with a `path_id` column.
pub fn write_paths_csv<W: Write>(w: &mut W, paths: &[PathRecord]) -> std::io::Result<()> {
    let Some(first) = paths.first() else {
        return Ok(());
    };
    writeln!(w, "{}", PathRecord::csv_header(first.dim, first.n_pieces(), true))?;
    for p in paths {
        p.write_csv_rows(w, true)?;
    }
    Ok(())
}
