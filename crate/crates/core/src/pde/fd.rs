//! Explicit finite differences for the two-expert limit in the difference coordinate.
//!
//! `dw/dt + max over c in {c_min, c_max} of a(c) w'' = 0` with
//! `a(c) = c (1 - mu1 - mu2) + mu1 mu2`, solved backward from `t = 1`.

use serde::{Deserialize, Serialize};

use crate::balanced::BalancedAnalysis;
use crate::error::{Error, Result};
use crate::game::ExpertModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub z_min: f64,
    pub z_max: f64,
    pub nz: usize,
    pub nt: usize,
    /// Number of stored time slices, evenly spaced, including `t = 1` and `t = 0`.
    #[serde(default = "default_slices")]
    pub time_slices: usize,
}

fn default_slices() -> usize {
    2
}

impl GridSpec {
    pub fn new(z_min: f64, z_max: f64, nz: usize, nt: usize) -> Self {
        Self {
            z_min,
            z_max,
            nz,
            nt,
            time_slices: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub spec: GridSpec,
    pub dz: f64,
    pub dt: f64,
    /// Stored times in increasing order; `values[k]` is `w(times[k], .)`.
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl Grid1D {
    pub fn z(&self, j: usize) -> f64 {
        self.spec.z_min + j as f64 * self.dz
    }

    /// Slice at `t = 0`.
    pub fn initial(&self) -> &[f64] {
        &self.values[0]
    }

    /// Linear interpolation of `w(0, z)`.
    pub fn w0(&self, z: f64) -> Result<f64> {
        let pos = (z - self.spec.z_min) / self.dz;
        if pos < 0.0 || pos > (self.spec.nz - 1) as f64 {
            return Err(Error::OutOfDomain(format!("z = {z} is outside the grid")));
        }
        let j = (pos.floor() as usize).min(self.spec.nz - 2);
        let f = pos - j as f64;
        let v = &self.values[0];
        Ok(v[j] * (1.0 - f) + v[j + 1] * f)
    }
}

/// Diffusion coefficient on `w''` for balance constant `c`.
pub fn reduced_coefficient(c: f64, mu1: f64, mu2: f64) -> f64 {
    c * (1.0 - mu1 - mu2) + mu1 * mu2
}

/// Scheme with terminal data `(1-theta) z^+ + theta z / 2`.
pub fn solve_reduced_fd(
    model: &ExpertModel,
    analysis: &BalancedAnalysis,
    theta: f64,
    spec: GridSpec,
) -> Result<Grid1D> {
    if !(0.0..1.0).contains(&theta) {
        return Err(Error::InvalidInput(format!("theta = {theta} is not in [0, 1)")));
    }
    solve_reduced_fd_terminal(model, analysis, spec, |z| (1.0 - theta) * z.max(0.0) + 0.5 * theta * z)
}

/// Scheme with arbitrary terminal data. The boundary nodes keep their terminal
/// values, which is exact when the data are affine near both ends.
pub fn solve_reduced_fd_terminal(
    model: &ExpertModel,
    analysis: &BalancedAnalysis,
    spec: GridSpec,
    terminal: impl Fn(f64) -> f64,
) -> Result<Grid1D> {
    if model.n_experts() != 2 {
        return Err(Error::InvalidInput(
            "the reduced scheme needs exactly two experts".into(),
        ));
    }
    if !(spec.z_max > spec.z_min) || spec.nz < 3 || spec.nt == 0 || spec.time_slices < 2 {
        return Err(Error::InvalidInput(
            "grid needs z_min < z_max, nz >= 3, nt >= 1 and at least two stored slices".into(),
        ));
    }
    let (c_min, c_max) = analysis.require_feasible()?;
    let (mu1, mu2) = (model.mu()[0], model.mu()[1]);
    let a_lo = reduced_coefficient(c_min, mu1, mu2);
    let a_hi = reduced_coefficient(c_max, mu1, mu2);
    let a_max = a_lo.abs().max(a_hi.abs());
    let dz = (spec.z_max - spec.z_min) / (spec.nz - 1) as f64;
    let dt = 1.0 / spec.nt as f64;
    let ratio = dt * a_max / (dz * dz);
    if ratio > 0.5 {
        return Err(Error::Cfl {
            ratio,
            suggested_nt: (a_max / (0.5 * dz * dz)).ceil() as usize,
        });
    }
    let z = |j: usize| spec.z_min + j as f64 * dz;
    let mut w: Vec<f64> = (0..spec.nz).map(|j| terminal(z(j))).collect();
    let last = spec.nz - 1;
    let (left, right) = (w[0], w[last]);

    let mut save_at: Vec<usize> = (0..spec.time_slices)
        .map(|k| k * spec.nt / (spec.time_slices - 1))
        .collect();
    save_at.dedup();
    let mut times = Vec::with_capacity(spec.time_slices);
    let mut values = Vec::with_capacity(spec.time_slices);
    let mut save = |step: usize, w: &[f64]| {
        if save_at.contains(&step) {
            times.push((spec.nt - step) as f64 / spec.nt as f64);
            values.push(w.to_vec());
        }
    };
    save(0, &w);
    let mut next = w.clone();
    for step in 1..=spec.nt {
        for j in 1..last {
            let d2 = (w[j + 1] - 2.0 * w[j] + w[j - 1]) / (dz * dz);
            next[j] = w[j] + dt * (a_lo * d2).max(a_hi * d2);
        }
        next[0] = left;
        next[last] = right;
        std::mem::swap(&mut w, &mut next);
        save(step, &w);
    }
    times.reverse();
    values.reverse();
    Ok(Grid1D {
        spec,
        dz,
        dt,
        times,
        values,
    })
}
