//! Exact finite-horizon values by backward induction.
//!
//! Final conditions that commute with translations let the state be
//! quotiented by the last coordinate: `V(m, x) = x_N + v(m, z)` with
//! `z_i = x_i - x_N`. Positions reachable in the game are integer, so `v` lives
//! on the lattice `Z^(N-1)`. Each state is a matrix-like game whose value is a
//! small LP in the adversary's event weights, with the forecaster's optimal
//! mix read from the duals.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{event_atoms, event_mean, AdversaryControl, ExpertModel, FinalCondition, ForecasterControl};
use crate::lp::{LinearProgram, Relation};
use crate::stats::KahanSum;

pub const MAX_DP_EXPERTS: usize = 4;
pub const MAX_TOTAL_STATES: usize = 20_000_000;

/// A reduced lattice point and the subtracted last coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeState {
    pub z: Vec<i64>,
    pub offset: f64,
}

impl LatticeState {
    pub fn reduced(z: Vec<i64>) -> Self {
        Self { z, offset: 0.0 }
    }

    /// Reduce an integer position `x`.
    pub fn from_position(x: &[i64]) -> Self {
        let last = *x.last().expect("nonempty position");
        Self {
            z: x[..x.len() - 1].iter().map(|v| v - last).collect(),
            offset: last as f64,
        }
    }
}

/// What the maximising player controls each round.
#[derive(Debug, Clone, PartialEq)]
pub enum AdversarySpace {
    /// One corrupted expert per round.
    Limited(ExpertModel),
    /// Any joint law of the gain vector on `{0,1}^N`.
    Full { n: usize },
}

impl AdversarySpace {
    pub fn n_experts(&self) -> usize {
        match self {
            AdversarySpace::Limited(m) => m.n_experts(),
            AdversarySpace::Full { n } => *n,
        }
    }

    pub fn n_events(&self) -> usize {
        match self {
            AdversarySpace::Limited(m) => 2 * m.n_experts(),
            AdversarySpace::Full { n } => 1 << n,
        }
    }
}

struct EventSet {
    n: usize,
    atoms: Vec<Vec<(u32, f64)>>,
    means: Vec<Vec<f64>>,
}

impl EventSet {
    fn new(space: &AdversarySpace) -> Self {
        match space {
            AdversarySpace::Limited(model) => {
                let n = model.n_experts();
                Self {
                    n,
                    atoms: (0..2 * n).map(|e| event_atoms(model, e)).collect(),
                    means: (0..2 * n).map(|e| event_mean(model, e)).collect(),
                }
            }
            AdversarySpace::Full { n } => {
                let n = *n;
                let masks = 0..(1u32 << n);
                Self {
                    n,
                    atoms: masks.clone().map(|m| vec![(m, 1.0)]).collect(),
                    means: masks.map(|m| (0..n).map(|i| ((m >> i) & 1) as f64).collect()).collect(),
                }
            }
        }
    }
}

/// The adversary's optimal mix at a state.
#[derive(Debug, Clone, PartialEq)]
pub enum AdversaryMix {
    Limited(AdversaryControl),
    /// Weights indexed by gain bitmask.
    Full(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleResult {
    pub value: f64,
    pub adversary: AdversaryMix,
    pub phi_star: ForecasterControl,
    /// `min over phi of max over alpha` minus `max over alpha of min over phi`.
    pub duality_gap: f64,
}

impl SaddleResult {
    pub fn alpha_star(&self) -> Option<&AdversaryControl> {
        match &self.adversary {
            AdversaryMix::Limited(a) => Some(a),
            AdversaryMix::Full(_) => None,
        }
    }
}

struct RawSaddle {
    value: f64,
    weights: Vec<f64>,
    phi: Vec<f64>,
    gap: f64,
}

fn solve_state(next: &impl Fn(&[i64]) -> Option<f64>, z: &[i64], ev: &EventSet) -> Result<RawSaddle> {
    let n = ev.n;
    let last = n - 1;
    let mut zn = z.to_vec();
    let mut f = Vec::with_capacity(ev.atoms.len());
    for atoms in &ev.atoms {
        let mut acc = KahanSum::new();
        for &(mask, p) in atoms {
            let gn = ((mask >> last) & 1) as i64;
            for (k, v) in zn.iter_mut().enumerate() {
                *v = z[k] + ((mask >> k) & 1) as i64 - gn;
            }
            let v = next(&zn)
                .ok_or_else(|| Error::Internal(format!("successor {zn:?} of {z:?} missing from the next slice")))?;
            acc.add(p * (gn as f64 + v));
        }
        f.push(acc.value());
    }
    let e_count = f.len();
    // variables: w (events), u
    let mut obj = f.clone();
    obj.push(-1.0);
    let mut lp = LinearProgram::maximize(obj);
    for i in 0..n {
        let mut row: Vec<f64> = ev.means.iter().map(|c| c[i]).collect();
        row.push(-1.0);
        lp.constraint(row, Relation::Le, 0.0);
    }
    let mut row = vec![1.0; e_count + 1];
    row[e_count] = 0.0;
    lp.constraint(row, Relation::Eq, 1.0);
    let sol = lp.solve()?;

    let mut phi: Vec<f64> = sol.duals[..n].iter().map(|d| d.max(0.0)).collect();
    let total: f64 = phi.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Numerical(format!("forecaster duals sum to {total}")));
    }
    phi.iter_mut().for_each(|p| *p /= total);
    let mut weights: Vec<f64> = sol.x[..e_count].iter().map(|w| w.max(0.0)).collect();
    let wt: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= wt);

    let gains: Vec<f64> = (0..n)
        .map(|i| weights.iter().zip(&ev.means).map(|(w, c)| w * c[i]).sum())
        .collect();
    let lower = weights.iter().zip(&f).map(|(w, fe)| w * fe).sum::<f64>()
        - gains.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let upper = f
        .iter()
        .zip(&ev.means)
        .map(|(fe, c)| fe - phi.iter().zip(c).map(|(p, ci)| p * ci).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(RawSaddle {
        value: sol.objective,
        weights,
        phi,
        gap: upper - lower,
    })
}

/// One backward step at `state` for the limited adversary. `next` gives the
/// reduced value of the following slice.
pub fn step_value(
    next: impl Fn(&[i64]) -> Option<f64>,
    state: &LatticeState,
    model: &ExpertModel,
) -> Result<SaddleResult> {
    if state.z.len() + 1 != model.n_experts() {
        return Err(Error::DimensionMismatch {
            expected: model.n_experts() - 1,
            got: state.z.len(),
        });
    }
    let ev = EventSet::new(&AdversarySpace::Limited(model.clone()));
    let raw = solve_state(&next, &state.z, &ev)?;
    Ok(SaddleResult {
        value: raw.value + state.offset,
        adversary: AdversaryMix::Limited(AdversaryControl::from_weights(&raw.weights)?),
        phi_star: ForecasterControl::new(raw.phi)?,
        duality_gap: raw.gap,
    })
}

#[derive(Debug, Clone)]
pub struct Slice {
    pub m: usize,
    pub radius: usize,
    dim: usize,
    values: Vec<f64>,
    weights: Vec<f64>,
    phi: Vec<f64>,
    gaps: Vec<f64>,
}

impl Slice {
    fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn index(&self, z: &[i64]) -> Option<usize> {
        let r = self.radius as i64;
        let side = self.side();
        let mut idx = 0;
        for &v in z {
            if v.abs() > r {
                return None;
            }
            idx = idx * side + (v + r) as usize;
        }
        Some(idx)
    }

    /// Lattice point of a flat index; states are stored in lexicographic order of `z`.
    pub fn state(&self, mut idx: usize) -> Vec<i64> {
        let side = self.side();
        let mut z = vec![0; self.dim];
        for k in (0..self.dim).rev() {
            z[k] = (idx % side) as i64 - self.radius as i64;
            idx /= side;
        }
        z
    }

    pub fn value(&self, z: &[i64]) -> Option<f64> {
        self.index(z).map(|i| self.values[i])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn has_saddles(&self) -> bool {
        !self.gaps.is_empty()
    }

    pub fn adversary_weights(&self, idx: usize) -> &[f64] {
        let e = self.weights.len() / self.len();
        &self.weights[idx * e..(idx + 1) * e]
    }

    pub fn forecaster(&self, idx: usize) -> &[f64] {
        let n = self.dim + 1;
        &self.phi[idx * n..(idx + 1) * n]
    }

    pub fn duality_gap(&self, idx: usize) -> f64 {
        self.gaps[idx]
    }
}

/// Reduced values `v(m, z)` for `m = 0..=M` with the saddle controls.
#[derive(Debug, Clone)]
pub struct ValueTable {
    horizon: usize,
    radius: usize,
    space: AdversarySpace,
    phi: FinalCondition,
    slices: Vec<Slice>,
}

impl ValueTable {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Radius of the initial slice.
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn space(&self) -> &AdversarySpace {
        &self.space
    }

    pub fn n_experts(&self) -> usize {
        self.space.n_experts()
    }

    pub fn final_condition(&self) -> &FinalCondition {
        &self.phi
    }

    pub fn slice(&self, m: usize) -> &Slice {
        &self.slices[m]
    }

    pub fn slices(&self) -> &[Slice] {
        &self.slices
    }

    /// Reduced value `v(m, z)`.
    pub fn value(&self, m: usize, z: &[i64]) -> Option<f64> {
        self.slices.get(m)?.value(z)
    }

    /// `V(m, x)` at an integer position.
    pub fn position_value(&self, m: usize, x: &[i64]) -> Option<f64> {
        let s = LatticeState::from_position(x);
        Some(self.value(m, &s.z)? + s.offset)
    }

    pub fn saddle(&self, m: usize, z: &[i64]) -> Option<SaddleResult> {
        let slice = self.slices.get(m)?;
        if !slice.has_saddles() {
            return None;
        }
        let idx = slice.index(z)?;
        let w = slice.adversary_weights(idx).to_vec();
        let adversary = match self.space {
            AdversarySpace::Limited(_) => AdversaryMix::Limited(AdversaryControl::from_weights(&w).ok()?),
            AdversarySpace::Full { .. } => AdversaryMix::Full(w),
        };
        Some(SaddleResult {
            value: slice.values[idx],
            adversary,
            phi_star: ForecasterControl::new(slice.forecaster(idx).to_vec()).ok()?,
            duality_gap: slice.gaps[idx],
        })
    }

    pub fn max_duality_gap(&self) -> f64 {
        self.slices
            .iter()
            .flat_map(|s| s.gaps.iter().copied())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DpOptions {
    /// Half-width of the initial slice; slice `m` covers `|z| <= radius + m`.
    pub radius: usize,
}

pub fn solve_value(horizon: usize, model: &ExpertModel, phi: &FinalCondition) -> Result<ValueTable> {
    solve_value_with(horizon, model, phi, DpOptions::default())
}

pub fn solve_value_with(
    horizon: usize,
    model: &ExpertModel,
    phi: &FinalCondition,
    opts: DpOptions,
) -> Result<ValueTable> {
    solve(horizon, AdversarySpace::Limited(model.clone()), phi, opts)
}

/// The comparison game where the adversary picks any law on `{0,1}^N`.
pub fn solve_full_adversary(horizon: usize, n: usize, phi: &FinalCondition) -> Result<ValueTable> {
    solve_full_adversary_with(horizon, n, phi, DpOptions::default())
}

pub fn solve_full_adversary_with(
    horizon: usize,
    n: usize,
    phi: &FinalCondition,
    opts: DpOptions,
) -> Result<ValueTable> {
    if n < 2 {
        return Err(Error::InvalidInput("at least two experts are required".into()));
    }
    solve(horizon, AdversarySpace::Full { n }, phi, opts)
}

/// Number of lattice states the solver would store.
pub fn state_count(horizon: usize, n: usize, radius: usize) -> u128 {
    (0..=horizon)
        .map(|m| ((2 * (radius + m) + 1) as u128).pow((n - 1) as u32))
        .sum()
}

fn solve(horizon: usize, space: AdversarySpace, phi: &FinalCondition, opts: DpOptions) -> Result<ValueTable> {
    phi.require_translation()?;
    let n = space.n_experts();
    if n > MAX_DP_EXPERTS {
        return Err(Error::Capacity(format!(
            "exact backward induction supports at most {MAX_DP_EXPERTS} experts (got {n}); \
             use the simulation experiments for larger games"
        )));
    }
    let states = state_count(horizon, n, opts.radius);
    if states > MAX_TOTAL_STATES as u128 {
        return Err(Error::Capacity(format!(
            "horizon {horizon} with {n} experts needs {states} lattice states \
             (limit {MAX_TOTAL_STATES})"
        )));
    }
    let ev = EventSet::new(&space);
    let dim = n - 1;
    let e_count = ev.atoms.len();
    let empty = |m: usize| {
        let radius = opts.radius + m;
        Slice {
            m,
            radius,
            dim,
            values: Vec::new(),
            weights: Vec::new(),
            phi: Vec::new(),
            gaps: Vec::new(),
        }
    };
    let mut terminal = empty(horizon);
    let count = (2 * terminal.radius + 1).pow(dim as u32);
    let mut x = vec![0.0; n];
    terminal.values = (0..count)
        .map(|idx| {
            for (k, v) in terminal.state(idx).into_iter().enumerate() {
                x[k] = v as f64;
            }
            x[n - 1] = 0.0;
            phi.eval(&x)
        })
        .collect();

    let mut slices = vec![terminal];
    for m in (0..horizon).rev() {
        let next = slices.last().expect("next slice");
        let mut slice = empty(m);
        let count = (2 * slice.radius + 1).pow(dim as u32);
        let lookup = |z: &[i64]| next.value(z);
        let solved: Vec<RawSaddle> = (0..count)
            .into_par_iter()
            .map(|idx| solve_state(&lookup, &slice.state(idx), &ev))
            .collect::<Result<_>>()?;
        slice.values.reserve(count);
        slice.weights.reserve(count * e_count);
        slice.phi.reserve(count * n);
        slice.gaps.reserve(count);
        for s in solved {
            slice.values.push(s.value);
            slice.weights.extend(s.weights);
            slice.phi.extend(s.phi);
            slice.gaps.push(s.gap);
        }
        slices.push(slice);
    }
    slices.reverse();
    Ok(ValueTable {
        horizon,
        radius: opts.radius,
        space,
        phi: phi.clone(),
        slices,
    })
}

/// Result of evaluating the scaled value off the lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledValue {
    pub value: f64,
    pub m: usize,
    pub z: Vec<i64>,
    /// Largest coordinate distance between `sqrt(M) x` (reduced) and the lattice point used.
    pub rounding_distance: f64,
}

// nearest integer, exact halves toward zero
fn round_half_toward_zero(v: f64) -> f64 {
    let t = v.trunc();
    if (v - t).abs() == 0.5 {
        t
    } else {
        v.round()
    }
}

/// `u^M(t, x) = V(ceil(M t), sqrt(M) x) / sqrt(M)`.
pub fn scaled_value(table: &ValueTable, t: f64, x: &[f64]) -> Result<f64> {
    scaled_value_detail(table, t, x).map(|s| s.value)
}

pub fn scaled_value_detail(table: &ValueTable, t: f64, x: &[f64]) -> Result<ScaledValue> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("t = {t} is not in [0, 1]")));
    }
    let n = table.n_experts();
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.len(),
        });
    }
    let big_m = table.horizon();
    let root = (big_m as f64).sqrt();
    let m = ((big_m as f64 * t - 1e-9).ceil().max(0.0) as usize).min(big_m);
    let y: Vec<f64> = x.iter().map(|v| v * root).collect();
    let last = y[n - 1];
    let mut z = Vec::with_capacity(n - 1);
    let mut dist: f64 = 0.0;
    for v in &y[..n - 1] {
        let rel = v - last;
        let r = round_half_toward_zero(rel);
        dist = dist.max((rel - r).abs());
        z.push(r as i64);
    }
    let v = table.value(m, &z).ok_or_else(|| {
        Error::OutOfDomain(format!(
            "reduced point {z:?} lies outside slice {m} (radius {})",
            table.slice(m).radius
        ))
    })?;
    let value = if root > 0.0 { (v + last) / root } else { v + last };
    Ok(ScaledValue {
        value,
        m,
        z,
        rounding_distance: dist,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AprioriReport {
    /// `max_z |u^M(t_m, x) - Phi(x)|` for `m = 0..=M`.
    pub max_deviation_profile: Vec<f64>,
    /// Smallest `C` with deviation `<= C (2 - t)` on every slice.
    pub linear_fit_c: f64,
    pub nondecreasing_as_t_decreases: bool,
}

pub fn check_apriori_bound(table: &ValueTable, phi: &FinalCondition) -> AprioriReport {
    let big_m = table.horizon();
    let root = (big_m.max(1) as f64).sqrt();
    let n = table.n_experts();
    let mut x = vec![0.0; n];
    let profile: Vec<f64> = table
        .slices()
        .iter()
        .map(|s| {
            (0..s.len())
                .map(|idx| {
                    for (k, v) in s.state(idx).into_iter().enumerate() {
                        x[k] = v as f64;
                    }
                    x[n - 1] = 0.0;
                    (s.values[idx] - phi.eval(&x)).abs() / root
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let c = profile
        .iter()
        .enumerate()
        .map(|(m, d)| d / (2.0 - m as f64 / big_m.max(1) as f64))
        .fold(0.0, f64::max);
    let monotone = profile.windows(2).all(|w| w[0] >= w[1] - 1e-12);
    AprioriReport {
        max_deviation_profile: profile,
        linear_fit_c: c,
        nondecreasing_as_t_decreases: monotone,
    }
}
