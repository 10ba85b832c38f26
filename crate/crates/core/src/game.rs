//! Domain types of the corrupted-experts game.
//!
//! Each round every expert's gain is an independent Bernoulli draw with its
//! own accuracy, except for one expert picked by the adversary whose gain is
//! pinned to 0 or 1. The adversary's mixed control is a point `(a, b)` of the
//! 2N-simplex: `a[i]` is the probability of pinning expert `i` to 0, `b[i]`
//! the probability of pinning it to 1. Events are indexed `0..N` for the
//! `a` side and `N..2N` for the `b` side throughout the crate.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Tolerance for simplex membership of mixed controls.
pub const PROB_TOL: f64 = 1e-12;

/// Largest N for which the gain distribution is enumerated.
pub const MAX_ENUMERATED_EXPERTS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertModel {
    mu: Vec<f64>,
}

impl ExpertModel {
    pub fn new(mu: Vec<f64>) -> Result<Self> {
        if mu.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "at least two experts are required, got {}",
                mu.len()
            )));
        }
        for (i, m) in mu.iter().enumerate() {
            if !(0.0..=1.0).contains(m) {
                return Err(Error::InvalidInput(format!("mu[{i}] = {m} is not in [0, 1]")));
            }
        }
        Ok(Self { mu })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn n_experts(&self) -> usize {
        self.mu.len()
    }

    /// Sub-model of the listed experts, in the given order.
    pub fn restrict(&self, experts: &[usize]) -> Result<Self> {
        let mu = experts
            .iter()
            .map(|&i| {
                self.mu
                    .get(i)
                    .copied()
                    .ok_or_else(|| Error::InvalidInput(format!("expert index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(mu)
    }
}

fn check_simplex(what: &str, v: &mut [f64]) -> Result<()> {
    for (i, x) in v.iter_mut().enumerate() {
        if !x.is_finite() || *x < -PROB_TOL || *x > 1.0 + PROB_TOL {
            return Err(Error::InvalidInput(format!("{what}[{i}] = {x} is not a probability")));
        }
        *x = x.clamp(0.0, 1.0);
    }
    let total: f64 = v.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidInput(format!(
            "{what} sums to {total}, not 1 (tolerance {PROB_TOL:e})"
        )));
    }
    if total != 1.0 {
        v.iter_mut().for_each(|x| *x /= total);
    }
    Ok(())
}

/// Mixed corruption strategy for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryControl {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl AdversaryControl {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                got: b.len(),
            });
        }
        let n = a.len();
        let mut w = a;
        w.extend(b);
        check_simplex("alpha", &mut w)?;
        let b = w.split_off(n);
        Ok(Self { a: w, b })
    }

    /// From the stacked weight vector `[a..., b...]`.
    pub fn from_weights(w: &[f64]) -> Result<Self> {
        if !w.len().is_multiple_of(2) {
            return Err(Error::InvalidInput("weight vector must have even length".into()));
        }
        let n = w.len() / 2;
        Self::new(w[..n].to_vec(), w[n..].to_vec())
    }

    /// Pin expert `i` to gain `value` with probability one.
    pub fn pure(n: usize, i: usize, value: bool) -> Self {
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        if value {
            b[i] = 1.0;
        } else {
            a[i] = 1.0;
        }
        Self { a, b }
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn n_experts(&self) -> usize {
        self.a.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.a.iter().chain(&self.b).copied().collect()
    }

    /// Weight of event `e` (`e < N`: pin to 0, otherwise pin to 1).
    #[inline]
    pub fn weight(&self, e: usize) -> f64 {
        let n = self.a.len();
        if e < n {
            self.a[e]
        } else {
            self.b[e - n]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecasterControl {
    phi: Vec<f64>,
}

impl ForecasterControl {
    pub fn new(mut phi: Vec<f64>) -> Result<Self> {
        check_simplex("phi", &mut phi)?;
        Ok(Self { phi })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            phi: vec![1.0 / n as f64; n],
        }
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }
}

fn check_dims(alpha: &AdversaryControl, model: &ExpertModel) -> Result<()> {
    if alpha.n_experts() != model.n_experts() {
        return Err(Error::InvalidInput(format!(
            "control has {} experts, model has {}",
            alpha.n_experts(),
            model.n_experts()
        )));
    }
    Ok(())
}

/// Expected one-round gain of each expert.
pub fn expected_gain(alpha: &AdversaryControl, model: &ExpertModel) -> Result<Vec<f64>> {
    check_dims(alpha, model)?;
    Ok(model
        .mu()
        .iter()
        .zip(alpha.a().iter().zip(alpha.b()))
        .map(|(m, (a, b))| ((1.0 - a - b) * m + b).clamp(0.0, 1.0))
        .collect())
}

/// Expected gains when event `e` occurs.
pub fn event_mean(model: &ExpertModel, e: usize) -> Vec<f64> {
    let n = model.n_experts();
    let (k, v) = (e % n, e >= n);
    let mut c = model.mu().to_vec();
    c[k] = if v { 1.0 } else { 0.0 };
    c
}

/// Second-moment matrix `E[g g^T]` when event `e` occurs.
pub fn event_second_moment(model: &ExpertModel, e: usize) -> DMatrix<f64> {
    let c = event_mean(model, e);
    let n = c.len();
    DMatrix::from_fn(n, n, |i, j| if i == j { c[i] } else { c[i] * c[j] })
}

/// Outcomes `(gain bitmask, probability)` conditional on event `e`.
/// Bit `i` of the mask is expert `i`'s gain. Zero-probability outcomes are dropped.
pub fn event_atoms(model: &ExpertModel, e: usize) -> Vec<(u32, f64)> {
    let n = model.n_experts();
    let (k, v) = (e % n, e >= n);
    let mut atoms = vec![(if v { 1u32 << k } else { 0 }, 1.0)];
    for (i, &m) in model.mu().iter().enumerate() {
        if i == k {
            continue;
        }
        let mut next = Vec::with_capacity(atoms.len() * 2);
        for &(mask, p) in &atoms {
            if m > 0.0 {
                next.push((mask | (1 << i), p * m));
            }
            if m < 1.0 {
                next.push((mask, p * (1.0 - m)));
            }
        }
        atoms = next;
    }
    atoms.sort_by_key(|a| a.0);
    atoms
}

#[inline]
pub fn mask_gain(mask: u32, i: usize) -> f64 {
    ((mask >> i) & 1) as f64
}

/// Law of the gain vector under one adversary control.
#[derive(Debug, Clone)]
pub struct GainDistribution {
    n: usize,
    atoms: Vec<(u32, f64)>,
    mean: Vec<f64>,
    second: DMatrix<f64>,
}

impl GainDistribution {
    pub fn n_experts(&self) -> usize {
        self.n
    }

    /// Merged outcomes sorted by bitmask.
    pub fn atoms(&self) -> &[(u32, f64)] {
        &self.atoms
    }

    pub fn gain_vector(&self, mask: u32) -> Vec<f64> {
        (0..self.n).map(|i| mask_gain(mask, i)).collect()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// `Q[i][j] = E[g_i g_j]`.
    pub fn second_moment(&self) -> &DMatrix<f64> {
        &self.second
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let c = &self.mean;
        DMatrix::from_fn(self.n, self.n, |i, j| self.second[(i, j)] - c[i] * c[j])
    }

    pub fn expectation(&self, f: impl Fn(u32) -> f64) -> f64 {
        crate::stats::kahan_sum(self.atoms.iter().map(|&(m, p)| p * f(m)))
    }
}

pub fn gain_distribution(alpha: &AdversaryControl, model: &ExpertModel) -> Result<GainDistribution> {
    check_dims(alpha, model)?;
    let n = model.n_experts();
    if n > MAX_ENUMERATED_EXPERTS {
        return Err(Error::Capacity(format!(
            "gain distribution enumeration is limited to {MAX_ENUMERATED_EXPERTS} experts \
             (got {n}); use the Monte Carlo simulation path instead"
        )));
    }
    let mut merged: BTreeMap<u32, f64> = BTreeMap::new();
    for e in 0..2 * n {
        let w = alpha.weight(e);
        if w == 0.0 {
            continue;
        }
        for (mask, p) in event_atoms(model, e) {
            *merged.entry(mask).or_insert(0.0) += w * p;
        }
    }
    let atoms: Vec<(u32, f64)> = merged.into_iter().filter(|a| a.1 > 0.0).collect();
    let mean = expected_gain(alpha, model)?;
    let mut second = DMatrix::zeros(n, n);
    for e in 0..2 * n {
        let w = alpha.weight(e);
        if w != 0.0 {
            second += event_second_moment(model, e) * w;
        }
    }
    for i in 0..n {
        second[(i, i)] = mean[i];
    }
    Ok(GainDistribution { n, atoms, mean, second })
}

// ============================================================================
// Final conditions
// ============================================================================

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalKind {
    Max,
    MaxTheta,
    Custom,
}

/// Structural properties a final condition is known to have.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionFlags {
    pub lipschitz_monotone: bool,
    pub translation: bool,
    pub homogeneous: bool,
    /// Verified strict-monotonicity constant, if any.
    pub theta: Option<f64>,
}

type Evaluator = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Terminal payoff of the game.
#[derive(Clone)]
pub struct FinalCondition {
    kind: FinalKind,
    theta: f64,
    evaluator: Option<Evaluator>,
    flags: AssumptionFlags,
}

impl fmt::Debug for FinalCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FinalCondition")
            .field("kind", &self.kind)
            .field("theta", &self.theta)
            .field("flags", &self.flags)
            .finish()
    }
}

impl FinalCondition {
    pub fn max() -> Self {
        Self {
            kind: FinalKind::Max,
            theta: 0.0,
            evaluator: None,
            flags: AssumptionFlags {
                lipschitz_monotone: true,
                translation: true,
                homogeneous: true,
                theta: Some(0.0),
            },
        }
    }

    /// `(1-theta) max x + (theta/N) sum x`.
    pub fn max_theta(theta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&theta) {
            return Err(Error::InvalidInput(format!("theta = {theta} is not in [0, 1)")));
        }
        Ok(Self {
            kind: FinalKind::MaxTheta,
            theta,
            evaluator: None,
            flags: AssumptionFlags {
                lipschitz_monotone: true,
                translation: true,
                homogeneous: true,
                theta: Some(theta),
            },
        })
    }

    /// User payoff; no property is assumed until [`FinalCondition::with_verified`].
    pub fn custom(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            kind: FinalKind::Custom,
            theta: 0.0,
            evaluator: Some(Arc::new(f)),
            flags: AssumptionFlags {
                lipschitz_monotone: false,
                translation: false,
                homogeneous: false,
                theta: None,
            },
        }
    }

    /// Record the properties observed by [`check_final_condition`].
    pub fn with_verified(mut self, report: &FinalConditionReport) -> Self {
        if self.kind == FinalKind::Custom {
            self.flags = AssumptionFlags {
                lipschitz_monotone: report.monotone_ok && report.lipschitz_est.is_finite(),
                translation: report.translation_ok,
                homogeneous: report.homogeneous_ok,
                theta: (report.theta_lower_bound_est > 0.0).then_some(report.theta_lower_bound_est),
            };
            self.theta = report.theta_lower_bound_est.max(0.0);
        }
        self
    }

    pub fn kind(&self) -> FinalKind {
        self.kind
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn flags(&self) -> AssumptionFlags {
        self.flags
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self.kind {
            FinalKind::Max => x.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            FinalKind::MaxTheta => {
                let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = x.iter().sum();
                (1.0 - self.theta) * m + self.theta / x.len() as f64 * s
            }
            FinalKind::Custom => (self.evaluator.as_ref().expect("custom evaluator"))(x),
        }
    }

    /// Refuse conditions without the translation property (needed by the lattice reduction).
    pub fn require_translation(&self) -> Result<()> {
        if self.flags.translation {
            Ok(())
        } else {
            Err(Error::FinalCondition(
                "translation equivariance Phi(x + l 1) = Phi(x) + l is not verified; \
                 run check_final_condition and attach the report first"
                    .into(),
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalConditionReport {
    pub lipschitz_est: f64,
    pub monotone_ok: bool,
    pub homogeneous_ok: bool,
    pub translation_ok: bool,
    pub theta_lower_bound_est: f64,
}

/// Empirical check of the structural assumptions on `phi` in dimension `n`.
pub fn check_final_condition(
    phi: &FinalCondition,
    n: usize,
    sample_count: usize,
    radius: f64,
    seed: u64,
) -> FinalConditionReport {
    let mut rng = rng::stream(seed, 0);
    let mut lipschitz: f64 = 0.0;
    let mut monotone_ok = true;
    let mut homogeneous_ok = true;
    let mut translation_ok = true;
    let mut theta_hat = f64::INFINITY;
    let tol = |v: f64| 1e-9 * (1.0 + v.abs());
    for k in 0..sample_count.max(1) {
        let x: Vec<f64> = (0..n).map(|_| radius * (2.0 * rng.random::<f64>() - 1.0)).collect();
        // half of the perturbations move a single coordinate
        let y: Vec<f64> = if k % 2 == 0 {
            let j = rng.random_range(0..n);
            let mut y = vec![0.0; n];
            y[j] = radius * rng.random::<f64>();
            y
        } else {
            (0..n).map(|_| radius * rng.random::<f64>()).collect()
        };
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        let (fx, fxy) = (phi.eval(&x), phi.eval(&xy));
        let ysum: f64 = y.iter().sum();
        let ynorm = y.iter().copied().fold(0.0, f64::max);
        if fxy < fx - tol(fx) {
            monotone_ok = false;
        }
        if ynorm > 0.0 {
            lipschitz = lipschitz.max((fxy - fx).abs() / ynorm);
        }
        if ysum > 0.0 {
            theta_hat = theta_hat.min(n as f64 * (fxy - fx) / ysum);
        }
        let lambda = 4.0 * rng.random::<f64>();
        let xs: Vec<f64> = x.iter().map(|v| v * lambda).collect();
        let h = phi.eval(&xs);
        if (h - lambda * fx).abs() > tol(h) {
            homogeneous_ok = false;
        }
        let shift = radius * (2.0 * rng.random::<f64>() - 1.0);
        let xt: Vec<f64> = x.iter().map(|v| v + shift).collect();
        let t = phi.eval(&xt);
        if (t - fx - shift).abs() > tol(t) {
            translation_ok = false;
        }
    }
    if theta_hat.abs() < 1e-12 {
        theta_hat = 0.0;
    }
    FinalConditionReport {
        lipschitz_est: lipschitz,
        monotone_ok,
        homogeneous_ok,
        translation_ok,
        theta_lower_bound_est: theta_hat,
    }
}
