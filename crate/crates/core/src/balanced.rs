//! Balanced adversary controls.
//!
//! A control is balanced when every expert has the same expected gain `c`.
//! Such a `c` exists exactly when the dispersion `s(c)` is at most one; the
//! feasible constants form the interval `[c_min, c_max]` around the
//! minimiser of `s`. For balanced controls the second-moment matrix is affine
//! in `c`: `Q = c Sigma1 - Sigma2`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{event_mean, event_second_moment, expected_gain, AdversaryControl, ExpertModel};
use crate::lp::{LinearProgram, Relation};

/// Maximum tolerated disagreement between the dispersion roots and the LP extremes.
pub const LP_AGREEMENT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaPair {
    pub sigma1: DMatrix<f64>,
    pub sigma2: DMatrix<f64>,
}

impl SigmaPair {
    pub fn new(model: &ExpertModel) -> Self {
        let mu = model.mu();
        let n = mu.len();
        Self {
            sigma1: DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { mu[i] + mu[j] }),
            sigma2: DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { mu[i] * mu[j] }),
        }
    }

    /// `c Sigma1 - Sigma2`.
    pub fn covariance(&self, c: f64) -> DMatrix<f64> {
        &self.sigma1 * c - &self.sigma2
    }
}

/// Frobenius pairing `sum_ij A_ij B_ij` (equals `Tr(A B)` for symmetric matrices).
pub fn frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalancedAnalysis {
    pub feasible: bool,
    pub c_min: Option<f64>,
    pub c_max: Option<f64>,
    pub argmin_c: f64,
    pub s_min: f64,
}

impl BalancedAnalysis {
    pub fn require_feasible(&self) -> Result<(f64, f64)> {
        match (self.feasible, self.c_min, self.c_max) {
            (true, Some(lo), Some(hi)) => Ok((lo, hi)),
            _ => Err(Error::Infeasible { s_min: self.s_min }),
        }
    }
}

// 0/0 = 0, positive/0 = +inf, negative/0 = -inf
fn ext_ratio(num: f64, den: f64) -> f64 {
    if den != 0.0 {
        num / den
    } else if num == 0.0 {
        0.0
    } else if num > 0.0 {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    }
}

fn dispersion_unchecked(c: f64, mu: &[f64]) -> f64 {
    mu.iter()
        .map(|&m| ext_ratio(m - c, m).max(ext_ratio(c - m, 1.0 - m)))
        .sum()
}

/// `s(c) = sum_i max((mu_i - c)/mu_i, (c - mu_i)/(1 - mu_i))`.
pub fn dispersion(c: f64, model: &ExpertModel) -> Result<f64> {
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::InvalidInput(format!("c = {c} is not in [0, 1]")));
    }
    Ok(dispersion_unchecked(c, model.mu()))
}

// Root of s = level on [lo, hi] where s(lo) > level >= s(hi) or the reverse.
fn level_crossing(mu: &[f64], lo: f64, hi: f64, level: f64, tol: f64) -> f64 {
    let (slo, shi) = (dispersion_unchecked(lo, mu), dispersion_unchecked(hi, mu));
    if slo.is_finite() && shi.is_finite() && slo != shi {
        let c = lo + (slo - level) * (hi - lo) / (slo - shi);
        if c >= lo && c <= hi && (dispersion_unchecked(c, mu) - level).abs() <= 1e-12 {
            return c;
        }
    }
    let decreasing = slo > shi;
    let (mut a, mut b) = (lo, hi);
    while b - a > tol {
        let mid = 0.5 * (a + b);
        let above = dispersion_unchecked(mid, mu) > level;
        if above == decreasing {
            a = mid;
        } else {
            b = mid;
        }
    }
    if decreasing {
        b
    } else {
        a
    }
}

/// Feasibility and extremal balance constants. `tol` is the bisection tolerance
/// used when the exact piecewise-linear root is not accurate enough.
pub fn analyze_balanced(model: &ExpertModel, tol: f64) -> Result<BalancedAnalysis> {
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tol = {tol} must be positive")));
    }
    let mu = model.mu();
    let mut bps: Vec<f64> = mu.iter().copied().chain([0.0, 1.0]).collect();
    bps.sort_by(f64::total_cmp);
    bps.dedup();
    let values: Vec<f64> = bps.iter().map(|&c| dispersion_unchecked(c, mu)).collect();
    let mut k_min = 0;
    for (k, &v) in values.iter().enumerate() {
        if v < values[k_min] - 1e-14 {
            k_min = k;
        }
    }
    let argmin_c = bps[k_min];
    let s_min = values[k_min];
    let feasible = s_min <= 1.0 + 1e-10;
    let (mut c_min, mut c_max) = (None, None);
    if feasible {
        let level = s_min.max(1.0);
        let left = match (0..k_min).rev().find(|&k| values[k] > level) {
            None => bps[0],
            Some(k) => level_crossing(mu, bps[k], bps[k + 1], level, tol),
        };
        let right = match (k_min + 1..bps.len()).find(|&k| values[k] > level) {
            None => bps[bps.len() - 1],
            Some(k) => level_crossing(mu, bps[k - 1], bps[k], level, tol),
        };
        c_min = Some(left);
        c_max = Some(right);
    }
    let analysis = BalancedAnalysis {
        feasible,
        c_min,
        c_max,
        argmin_c,
        s_min,
    };
    validate_with_lp(model, &analysis)?;
    Ok(analysis)
}

fn balance_lp(model: &ExpertModel, objective_c: f64) -> LinearProgram {
    // variables: a (N), b (N), c
    let mu = model.mu();
    let n = mu.len();
    let mut obj = vec![0.0; 2 * n + 1];
    obj[2 * n] = objective_c;
    let mut lp = LinearProgram::maximize(obj);
    for (i, &m) in mu.iter().enumerate() {
        let mut row = vec![0.0; 2 * n + 1];
        row[i] = -m;
        row[n + i] = 1.0 - m;
        row[2 * n] = -1.0;
        lp.constraint(row, Relation::Eq, -m);
    }
    let mut row = vec![1.0; 2 * n + 1];
    row[2 * n] = 0.0;
    lp.constraint(row, Relation::Eq, 1.0);
    lp
}

/// Extreme balance constant by linear programming: `max c` (or `min c`) over balanced controls.
pub fn lp_extreme_c(model: &ExpertModel, maximize: bool) -> Result<Option<(f64, AdversaryControl)>> {
    let n = model.n_experts();
    match balance_lp(model, if maximize { 1.0 } else { -1.0 }).solve() {
        Ok(sol) => {
            let alpha = AdversaryControl::from_weights(&renormalized(&sol.x[..2 * n]))?;
            Ok(Some((sol.x[2 * n], alpha)))
        }
        Err(Error::Lp(msg)) if msg.starts_with("infeasible") => Ok(None),
        Err(e) => Err(e),
    }
}

fn renormalized(w: &[f64]) -> Vec<f64> {
    let t: f64 = w.iter().sum();
    w.iter().map(|x| x.max(0.0) / t).collect()
}

fn validate_with_lp(model: &ExpertModel, an: &BalancedAnalysis) -> Result<()> {
    let hi = lp_extreme_c(model, true)?;
    let lo = lp_extreme_c(model, false)?;
    match (an.feasible, lo, hi) {
        (false, None, None) => Ok(()),
        (true, Some((lo, _)), Some((hi, _))) => {
            let d = (lo - an.c_min.unwrap()).abs().max((hi - an.c_max.unwrap()).abs());
            if d > LP_AGREEMENT_TOL {
                Err(Error::Numerical(format!(
                    "balance constants disagree with the LP extremes by {d:.3e}"
                )))
            } else {
                Ok(())
            }
        }
        (false, Some(_), _) | (false, _, Some(_)) if an.s_min <= 1.0 + 1e-7 => Ok(()),
        _ => Err(Error::Numerical(format!(
            "dispersion feasibility ({}) disagrees with the LP",
            an.feasible
        ))),
    }
}

/// A control whose experts all have expected gain `c`.
pub fn construct_balanced(c: f64, model: &ExpertModel) -> Result<AdversaryControl> {
    let s = dispersion(c, model)?;
    if s > 1.0 + 1e-10 {
        return Err(Error::Infeasible { s_min: s });
    }
    let mu = model.mu();
    let n = mu.len();
    let alpha = if mu.iter().any(|&m| m == 0.0 || m == 1.0) {
        lp_balanced_at(c, model)?
    } else if s == 0.0 {
        // every expert already has accuracy c: any symmetric split keeps it
        AdversaryControl::new(vec![(1.0 - c) / n as f64; n], vec![c / n as f64; n])?
    } else {
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        for j in 0..n {
            let m = mu[j];
            if c >= m {
                a[j] = (c - m) * (1.0 / s - 1.0);
                b[j] = (c - m) * (1.0 + m / (s * (1.0 - m)));
            } else {
                a[j] = (m - c) * ((1.0 - m) / (s * m) + 1.0);
                b[j] = (m - c) * (1.0 / s - 1.0);
            }
        }
        let w: Vec<f64> = a.iter().chain(&b).map(|x| x.max(0.0)).collect();
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Numerical(format!("balanced weights sum to {total}")));
        }
        AdversaryControl::from_weights(&w.iter().map(|x| x / total).collect::<Vec<_>>())?
    };
    let gains = expected_gain(&alpha, model)?;
    let dev = gains.iter().map(|g| (g - c).abs()).fold(0.0, f64::max);
    if dev > 1e-10 {
        return Err(Error::Numerical(format!("constructed control misses c by {dev:.3e}")));
    }
    Ok(alpha)
}

fn lp_balanced_at(c: f64, model: &ExpertModel) -> Result<AdversaryControl> {
    let mu = model.mu();
    let n = mu.len();
    let mut lp = LinearProgram::maximize(vec![0.0; 2 * n]);
    for (i, &m) in mu.iter().enumerate() {
        let mut row = vec![0.0; 2 * n];
        row[i] = -m;
        row[n + i] = 1.0 - m;
        lp.constraint(row, Relation::Eq, c - m);
    }
    lp.constraint(vec![1.0; 2 * n], Relation::Eq, 1.0);
    let sol = lp.solve().map_err(|e| match e {
        Error::Lp(_) => Error::Infeasible {
            s_min: dispersion_unchecked(c, mu),
        },
        other => other,
    })?;
    AdversaryControl::from_weights(&renormalized(&sol.x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HbValue {
    pub value: f64,
    pub c_star: f64,
}

/// `H_B(S) = max over balanced controls of (1/2) sum_ij S_ij Q_ij`.
pub fn hamiltonian_hb(s: &DMatrix<f64>, analysis: &BalancedAnalysis, sigmas: &SigmaPair) -> Result<HbValue> {
    let (c_min, c_max) = analysis.require_feasible()?;
    let n = sigmas.sigma1.nrows();
    if s.nrows() != n || s.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: s.nrows(),
        });
    }
    let t1 = frobenius(&sigmas.sigma1, s);
    let t2 = frobenius(&sigmas.sigma2, s);
    let c_star = if t1 > 0.0 { c_max } else { c_min };
    Ok(HbValue {
        value: 0.5 * (c_star * t1 - t2),
        c_star,
    })
}

/// `H(p, S)`: the same maximum over controls that keep every expert in the
/// support of `p` among the leaders.
pub fn hamiltonian_h(p: &[f64], s: &DMatrix<f64>, model: &ExpertModel) -> Result<f64> {
    let n = model.n_experts();
    if p.len() != n || s.nrows() != n || s.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: p.len(),
        });
    }
    if p.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::InvalidInput("p must be componentwise nonnegative".into()));
    }
    let events = 2 * n;
    let means: Vec<Vec<f64>> = (0..events).map(|e| event_mean(model, e)).collect();
    let obj: Vec<f64> = (0..events)
        .map(|e| 0.5 * frobenius(s, &event_second_moment(model, e)))
        .collect();
    let mut lp = LinearProgram::maximize(obj);
    for i in (0..n).filter(|&i| p[i] > 0.0) {
        for j in (0..n).filter(|&j| j != i) {
            let row = means.iter().map(|c| c[i] - c[j]).collect();
            lp.constraint(row, Relation::Ge, 0.0);
        }
    }
    lp.constraint(vec![1.0; events], Relation::Eq, 1.0);
    let sol = lp
        .solve()
        .map_err(|e| Error::Internal(format!("leader-constrained Hamiltonian LP: {e}")))?;
    Ok(sol.objective)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosDefReport {
    pub min_eigenvalue: f64,
    pub positive_definite: bool,
}

pub fn check_posdef(c: f64, sigmas: &SigmaPair) -> PosDefReport {
    let min_eigenvalue = sigmas
        .covariance(c)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    PosDefReport {
        min_eigenvalue,
        positive_definite: min_eigenvalue > 1e-10,
    }
}

// ============================================================================
// Gap between the largest and second-largest expected gains
// ============================================================================

/// Ties closer than this to the maximum do not count as a second value.
pub const SECOND_GAP_EXCLUSION: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaEstimate {
    /// Best gap found after refinement.
    pub delta: f64,
    /// Best gap on the grid alone.
    pub grid_delta: f64,
    pub alpha: AdversaryControl,
    pub gains: Vec<f64>,
}

/// `max c - (largest c_i below max c - 1e-9)`; infinite when all gains tie.
pub fn second_gap(c: &[f64]) -> f64 {
    let top = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let second = c
        .iter()
        .copied()
        .filter(|&x| x < top - SECOND_GAP_EXCLUSION)
        .fold(f64::NEG_INFINITY, f64::max);
    top - second
}

fn gains_of(w: &[f64], mu: &[f64]) -> Vec<f64> {
    let n = mu.len();
    (0..n).map(|i| (1.0 - w[i] - w[n + i]) * mu[i] + w[n + i]).collect()
}

/// Grid search plus coordinate descent for the infimum of [`second_gap`] over all controls.
pub fn compute_delta(model: &ExpertModel, grid: usize, refine_iters: usize) -> Result<DeltaEstimate> {
    let an = analyze_balanced(model, 1e-12)?;
    if an.feasible {
        return Err(Error::InvalidInput(
            "the gap is only meaningful when no balanced control exists".into(),
        ));
    }
    if grid == 0 {
        return Err(Error::InvalidInput("grid must be at least 1".into()));
    }
    let mu = model.mu();
    let dim = 2 * mu.len();
    let mut best = (f64::INFINITY, vec![0.0; dim]);
    let mut counts = vec![0usize; dim];
    enumerate_compositions(&mut counts, 0, grid, &mut |k| {
        let w: Vec<f64> = k.iter().map(|&x| x as f64 / grid as f64).collect();
        let g = second_gap(&gains_of(&w, mu));
        if g < best.0 {
            best = (g, w);
        }
    });
    let grid_delta = best.0;
    let (mut val, mut w) = best;
    let mut step = 1.0 / grid as f64;
    for _ in 0..refine_iters {
        let mut improved = false;
        for from in 0..dim {
            for to in 0..dim {
                if from == to || w[from] <= 0.0 {
                    continue;
                }
                let h = step.min(w[from]);
                let mut cand = w.clone();
                cand[from] -= h;
                cand[to] += h;
                let g = second_gap(&gains_of(&cand, mu));
                if g < val {
                    val = g;
                    w = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    let alpha = AdversaryControl::from_weights(&renormalized(&w))?;
    let gains = expected_gain(&alpha, model)?;
    Ok(DeltaEstimate {
        delta: val,
        grid_delta,
        alpha,
        gains,
    })
}

fn enumerate_compositions(k: &mut Vec<usize>, pos: usize, left: usize, f: &mut impl FnMut(&[usize])) {
    if pos + 1 == k.len() {
        k[pos] = left;
        f(k);
        return;
    }
    for v in 0..=left {
        k[pos] = v;
        enumerate_compositions(k, pos + 1, left - v, f);
    }
}

/// `min over controls of sum_i (max_j c_j - c_i)`, solved exactly by LP.
pub fn min_total_spread(model: &ExpertModel) -> Result<(f64, AdversaryControl)> {
    let n = model.n_experts();
    let events = 2 * n;
    let means: Vec<Vec<f64>> = (0..events).map(|e| event_mean(model, e)).collect();
    // variables: w (2N), u; minimise N u - sum_i c_i(w)
    let mut obj: Vec<f64> = means.iter().map(|c| c.iter().sum::<f64>()).collect();
    obj.push(-(n as f64));
    let mut lp = LinearProgram::maximize(obj);
    for i in 0..n {
        let mut row: Vec<f64> = means.iter().map(|c| c[i]).collect();
        row.push(-1.0);
        lp.constraint(row, Relation::Le, 0.0);
    }
    let mut row = vec![1.0; events];
    row.push(0.0);
    lp.constraint(row, Relation::Eq, 1.0);
    let sol = lp.solve()?;
    let alpha = AdversaryControl::from_weights(&renormalized(&sol.x[..events]))?;
    Ok(((-sol.objective).max(0.0), alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::gain_distribution;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn model(mu: &[f64]) -> ExpertModel {
        ExpertModel::new(mu.to_vec()).unwrap()
    }

    // independent oracle: dense scan of s on [0, 1]
    fn oracle_scan(mu: &[f64], steps: usize) -> (f64, f64) {
        (0..=steps)
            .map(|k| {
                let c = k as f64 / steps as f64;
                (c, dispersion_unchecked(c, mu))
            })
            .fold((0.0, f64::INFINITY), |acc, p| if p.1 < acc.1 { p } else { acc })
    }

    #[test]
    fn dispersion_examples() {
        assert!((dispersion(0.25, &model(&[0.75, 0.25])).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(dispersion(0.4, &model(&[0.4, 0.4, 0.4])).unwrap(), 0.0);
        let s = dispersion(0.5, &model(&[0.1, 0.3, 0.5, 0.7, 0.9])).unwrap();
        let expected = 0.4 / 0.9 + 0.2 / 0.7 + 0.0 + 0.2 / 0.7 + 0.4 / 0.9;
        assert!((s - expected).abs() < 1e-15 && (s - 1.4603).abs() < 1e-4);
        assert!(dispersion(1.5, &model(&[0.5, 0.5])).is_err());
        // boundary accuracies use the extended-real convention
        assert_eq!(dispersion(0.0, &model(&[0.0, 0.0])).unwrap(), 0.0);
        assert_eq!(dispersion(1.0, &model(&[1.0, 0.0])).unwrap(), 1.0);
    }

    #[test]
    fn analysis_examples() {
        let an = analyze_balanced(&model(&[0.75, 0.25]), 1e-12).unwrap();
        assert!(an.feasible);
        assert!((an.c_min.unwrap() - 3.0 / 16.0).abs() < 1e-12);
        assert!((an.c_max.unwrap() - 13.0 / 16.0).abs() < 1e-12);

        let an = analyze_balanced(&model(&[0.0, 1.0, 1.0]), 1e-12).unwrap();
        assert!(an.feasible);
        assert_eq!((an.c_min, an.c_max), (Some(1.0), Some(1.0)));

        let m = model(&[0.1, 0.3, 0.5, 0.7, 0.9]);
        let an = analyze_balanced(&m, 1e-12).unwrap();
        assert!(!an.feasible && an.c_min.is_none());
        let (c, s) = oracle_scan(m.mu(), 100_000);
        assert!((an.s_min - s).abs() < 1e-9 && (an.argmin_c - c).abs() < 1e-4);
        assert!((an.s_min - 1.4603).abs() < 1e-4);
    }

    #[test]
    fn constructor_examples() {
        for n in 2..6 {
            let mu_bar = 0.6;
            let c = (1.0 - 1.0 / n as f64) * mu_bar;
            let al = construct_balanced(c, &model(&vec![mu_bar; n])).unwrap();
            for j in 0..n {
                assert!((al.a()[j] - 1.0 / n as f64).abs() < 1e-12);
                assert!(al.b()[j].abs() < 1e-12);
            }
        }
        let m = model(&[0.75, 0.25]);
        let al = construct_balanced(0.5, &m).unwrap();
        for g in expected_gain(&al, &m).unwrap() {
            assert!((g - 0.5).abs() < 1e-12);
        }
        let al = construct_balanced(1.0, &model(&[0.0, 1.0, 1.0])).unwrap();
        assert_eq!(al.b(), &[1.0, 0.0, 0.0]);
        assert_eq!(al.a(), &[0.0, 0.0, 0.0]);

        // zero dispersion falls back to the symmetric split
        let al = construct_balanced(0.3, &model(&[0.3, 0.3])).unwrap();
        assert!((al.a()[0] - 0.35).abs() < 1e-15 && (al.b()[0] - 0.15).abs() < 1e-15);

        assert!(matches!(
            construct_balanced(0.5, &model(&[0.1, 0.3, 0.5, 0.7, 0.9])),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn hb_examples() {
        let m = model(&[0.75, 0.25]);
        let an = analyze_balanced(&m, 1e-12).unwrap();
        let sg = SigmaPair::new(&m);
        let s = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let hb = hamiltonian_hb(&s, &an, &sg).unwrap();
        assert_eq!(hb.value, 3.0 / 16.0);
        assert_eq!(hb.c_star, an.c_min.unwrap());
        assert_eq!(hamiltonian_hb(&DMatrix::zeros(2, 2), &an, &sg).unwrap().value, 0.0);

        let m = model(&[0.5, 0.5]);
        let an = analyze_balanced(&m, 1e-12).unwrap();
        let hb = hamiltonian_hb(&s, &an, &SigmaPair::new(&m)).unwrap();
        assert!((hb.value - 0.25).abs() < 1e-15);
        // brute force over sampled balanced controls
        let (lo, hi) = an.require_feasible().unwrap();
        let brute = (0..=200)
            .map(|k| {
                let c = lo + (hi - lo) * k as f64 / 200.0;
                let q = gain_distribution(&construct_balanced(c, &m).unwrap(), &m).unwrap();
                0.5 * frobenius(&s, q.second_moment())
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((brute - 0.25).abs() < 1e-12);

        let infeasible = analyze_balanced(&model(&[0.1, 0.3, 0.5, 0.7, 0.9]), 1e-12).unwrap();
        assert!(hamiltonian_hb(&DMatrix::zeros(5, 5), &infeasible, &SigmaPair::new(&m)).is_err());
    }

    #[test]
    fn h_examples() {
        let m = model(&[0.0, 1.0, 1.0]);
        let mut s = DMatrix::zeros(3, 3);
        s[(1, 1)] = 1.0;
        s[(2, 2)] = 1.0;
        s[(1, 2)] = -1.0;
        s[(2, 1)] = -1.0;
        let h = hamiltonian_h(&[0.0, 1.0, 1.0], &s, &m).unwrap();
        let only_b1 = gain_distribution(&AdversaryControl::pure(3, 0, true), &m).unwrap();
        let base = 0.5 * frobenius(&s, only_b1.second_moment());
        let witness = AdversaryControl::new(vec![0.0, 0.5, 0.5], vec![0.0; 3]).unwrap();
        let w = 0.5 * frobenius(&s, gain_distribution(&witness, &m).unwrap().second_moment());
        assert!(h > base && (h - w).abs() < 1e-12);
        assert_eq!(hamiltonian_h(&[0.3, 0.0, 0.7], &DMatrix::zeros(3, 3), &m).unwrap(), 0.0);

        let m = model(&[0.75, 0.25]);
        let an = analyze_balanced(&m, 1e-12).unwrap();
        let s = DMatrix::from_row_slice(2, 2, &[0.3, -1.0, -1.0, 2.0]);
        let h = hamiltonian_h(&[0.5, 0.5], &s, &m).unwrap();
        let hb = hamiltonian_hb(&s, &an, &SigmaPair::new(&m)).unwrap().value;
        assert!((h - hb).abs() < 1e-12);
    }

    #[test]
    fn posdef_examples() {
        let r = check_posdef(0.5, &SigmaPair::new(&model(&[0.75, 0.25])));
        assert!((r.min_eigenvalue - 3.0 / 16.0).abs() < 1e-12 && r.positive_definite);
        let r = check_posdef(0.25, &SigmaPair::new(&model(&[0.5, 0.5])));
        assert!((r.min_eigenvalue - 0.25).abs() < 1e-12);
    }

    #[test]
    fn delta_examples() {
        for mu in [[0.1, 0.3, 0.5, 0.7, 0.9], [0.05, 0.2, 0.5, 0.8, 0.95]] {
            let m = model(&mu);
            let d5 = compute_delta(&m, 5, 0).unwrap();
            let d10 = compute_delta(&m, 10, 0).unwrap();
            assert!(d5.grid_delta > 0.0 && d10.grid_delta > 0.0);
            assert!(d10.grid_delta <= d5.grid_delta);
            let refined = compute_delta(&m, 5, 40).unwrap();
            assert!(refined.delta <= refined.grid_delta && refined.delta > 0.0);
        }
        assert!(compute_delta(&model(&[0.75, 0.25]), 5, 0).is_err());
    }

    #[test]
    fn total_spread_lp_matches_grid() {
        let m = model(&[0.1, 0.3, 0.5, 0.7, 0.9]);
        let (v, alpha) = min_total_spread(&m).unwrap();
        let c = expected_gain(&alpha, &m).unwrap();
        let top = c.iter().copied().fold(0.0, f64::max);
        assert!((c.iter().map(|x| top - x).sum::<f64>() - v).abs() < 1e-10);
        assert!(v > 0.0);
        // grid oracle over the simplex never beats the LP
        let mut counts = vec![0; 10];
        let mut best = f64::INFINITY;
        enumerate_compositions(&mut counts, 0, 6, &mut |k| {
            let w: Vec<f64> = k.iter().map(|&x| x as f64 / 6.0).collect();
            let c = gains_of(&w, m.mu());
            let top = c.iter().copied().fold(0.0, f64::max);
            best = best.min(c.iter().map(|x| top - x).sum());
        });
        assert!(best >= v - 1e-12);
        // balanced models have zero spread
        assert!(min_total_spread(&model(&[0.75, 0.25])).unwrap().0 < 1e-12);
    }

    #[test]
    fn dispersion_is_convex_on_grid() {
        let mut rng = crate::rng::stream(11, 0);
        for _ in 0..50 {
            let n = rng.random_range(2..6);
            let mu: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let s: Vec<f64> = (0..=1000)
                .map(|k| dispersion_unchecked(k as f64 / 1000.0, &mu))
                .collect();
            for k in 1..1000 {
                assert!(s[k] <= 0.5 * (s[k - 1] + s[k + 1]) + 1e-12);
            }
        }
    }

    fn arb_feasible() -> impl Strategy<Value = (ExpertModel, f64)> {
        (2usize..=5)
            .prop_flat_map(|n| (proptest::collection::vec(0.01..0.99f64, n), 0.0..=1.0f64))
            .prop_filter_map("infeasible", |(mu, u)| {
                let m = ExpertModel::new(mu).ok()?;
                let an = analyze_balanced(&m, 1e-12).ok()?;
                let (lo, hi) = an.require_feasible().ok()?;
                Some((m, lo + u * (hi - lo)))
            })
    }

    fn random_symmetric(n: usize, rng: &mut crate::rng::Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| 2.0 * rng.random::<f64>() - 1.0);
        (&a + a.transpose()) * 0.5
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn constructed_controls_are_balanced((m, c) in arb_feasible()) {
            let al = construct_balanced(c, &m).unwrap();
            let total: f64 = al.weights().iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(al.weights().iter().all(|&w| (0.0..=1.0).contains(&w)));
            for g in expected_gain(&al, &m).unwrap() {
                prop_assert!((g - c).abs() <= 1e-10);
            }
            let an = analyze_balanced(&m, 1e-12).unwrap();
            prop_assert!(an.c_min.unwrap() <= c + 1e-12 && c <= an.c_max.unwrap() + 1e-12);
            prop_assert!(an.c_min.unwrap() <= an.argmin_c && an.argmin_c <= an.c_max.unwrap());
        }

        #[test]
        fn second_moment_identity((m, c) in arb_feasible(), seed in 0u64..1000) {
            let mut rng = crate::rng::stream(seed, 0);
            let s = random_symmetric(m.n_experts(), &mut rng);
            let al = construct_balanced(c, &m).unwrap();
            let q = gain_distribution(&al, &m).unwrap();
            let sg = SigmaPair::new(&m);
            let lhs = frobenius(&s, q.second_moment());
            let rhs = c * frobenius(&sg.sigma1, &s) - frobenius(&sg.sigma2, &s);
            prop_assert!((lhs - rhs).abs() <= 1e-10);
        }

        #[test]
        fn feasible_constants_are_positive_definite((m, c) in arb_feasible()) {
            prop_assert!(check_posdef(c, &SigmaPair::new(&m)).positive_definite);
        }

        #[test]
        fn h_dominates_hb((m, _c) in arb_feasible(), seed in 0u64..1000, mask in 1u32..32) {
            let n = m.n_experts();
            let mut rng = crate::rng::stream(seed, 1);
            let s = random_symmetric(n, &mut rng);
            let p: Vec<f64> = (0..n).map(|i| ((mask >> i) & 1) as f64).collect();
            let an = analyze_balanced(&m, 1e-12).unwrap();
            let hb = hamiltonian_hb(&s, &an, &SigmaPair::new(&m)).unwrap().value;
            let h = hamiltonian_h(&p, &s, &m).unwrap();
            prop_assert!(h >= hb - 1e-10);
        }
    }

    #[test]
    fn hb_matches_sampled_brute_force() {
        let mut rng = crate::rng::stream(5, 0);
        let mut checked = 0;
        while checked < 40 {
            let n = rng.random_range(2..4);
            let m = model(&(0..n).map(|_| 0.05 + 0.9 * rng.random::<f64>()).collect::<Vec<_>>());
            let an = analyze_balanced(&m, 1e-12).unwrap();
            let Ok((lo, hi)) = an.require_feasible() else { continue };
            let s = random_symmetric(n, &mut rng);
            let hb = hamiltonian_hb(&s, &an, &SigmaPair::new(&m)).unwrap().value;
            let brute = (0..500)
                .map(|k| {
                    let c = lo + (hi - lo) * k as f64 / 499.0;
                    let q = gain_distribution(&construct_balanced(c, &m).unwrap(), &m).unwrap();
                    0.5 * frobenius(&s, q.second_moment())
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((brute - hb).abs() < 1e-8, "{brute} vs {hb}");
            checked += 1;
        }
    }
}
