//! Scaling experiments built from the solvers and the simulator.

use serde::{Deserialize, Serialize};

use crate::balanced::{analyze_balanced, compute_delta, construct_balanced, min_total_spread};
use crate::dp::{scaled_value, solve_value};
use crate::error::{Error, Result};
use crate::game::{AdversaryControl, ExpertModel, FinalCondition, FinalKind};
use crate::pde::gaussian::{
    build_gaussian_limit, evaluate_u, pair_difference_variance, two_expert_lower_bound, GaussianLimit,
};
use crate::sim::engine::{simulate_with, IncrementStats, SimOptions};
use crate::sim::policy::{AdversaryPolicy, ForecasterPolicy, MyopicSaddle};
use crate::stats::{fit_line, Summary};

/// Monte Carlo pairs used for `U(0, 0)` when no closed form is available.
pub const LIMIT_MC_SAMPLES: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub horizon: usize,
    /// `V^M(0, 0) / sqrt(M)`.
    pub scaled_value: f64,
    pub limit: f64,
    pub gap: f64,
}

fn limit_theta(phi: &FinalCondition) -> Result<f64> {
    match phi.kind() {
        FinalKind::Max | FinalKind::MaxTheta => Ok(phi.theta()),
        FinalKind::Custom => Err(Error::InvalidInput(
            "the Gaussian limit is available for the max and max-theta final conditions".into(),
        )),
    }
}

fn limit_at_origin(gl: &GaussianLimit, seed: u64) -> Result<f64> {
    let origin = vec![0.0; gl.n_experts()];
    evaluate_u(gl, 0.0, &origin, LIMIT_MC_SAMPLES, seed).map(|e| e.value)
}

/// Exact scaled values `u^M(0, 0)` against the limit `U(0, 0)` for each horizon.
pub fn experiment_convergence(
    model: &ExpertModel,
    phi: &FinalCondition,
    horizons: &[usize],
    seed: u64,
) -> Result<Vec<ConvergenceRow>> {
    let theta = limit_theta(phi)?;
    let analysis = analyze_balanced(model, 1e-12)?;
    let gl = build_gaussian_limit(model, &analysis, theta)?;
    let limit = limit_at_origin(&gl, seed)?;
    let origin = vec![0.0; model.n_experts()];
    horizons
        .iter()
        .map(|&m| {
            if m == 0 {
                return Err(Error::InvalidInput("horizons must be positive".into()));
            }
            let table = solve_value(m, model, phi)?;
            let u = scaled_value(&table, 0.0, &origin)?;
            Ok(ConvergenceRow {
                horizon: m,
                scaled_value: u,
                limit,
                gap: u - limit,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterAdversary {
    /// `b[1] = a[2] = 1/2`.
    Hat,
    /// Constant greedy balanced control.
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterForecaster {
    Gradient,
    BestResponse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleConfig {
    pub horizon: usize,
    pub replications: usize,
    pub seed: u64,
    pub theta: f64,
    pub adversary: CounterAdversary,
    pub forecaster: CounterForecaster,
}

impl CounterexampleConfig {
    pub fn new(horizon: usize, replications: usize, seed: u64) -> Self {
        Self {
            horizon,
            replications,
            seed,
            theta: 0.1,
            adversary: CounterAdversary::Hat,
            forecaster: CounterForecaster::Gradient,
        }
    }
}

/// Accuracies of the two-expert counterexample.
pub const COUNTEREXAMPLE_MU: [f64; 2] = [0.75, 0.25];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub config: CounterexampleConfig,
    /// Realised regret over `sqrt(M)`.
    pub scaled_regret: Summary,
    /// Forecaster-averaged regret over `sqrt(M)`; the gap is read from this one.
    pub scaled_conditional: Summary,
    pub u0: f64,
    pub gap: f64,
    pub gap_ci95_low: f64,
    pub gap_ci95_high: f64,
    pub gap_significant: bool,
    /// Per-round increment of `X1 - X2`.
    pub z_increment: IncrementStats,
    /// Exact scaled mean, when the pairing has one (hat adversary with the gradient forecaster).
    pub exact_scaled_mean: Option<f64>,
}

pub fn experiment_counterexample(cfg: &CounterexampleConfig) -> Result<CounterexampleReport> {
    if !(cfg.theta > 0.0 && cfg.theta < 1.0) {
        return Err(Error::InvalidInput(format!("theta = {} must lie in (0, 1)", cfg.theta)));
    }
    let model = ExpertModel::new(COUNTEREXAMPLE_MU.to_vec())?;
    let phi = FinalCondition::max_theta(cfg.theta)?;
    let analysis = analyze_balanced(&model, 1e-12)?;
    let gl = build_gaussian_limit(&model, &analysis, cfg.theta)?;
    let u0 = limit_at_origin(&gl, 0)?;
    let adversary = match cfg.adversary {
        CounterAdversary::Hat => AdversaryPolicy::hat(2)?,
        CounterAdversary::Balanced => {
            AdversaryPolicy::Constant(construct_balanced(analysis.require_feasible()?.0, &model)?)
        }
    };
    let forecaster = match cfg.forecaster {
        CounterForecaster::Gradient => ForecasterPolicy::GradientU(Box::new(gl.clone())),
        CounterForecaster::BestResponse => ForecasterPolicy::BestResponse(model.clone()),
    };
    let opts = SimOptions {
        record_terminal: false,
        track_pair: Some((0, 1)),
    };
    let rep = simulate_with(
        &model,
        &adversary,
        &forecaster,
        &phi,
        cfg.horizon,
        cfg.replications,
        cfg.seed,
        opts,
    )?;
    let root = (cfg.horizon.max(1) as f64).sqrt();
    let scale = |s: Summary| Summary::from_moments(s.n, s.mean / root, s.variance / (root * root));
    let scaled_regret = scale(rep.regret);
    let scaled_conditional = scale(
        rep.conditional
            .ok_or_else(|| Error::Internal("missing conditional estimator".into()))?,
    );
    let exact_scaled_mean = match (cfg.adversary, cfg.forecaster) {
        (CounterAdversary::Hat, CounterForecaster::Gradient) => {
            Some(counterexample_exact_scaled_mean(cfg.horizon, cfg.theta)?)
        }
        _ => None,
    };
    Ok(CounterexampleReport {
        config: *cfg,
        scaled_regret,
        scaled_conditional,
        u0,
        gap: scaled_conditional.mean - u0,
        gap_ci95_low: scaled_conditional.ci95_low - u0,
        gap_ci95_high: scaled_conditional.ci95_high - u0,
        gap_significant: scaled_conditional.ci95_low - u0 > 0.0,
        z_increment: rep
            .pair_increment
            .ok_or_else(|| Error::Internal("missing increment statistics".into()))?,
        exact_scaled_mean,
    })
}

fn binomial_pmf(n: usize, p: f64) -> Vec<f64> {
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let lfact = |k: usize| libm::lgamma(k as f64 + 1.0);
    (0..=n)
        .map(|k| (lfact(n) - lfact(k) - lfact(n - k) + k as f64 * lp + (n - k) as f64 * lq).exp())
        .collect()
}

/// Exact `E[Phi(X_M)] / sqrt(M)` for the gradient forecaster against the hat
/// control. Under that control `X1 - X2` moves by +1 with probability 3/4 and
/// otherwise stays, independently of the forecaster, so the regret mean is a
/// sum over binomial laws of the lead.
pub fn counterexample_exact_scaled_mean(horizon: usize, theta: f64) -> Result<f64> {
    if horizon == 0 {
        return Ok(0.0);
    }
    let model = ExpertModel::new(COUNTEREXAMPLE_MU.to_vec())?;
    let analysis = analyze_balanced(&model, 1e-12)?;
    let gl = build_gaussian_limit(&model, &analysis, theta)?;
    let red = gl
        .reduced()
        .ok_or_else(|| Error::Internal("two-expert closed form unavailable".into()))?;
    let mf = horizon as f64;
    let root = mf.sqrt();
    // gains: g = (1,0) w.p. 3/4, (1,1) w.p. 1/8, (0,0) w.p. 1/8; the lead never goes negative
    let (c1, c2, p_up) = (0.875, 0.125, 0.75);
    let terminal = (1.0 - theta) * c1 * mf + 0.5 * theta * (c1 + c2) * mf;
    let mut paid = 0.0;
    for m in 1..=horizon {
        let pmf = binomial_pmf(m - 1, p_up);
        let tau = 1.0 - (m - 1) as f64 / mf;
        let mut e_phi1 = 0.0;
        for (k, p) in pmf.iter().enumerate() {
            let phi1 = if m == horizon {
                if k > 0 {
                    1.0
                } else {
                    0.5
                }
            } else {
                red.w_z(tau, k as f64 / root)
            };
            e_phi1 += p * phi1;
        }
        paid += c2 + (c1 - c2) * e_phi1;
    }
    Ok((terminal - paid) / root)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmptyRegimeRow {
    pub horizon: usize,
    /// Forecaster-averaged regret over `sqrt(M)`.
    pub scaled_regret: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmptyRegimeReport {
    pub theta: f64,
    pub rows: Vec<EmptyRegimeRow>,
    /// Fitted `-d(V/sqrt(M))/d sqrt(M)`; reported for `theta > 0`.
    pub kappa_hat: Option<f64>,
    /// `theta delta_S / N` with `delta_S` the smallest total spread below the best gain.
    pub kappa_reference: Option<f64>,
    pub kappa_in_band: Option<bool>,
    /// Refined estimate of the literal second-gap infimum.
    pub delta_literal: Option<f64>,
    pub delta_spread: Option<f64>,
    pub strictly_decreasing: bool,
    /// For `theta = 0`: the pair used by the adversary and its closed-form bound.
    pub pair: Option<(usize, usize)>,
    pub lower_bound: Option<f64>,
    pub bound_ok: Option<bool>,
}

/// Tolerance below the two-expert bound accepted for `theta = 0`.
pub const LOWER_BOUND_TOLERANCE: f64 = 0.05;

/// A pair `(i, j)` with a balanced control on the sub-game whose common gain
/// exceeds every other expert's accuracy, so best responses stay on the pair.
/// Only controls whose difference variance equals the regime value used by the
/// closed-form bound qualify; among those the largest bound wins.
pub fn dominating_pair(model: &ExpertModel) -> Result<((usize, usize), AdversaryControl, f64)> {
    let n = model.n_experts();
    let mu = model.mu();
    let origin = vec![0.0; n];
    let mut best: Option<((usize, usize), AdversaryControl, f64)> = None;
    for i in 0..n {
        for j in i + 1..n {
            let sub = model.restrict(&[i, j])?;
            let an = analyze_balanced(&sub, 1e-12)?;
            let Ok((c_min, c_max)) = an.require_feasible() else {
                continue;
            };
            let (mi, mj) = (mu[i], mu[j]);
            let regime_c = if mi + mj >= 1.0 { c_min } else { c_max };
            let target = pair_difference_variance(regime_c, mi, mj);
            let others = (0..n)
                .filter(|&k| k != i && k != j)
                .map(|k| mu[k])
                .fold(f64::NEG_INFINITY, f64::max);
            for c in [c_max, c_min] {
                if c <= others || (pair_difference_variance(c, mi, mj) - target).abs() > 1e-12 {
                    continue;
                }
                let bound = two_expert_lower_bound(model, (i, j), 0.0, &origin)?;
                if best.as_ref().is_none_or(|b| bound > b.2) {
                    let local = construct_balanced(c, &sub)?;
                    let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
                    a[i] = local.a()[0];
                    a[j] = local.a()[1];
                    b[i] = local.b()[0];
                    b[j] = local.b()[1];
                    best = Some(((i, j), AdversaryControl::new(a, b)?, bound));
                }
                break;
            }
        }
    }
    best.ok_or_else(|| Error::UnsupportedRegime("no pair has a dominating balanced control".into()))
}

/// Regret growth when no balanced control exists. For `theta > 0` the
/// best-response forecaster plays the one-step adversary and the slope of
/// `V/sqrt(M)` in `sqrt(M)` is fitted; for `theta = 0` a dominating pair
/// adversary is played and compared with the two-expert bound.
pub fn experiment_empty_regime(
    model: &ExpertModel,
    theta: f64,
    horizons: &[usize],
    replications: usize,
    seed: u64,
) -> Result<EmptyRegimeReport> {
    let analysis = analyze_balanced(model, 1e-12)?;
    if analysis.feasible {
        return Err(Error::InvalidInput(
            "balanced controls exist for this model; the empty-regime experiment does not apply".into(),
        ));
    }
    if horizons.is_empty() || horizons.contains(&0) {
        return Err(Error::InvalidInput("horizons must be nonempty and positive".into()));
    }
    let phi = if theta == 0.0 {
        FinalCondition::max()
    } else {
        FinalCondition::max_theta(theta)?
    };
    let n = model.n_experts();
    let forecaster = ForecasterPolicy::BestResponse(model.clone());
    let (adversary, pair, lower_bound) = if theta > 0.0 {
        (
            AdversaryPolicy::MyopicSaddle(MyopicSaddle::new(model, &phi)?),
            None,
            None,
        )
    } else {
        let (pair, control, bound) = dominating_pair(model)?;
        (AdversaryPolicy::Constant(control), Some(pair), Some(bound))
    };
    let rows = horizons
        .iter()
        .map(|&m| {
            let rep = simulate_with(
                model,
                &adversary,
                &forecaster,
                &phi,
                m,
                replications,
                seed,
                SimOptions::default(),
            )?;
            let c = rep
                .conditional
                .ok_or_else(|| Error::Internal("missing conditional estimator".into()))?;
            let root = (m as f64).sqrt();
            Ok(EmptyRegimeRow {
                horizon: m,
                scaled_regret: Summary::from_moments(c.n, c.mean / root, c.variance / (root * root)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let strictly_decreasing = rows
        .windows(2)
        .all(|w| w[1].scaled_regret.mean < w[0].scaled_regret.mean);
    let mut report = EmptyRegimeReport {
        theta,
        rows,
        kappa_hat: None,
        kappa_reference: None,
        kappa_in_band: None,
        delta_literal: None,
        delta_spread: None,
        strictly_decreasing,
        pair,
        lower_bound,
        bound_ok: None,
    };
    if theta > 0.0 {
        let xs: Vec<f64> = report.rows.iter().map(|r| (r.horizon as f64).sqrt()).collect();
        let ys: Vec<f64> = report.rows.iter().map(|r| r.scaled_regret.mean).collect();
        let kappa = if xs.len() >= 2 {
            -fit_line(&xs, &ys).slope
        } else {
            f64::NAN
        };
        let (spread, _) = min_total_spread(model)?;
        let reference = theta * spread / n as f64;
        report.kappa_hat = Some(kappa);
        report.kappa_reference = Some(reference);
        report.kappa_in_band = Some(kappa >= 0.5 * reference && kappa <= 2.0 * reference);
        report.delta_spread = Some(spread);
        report.delta_literal = Some(compute_delta(model, 6, 200)?.delta);
    } else if let Some(bound) = lower_bound {
        report.bound_ok = Some(
            report
                .rows
                .iter()
                .all(|r| r.scaled_regret.mean >= bound - LOWER_BOUND_TOLERANCE),
        );
    }
    Ok(report)
}
