//! Monte Carlo play of the repeated game.
//!
//! Replication `r` draws from its own stream `rng::stream(seed, r)`, and each
//! round consumes a fixed number of uniforms (event, one per expert gain,
//! forecaster pick), so results do not depend on the thread count.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{AdversaryControl, ExpertModel, FinalCondition};
use crate::rng;
use crate::sim::policy::{AdversaryPolicy, ForecasterPolicy};
use crate::stats::{KahanSum, Summary};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Keep the per-replication regrets.
    pub record_terminal: bool,
    /// Track the per-round increment of `X_i - X_j` for this pair.
    pub track_pair: Option<(usize, usize)>,
}

/// Moments of a per-round increment pooled over all rounds and replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncrementStats {
    pub pair: (usize, usize),
    pub count: u64,
    pub mean: f64,
    pub variance: f64,
    pub mean_stderr: f64,
    pub variance_stderr: f64,
}

impl IncrementStats {
    fn from_power_sums(pair: (usize, usize), count: u64, s: [f64; 4]) -> Self {
        let n = count as f64;
        let m1 = s[0] / n;
        let raw2 = s[1] / n;
        let var = (raw2 - m1 * m1).max(0.0);
        // fourth central moment from raw moments
        let m4 = s[3] / n - 4.0 * m1 * s[2] / n + 6.0 * m1 * m1 * raw2 - 3.0 * m1.powi(4);
        Self {
            pair,
            count,
            mean: m1,
            variance: var,
            mean_stderr: (var / n).sqrt(),
            variance_stderr: ((m4 - var * var).max(0.0) / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub horizon: usize,
    pub replications: usize,
    /// Terminal payoff `Phi(X_M)` of the realised regrets.
    pub regret: Summary,
    /// `Phi(G_M) - sum_m phi_m . g_m`: the regret averaged over the forecaster's
    /// own randomisation. Same mean, smaller variance. Present when the final
    /// condition commutes with translations.
    pub conditional: Option<Summary>,
    pub terminal: Option<Vec<f64>>,
    pub conditional_terminal: Option<Vec<f64>>,
    pub pair_increment: Option<IncrementStats>,
}

struct RepOutcome {
    raw: f64,
    conditional: f64,
    powers: [f64; 4],
}

fn sample_event(alpha: &AdversaryControl, u: f64) -> usize {
    let events = 2 * alpha.n_experts();
    let mut cum = 0.0;
    let mut last = 0;
    for e in 0..events {
        let w = alpha.weight(e);
        if w > 0.0 {
            cum += w;
            last = e;
            if u < cum {
                return e;
            }
        }
    }
    last
}

fn sample_index(p: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &w) in p.iter().enumerate() {
        if w > 0.0 {
            cum += w;
            last = i;
            if u < cum {
                return i;
            }
        }
    }
    last
}

pub fn simulate(
    model: &ExpertModel,
    adversary: &AdversaryPolicy,
    forecaster: &ForecasterPolicy,
    phi: &FinalCondition,
    horizon: usize,
    replications: usize,
    seed: u64,
) -> Result<SimulationReport> {
    simulate_with(
        model,
        adversary,
        forecaster,
        phi,
        horizon,
        replications,
        seed,
        SimOptions::default(),
    )
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_with(
    model: &ExpertModel,
    adversary: &AdversaryPolicy,
    forecaster: &ForecasterPolicy,
    phi: &FinalCondition,
    horizon: usize,
    replications: usize,
    seed: u64,
    opts: SimOptions,
) -> Result<SimulationReport> {
    let n = model.n_experts();
    if replications == 0 {
        return Err(Error::InvalidInput("replications must be positive".into()));
    }
    adversary.validate(n, horizon)?;
    forecaster.validate(n, horizon)?;
    if let Some((i, j)) = opts.track_pair {
        if i >= n || j >= n || i == j {
            return Err(Error::InvalidInput(format!("invalid tracked pair ({i}, {j})")));
        }
    }
    let translation = phi.flags().translation;
    let mu = model.mu();

    let run = |rep: usize| -> Result<RepOutcome> {
        let mut rng = rng::stream(seed, rep as u64);
        let mut x = vec![0.0; n];
        let mut gains = vec![0.0; n];
        let mut g = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut paid = KahanSum::new();
        let mut powers = [0.0; 4];
        for m in 1..=horizon {
            let alpha = adversary.control(m, horizon, &x)?;
            let u_event: f64 = rng.random();
            for (i, gi) in g.iter_mut().enumerate() {
                let u: f64 = rng.random();
                *gi = if u < mu[i] { 1.0 } else { 0.0 };
            }
            let u_pick: f64 = rng.random();
            let e = sample_event(&alpha, u_event);
            if e < n {
                g[e] = 0.0;
            } else {
                g[e - n] = 1.0;
            }
            forecaster.write_control(m, horizon, &x, &alpha, &mut p)?;
            let j = sample_index(&p, u_pick);
            let gj = g[j];
            let mut expected = 0.0;
            for i in 0..n {
                x[i] += g[i] - gj;
                gains[i] += g[i];
                expected += p[i] * g[i];
            }
            paid.add(expected);
            if let Some((a, b)) = opts.track_pair {
                let d = g[a] - g[b];
                powers[0] += d;
                powers[1] += d * d;
                powers[2] += d * d * d;
                powers[3] += d * d * d * d;
            }
        }
        Ok(RepOutcome {
            raw: phi.eval(&x),
            conditional: phi.eval(&gains) - paid.value(),
            powers,
        })
    };

    let outcomes: Vec<RepOutcome> = (0..replications).into_par_iter().map(run).collect::<Result<_>>()?;

    let raw: Vec<f64> = outcomes.iter().map(|o| o.raw).collect();
    let cond: Vec<f64> = outcomes.iter().map(|o| o.conditional).collect();
    let pair_increment = opts.track_pair.map(|pair| {
        let mut s = [0.0; 4];
        for o in &outcomes {
            for (acc, v) in s.iter_mut().zip(o.powers) {
                *acc += v;
            }
        }
        IncrementStats::from_power_sums(pair, (horizon * replications) as u64, s)
    });
    Ok(SimulationReport {
        horizon,
        replications,
        regret: Summary::of(&raw),
        conditional: translation.then(|| Summary::of(&cond)),
        conditional_terminal: (opts.record_terminal && translation).then(|| cond.clone()),
        terminal: opts.record_terminal.then_some(raw),
        pair_increment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::solve_value;
    use std::sync::Arc;

    fn hat_model() -> ExpertModel {
        ExpertModel::new(vec![0.75, 0.25]).unwrap()
    }

    #[test]
    fn deterministic_in_seed() {
        let m = hat_model();
        let adv = AdversaryPolicy::hat(2).unwrap();
        let f = ForecasterPolicy::MultiplicativeWeights { eta: None };
        let phi = FinalCondition::max();
        let a = simulate(&m, &adv, &f, &phi, 20, 500, 7).unwrap();
        let b = simulate(&m, &adv, &f, &phi, 20, 500, 7).unwrap();
        let c = simulate(&m, &adv, &f, &phi, 20, 500, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.regret.mean, c.regret.mean);
    }

    #[test]
    fn thread_count_does_not_matter() {
        let m = hat_model();
        let adv = AdversaryPolicy::hat(2).unwrap();
        let f = ForecasterPolicy::Uniform;
        let phi = FinalCondition::max_theta(0.1).unwrap();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| simulate(&m, &adv, &f, &phi, 15, 300, 3).unwrap());
        let b = three.install(|| simulate(&m, &adv, &f, &phi, 15, 300, 3).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn hat_increments_match_their_law() {
        // under the hat control the difference X1 - X2 moves by +1 with probability 3/4
        let m = hat_model();
        let adv = AdversaryPolicy::hat(2).unwrap();
        let opts = SimOptions {
            track_pair: Some((0, 1)),
            ..Default::default()
        };
        let r = simulate_with(
            &m,
            &adv,
            &ForecasterPolicy::Uniform,
            &FinalCondition::max(),
            10,
            4000,
            1,
            opts,
        )
        .unwrap();
        let inc = r.pair_increment.unwrap();
        assert!((inc.mean - 0.75).abs() < 4.0 * inc.mean_stderr);
        assert!((inc.variance - 0.1875).abs() < 4.0 * inc.variance_stderr);
    }

    #[test]
    fn dp_saddle_replay_reproduces_the_value() {
        let m = ExpertModel::new(vec![0.6, 0.3]).unwrap();
        let phi = FinalCondition::max_theta(0.1).unwrap();
        let table = Arc::new(solve_value(12, &m, &phi).unwrap());
        let r = simulate(
            &m,
            &AdversaryPolicy::DpReplay(table.clone()),
            &ForecasterPolicy::DpReplay(table.clone()),
            &phi,
            12,
            20_000,
            5,
        )
        .unwrap();
        let v = table.position_value(0, &[0, 0]).unwrap();
        let c = r.conditional.unwrap();
        assert!((c.mean - v).abs() < 3.0 * c.stderr + 1e-12, "{} vs {v}", c.mean);
        assert!((r.regret.mean - v).abs() < 4.0 * r.regret.stderr);
        assert!(c.stderr <= r.regret.stderr);
    }

    #[test]
    fn custom_policies_are_checked() {
        let m = hat_model();
        let adv = AdversaryPolicy::Custom(Arc::new(|_, _, _| AdversaryControl::pure(2, 0, true)));
        let bad = ForecasterPolicy::Custom(Arc::new(|_, _, _, _, out: &mut [f64]| out.fill(0.7)));
        assert!(simulate(&m, &adv, &bad, &FinalCondition::max(), 5, 10, 0).is_err());
        let ok = ForecasterPolicy::Custom(Arc::new(|_, _, _, _, out: &mut [f64]| out.copy_from_slice(&[0.0, 1.0])));
        // expert 1 always gains, forecaster always follows expert 2
        let r = simulate(&m, &adv, &ok, &FinalCondition::max(), 5, 10, 0).unwrap();
        assert!(r.regret.mean >= 0.0);
        assert!(simulate(
            &m,
            &AdversaryPolicy::hat(2).unwrap(),
            &ok,
            &FinalCondition::max(),
            5,
            0,
            0
        )
        .is_err());
        let r = simulate(
            &m,
            &AdversaryPolicy::hat(2).unwrap(),
            &ok,
            &FinalCondition::max(),
            0,
            10,
            0,
        )
        .unwrap();
        assert_eq!((r.regret.mean, r.regret.variance), (0.0, 0.0));
    }

    #[test]
    fn no_conditional_without_translation() {
        let m = hat_model();
        let phi = FinalCondition::custom(|x| x[0].max(0.0));
        let r = simulate(
            &m,
            &AdversaryPolicy::hat(2).unwrap(),
            &ForecasterPolicy::Uniform,
            &phi,
            5,
            50,
            0,
        )
        .unwrap();
        assert!(r.conditional.is_none());
    }
}
