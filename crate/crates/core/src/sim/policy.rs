//! Strategies for both players.
//!
//! Every policy sees the round index `m` (1-based), the horizon `M` and the
//! current regret vector `x` (expert gains minus forecaster gain). Regrets are
//! integers along any simulated path.

use std::borrow::Cow;
use std::fmt;
use std::sync::Arc;

use crate::balanced::{construct_balanced, frobenius, BalancedAnalysis, SigmaPair};
use crate::dp::{AdversarySpace, ValueTable};
use crate::error::{Error, Result};
use crate::game::{
    event_atoms, event_mean, mask_gain, AdversaryControl, ExpertModel, FinalCondition, FinalKind, ForecasterControl,
};
use crate::lp::{LinearProgram, Relation};
use crate::pde::gaussian::{gradient_u, hessian_u, GaussianLimit};

/// Monte Carlo sample count for Hessians and gradients with three or more experts.
pub const DEFAULT_POLICY_MC: usize = 4096;

fn scaled_time(m: usize, horizon: usize) -> f64 {
    (m - 1) as f64 / horizon as f64
}

fn scaled_point(x: &[f64], horizon: usize) -> Vec<f64> {
    let r = (horizon as f64).sqrt();
    x.iter().map(|v| v / r).collect()
}

fn leaders(x: &[f64]) -> Vec<usize> {
    let top = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..x.len()).filter(|&i| x[i] >= top - 1e-9).collect()
}

fn uniform_over(idx: &[usize], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let w = 1.0 / idx.len() as f64;
    for &i in idx {
        out[i] = w;
    }
}

/// Balanced adversary steered by the sign of `Tr(Sigma1 Hess U)`.
#[derive(Debug, Clone)]
pub struct AsymptoticStar {
    gl: GaussianLimit,
    sigmas: SigmaPair,
    greedy: AdversaryControl,
    generous: AdversaryControl,
    mc_samples: usize,
    seed: u64,
}

impl AsymptoticStar {
    pub fn new(model: &ExpertModel, analysis: &BalancedAnalysis, gl: GaussianLimit) -> Result<Self> {
        let (c_min, c_max) = analysis.require_feasible()?;
        Ok(Self {
            sigmas: SigmaPair::new(model),
            greedy: construct_balanced(c_min, model)?,
            generous: construct_balanced(c_max, model)?,
            gl,
            mc_samples: DEFAULT_POLICY_MC,
            seed: 0,
        })
    }

    pub fn with_monte_carlo(mut self, samples: usize, seed: u64) -> Self {
        self.mc_samples = samples;
        self.seed = seed;
        self
    }

    fn control(&self, m: usize, horizon: usize, x: &[f64]) -> Result<&AdversaryControl> {
        if m >= horizon {
            // last round: greedy balanced control
            return Ok(&self.greedy);
        }
        let h = hessian_u(
            &self.gl,
            scaled_time(m, horizon),
            &scaled_point(x, horizon),
            self.mc_samples,
            self.seed,
        )?;
        Ok(if frobenius(&self.sigmas.sigma1, &h) > 0.0 {
            &self.generous
        } else {
            &self.greedy
        })
    }
}

/// One round of the asymptotic adversary at state `x` before round `m`.
pub fn adversary_asymptotic_step(
    gl: &GaussianLimit,
    analysis: &BalancedAnalysis,
    m: usize,
    horizon: usize,
    x: &[f64],
) -> Result<AdversaryControl> {
    if m == 0 || m > horizon {
        return Err(Error::InvalidInput(format!("round {m} outside 1..={horizon}")));
    }
    let model = ExpertModel::new(gl.mu().to_vec())?;
    let star = AsymptoticStar::new(&model, analysis, gl.clone())?;
    star.control(m, horizon, x).cloned()
}

/// `b[1] = a[2] = 1/2`.
pub fn adversary_hat(n: usize) -> Result<AdversaryControl> {
    if n != 2 {
        return Err(Error::InvalidInput("the hat control is defined for two experts".into()));
    }
    AdversaryControl::new(vec![0.0, 0.5], vec![0.5, 0.0])
}

/// One-step lookahead adversary: maximises the expected one-round increase of
/// the final condition minus the best expert gain, by LP. For max-type final
/// conditions at integer states that increase depends only on the set of
/// leading experts, so the controls are tabulated by leader set.
#[derive(Debug, Clone)]
pub struct MyopicSaddle {
    table: Vec<AdversaryControl>,
}

impl MyopicSaddle {
    pub fn new(model: &ExpertModel, phi: &FinalCondition) -> Result<Self> {
        if phi.kind() == FinalKind::Custom {
            return Err(Error::InvalidInput(
                "the one-step adversary supports the max and max-theta final conditions".into(),
            ));
        }
        let n = model.n_experts();
        if n > 16 {
            return Err(Error::Capacity("one-step adversary supports at most 16 experts".into()));
        }
        let events = 2 * n;
        let atoms: Vec<Vec<(u32, f64)>> = (0..events).map(|e| event_atoms(model, e)).collect();
        let means: Vec<Vec<f64>> = (0..events).map(|e| event_mean(model, e)).collect();
        let mut table = Vec::with_capacity(1 << n);
        table.push(AdversaryControl::pure(n, 0, false)); // unused: empty leader set
        for lead in 1u32..(1 << n) {
            let x: Vec<f64> = (0..n).map(|i| if (lead >> i) & 1 == 1 { 0.0 } else { -2.0 }).collect();
            let base = phi.eval(&x);
            let mut y = vec![0.0; n];
            let f: Vec<f64> = atoms
                .iter()
                .map(|ats| {
                    ats.iter()
                        .map(|&(mask, p)| {
                            for i in 0..n {
                                y[i] = x[i] + mask_gain(mask, i);
                            }
                            p * (phi.eval(&y) - base)
                        })
                        .sum()
                })
                .collect();
            let mut obj = f;
            obj.push(-1.0);
            let mut lp = LinearProgram::maximize(obj);
            for i in 0..n {
                let mut row: Vec<f64> = means.iter().map(|c| c[i]).collect();
                row.push(-1.0);
                lp.constraint(row, Relation::Le, 0.0);
            }
            let mut row = vec![1.0; events + 1];
            row[events] = 0.0;
            lp.constraint(row, Relation::Eq, 1.0);
            let sol = lp.solve()?;
            let w: Vec<f64> = sol.x[..events].iter().map(|v| v.max(0.0)).collect();
            let t: f64 = w.iter().sum();
            table.push(AdversaryControl::from_weights(
                &w.iter().map(|v| v / t).collect::<Vec<_>>(),
            )?);
        }
        Ok(Self { table })
    }

    pub fn control(&self, x: &[f64]) -> &AdversaryControl {
        let key = leaders(x).iter().fold(0usize, |k, &i| k | (1 << i));
        &self.table[key]
    }
}

type CustomAdversary = Arc<dyn Fn(usize, usize, &[f64]) -> AdversaryControl + Send + Sync>;
type CustomForecaster = Arc<dyn Fn(usize, usize, &[f64], &AdversaryControl, &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub enum AdversaryPolicy {
    AsymptoticStar(Box<AsymptoticStar>),
    Constant(AdversaryControl),
    Hat(AdversaryControl),
    MyopicSaddle(MyopicSaddle),
    DpReplay(Arc<ValueTable>),
    Custom(CustomAdversary),
}

impl fmt::Debug for AdversaryPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn replay_index(table: &ValueTable, m: usize, x: &[f64]) -> Result<usize> {
    let n = x.len();
    let z: Vec<i64> = x[..n - 1].iter().map(|v| (v - x[n - 1]).round() as i64).collect();
    let slice = table.slice(m - 1);
    let r = slice.radius as i64;
    if z.iter().any(|v| v.abs() > r) {
        return Err(Error::OutOfDomain(format!("state {z:?} outside DP slice {}", m - 1)));
    }
    let side = 2 * slice.radius + 1;
    Ok(z.iter().fold(0, |idx, v| idx * side + (v + r) as usize))
}

impl AdversaryPolicy {
    pub fn hat(n: usize) -> Result<Self> {
        adversary_hat(n).map(AdversaryPolicy::Hat)
    }

    pub fn name(&self) -> &'static str {
        match self {
            AdversaryPolicy::AsymptoticStar(_) => "asymptotic_star",
            AdversaryPolicy::Constant(_) => "constant",
            AdversaryPolicy::Hat(_) => "hat",
            AdversaryPolicy::MyopicSaddle(_) => "myopic_saddle",
            AdversaryPolicy::DpReplay(_) => "dp_replay",
            AdversaryPolicy::Custom(_) => "custom",
        }
    }

    pub(crate) fn validate(&self, n: usize, horizon: usize) -> Result<()> {
        let dims = match self {
            AdversaryPolicy::Constant(a) | AdversaryPolicy::Hat(a) => a.n_experts(),
            AdversaryPolicy::AsymptoticStar(s) => s.gl.n_experts(),
            AdversaryPolicy::MyopicSaddle(s) => s.table[1].n_experts(),
            AdversaryPolicy::DpReplay(t) => {
                if t.horizon() != horizon {
                    return Err(Error::InvalidInput(format!(
                        "replayed table has horizon {}, simulation uses {horizon}",
                        t.horizon()
                    )));
                }
                if !matches!(t.space(), AdversarySpace::Limited(_)) {
                    return Err(Error::InvalidInput(
                        "only limited-adversary tables can be replayed".into(),
                    ));
                }
                t.n_experts()
            }
            AdversaryPolicy::Custom(_) => n,
        };
        if dims != n {
            return Err(Error::DimensionMismatch { expected: n, got: dims });
        }
        Ok(())
    }

    pub fn control(&self, m: usize, horizon: usize, x: &[f64]) -> Result<Cow<'_, AdversaryControl>> {
        Ok(match self {
            AdversaryPolicy::Constant(a) | AdversaryPolicy::Hat(a) => Cow::Borrowed(a),
            AdversaryPolicy::AsymptoticStar(s) => Cow::Borrowed(s.control(m, horizon, x)?),
            AdversaryPolicy::MyopicSaddle(s) => Cow::Borrowed(s.control(x)),
            AdversaryPolicy::DpReplay(t) => {
                let idx = replay_index(t, m, x)?;
                Cow::Owned(AdversaryControl::from_weights(t.slice(m - 1).adversary_weights(idx))?)
            }
            AdversaryPolicy::Custom(f) => {
                let a = f(m, horizon, x);
                // re-validate what user code produced
                Cow::Owned(AdversaryControl::new(a.a().to_vec(), a.b().to_vec())?)
            }
        })
    }
}

#[derive(Clone)]
pub enum ForecasterPolicy {
    GradientU(Box<GaussianLimit>),
    FollowTheLeader,
    /// Exponential weights on the regrets; `None` uses `sqrt(8 ln N / M)`.
    MultiplicativeWeights {
        eta: Option<f64>,
    },
    /// Uniform over the experts with the largest expected gain under the current control.
    BestResponse(ExpertModel),
    Uniform,
    DpReplay(Arc<ValueTable>),
    Custom(CustomForecaster),
}

impl fmt::Debug for ForecasterPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Gradient forecaster at state `x` before round `m`.
pub fn forecaster_gradient_step(gl: &GaussianLimit, m: usize, horizon: usize, x: &[f64]) -> Result<ForecasterControl> {
    if m == 0 || m > horizon {
        return Err(Error::InvalidInput(format!("round {m} outside 1..={horizon}")));
    }
    let mut out = vec![0.0; gl.n_experts()];
    gradient_into(gl, m, horizon, x, &mut out, DEFAULT_POLICY_MC, 0)?;
    ForecasterControl::new(out)
}

fn gradient_into(
    gl: &GaussianLimit,
    m: usize,
    horizon: usize,
    x: &[f64],
    out: &mut [f64],
    mc: usize,
    seed: u64,
) -> Result<()> {
    if m >= horizon {
        // last round: follow the leaders
        uniform_over(&leaders(x), out);
        return Ok(());
    }
    let t = scaled_time(m, horizon);
    if let Some(r) = gl.reduced() {
        let p = r.w_z(1.0 - t, (x[0] - x[1]) / (horizon as f64).sqrt());
        out[0] = p;
        out[1] = 1.0 - p;
        return Ok(());
    }
    let g = gradient_u(gl, t, &scaled_point(x, horizon), mc, seed)?;
    out.copy_from_slice(&g);
    Ok(())
}

impl ForecasterPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            ForecasterPolicy::GradientU(_) => "gradient_u",
            ForecasterPolicy::FollowTheLeader => "follow_the_leader",
            ForecasterPolicy::MultiplicativeWeights { .. } => "multiplicative_weights",
            ForecasterPolicy::BestResponse(_) => "best_response",
            ForecasterPolicy::Uniform => "uniform",
            ForecasterPolicy::DpReplay(_) => "dp_replay",
            ForecasterPolicy::Custom(_) => "custom",
        }
    }

    pub(crate) fn validate(&self, n: usize, horizon: usize) -> Result<()> {
        let dims = match self {
            ForecasterPolicy::GradientU(gl) => gl.n_experts(),
            ForecasterPolicy::BestResponse(m) => m.n_experts(),
            ForecasterPolicy::DpReplay(t) => {
                if t.horizon() != horizon {
                    return Err(Error::InvalidInput(format!(
                        "replayed table has horizon {}, simulation uses {horizon}",
                        t.horizon()
                    )));
                }
                t.n_experts()
            }
            ForecasterPolicy::MultiplicativeWeights { eta: Some(eta) } if !(*eta > 0.0) => {
                return Err(Error::InvalidInput(format!("learning rate {eta} must be positive")));
            }
            _ => n,
        };
        if dims != n {
            return Err(Error::DimensionMismatch { expected: n, got: dims });
        }
        Ok(())
    }

    /// Write the forecaster's mix for round `m` into `out`.
    pub fn write_control(
        &self,
        m: usize,
        horizon: usize,
        x: &[f64],
        alpha: &AdversaryControl,
        out: &mut [f64],
    ) -> Result<()> {
        let n = x.len();
        match self {
            ForecasterPolicy::GradientU(gl) => gradient_into(gl, m, horizon, x, out, DEFAULT_POLICY_MC, 0)?,
            ForecasterPolicy::FollowTheLeader => uniform_over(&leaders(x), out),
            ForecasterPolicy::MultiplicativeWeights { eta } => {
                let eta = eta.unwrap_or_else(|| (8.0 * (n as f64).ln() / horizon.max(1) as f64).sqrt());
                let top = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for (o, v) in out.iter_mut().zip(x) {
                    *o = (eta * (v - top)).exp();
                    total += *o;
                }
                out.iter_mut().for_each(|o| *o /= total);
            }
            ForecasterPolicy::BestResponse(model) => {
                let mu = model.mu();
                let mut top = f64::NEG_INFINITY;
                for i in 0..n {
                    let c = (1.0 - alpha.a()[i] - alpha.b()[i]) * mu[i] + alpha.b()[i];
                    out[i] = c;
                    top = top.max(c);
                }
                let best: Vec<usize> = (0..n).filter(|&i| out[i] >= top - 1e-12).collect();
                uniform_over(&best, out);
            }
            ForecasterPolicy::Uniform => out.iter_mut().for_each(|o| *o = 1.0 / n as f64),
            ForecasterPolicy::DpReplay(t) => {
                let idx = replay_index(t, m, x)?;
                out.copy_from_slice(t.slice(m - 1).forecaster(idx));
            }
            ForecasterPolicy::Custom(f) => {
                f(m, horizon, x, alpha, out);
                ForecasterControl::new(out.to_vec())?;
            }
        }
        Ok(())
    }
}
