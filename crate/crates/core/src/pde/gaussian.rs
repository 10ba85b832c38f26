//! Gaussian representation of the limit value `U(t, x) = E[Phi(x + sqrt(1-t) P xi)]`.
//!
//! With two experts only the difference coordinate diffuses, and `U` has a
//! closed form through the normal cdf and density. For three or more experts
//! the expectation and its derivatives are estimated by antithetic Monte Carlo.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::balanced::{analyze_balanced, check_posdef, BalancedAnalysis, SigmaPair};
use crate::error::{Error, Result};
use crate::game::{ExpertModel, FinalCondition};
use crate::rng;
use crate::stats::{normal_cdf, normal_pdf};

/// Antithetic pairs per Monte Carlo block (one RNG stream per block).
pub const MC_BLOCK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Every pair of accuracies sums to at most one: the adversary uses `c_max`.
    Generous,
    /// Every pair sums to at least one: the adversary uses `c_min`.
    Greedy,
}

/// Greedy wins when both conditions hold (all pairwise sums equal one).
pub fn select_regime(model: &ExpertModel) -> Result<Regime> {
    let mu = model.mu();
    let pairs = || (0..mu.len()).flat_map(move |i| (i + 1..mu.len()).map(move |j| mu[i] + mu[j]));
    if pairs().all(|s| s >= 1.0) {
        Ok(Regime::Greedy)
    } else if pairs().all(|s| s <= 1.0) {
        Ok(Regime::Generous)
    } else {
        Err(Error::UnsupportedRegime(
            "pairwise accuracy sums straddle 1; the limit has no Gaussian representation here".into(),
        ))
    }
}

/// Closed form for two experts in the difference coordinate `z = x1 - x2`:
/// `w(tau, z) = (1-theta) E[(z + s Z)^+] + theta z / 2` with `s^2 = tau sigma_d^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReducedGaussian {
    pub sigma_d2: f64,
    pub theta: f64,
}

impl ReducedGaussian {
    fn s(&self, tau: f64) -> f64 {
        (tau.max(0.0) * self.sigma_d2).sqrt()
    }

    /// `w` at time to maturity `tau`.
    pub fn w(&self, tau: f64, z: f64) -> f64 {
        let s = self.s(tau);
        let plus = if s > 0.0 {
            z * normal_cdf(z / s) + s * normal_pdf(z / s)
        } else {
            z.max(0.0)
        };
        (1.0 - self.theta) * plus + 0.5 * self.theta * z
    }

    pub fn w_z(&self, tau: f64, z: f64) -> f64 {
        let s = self.s(tau);
        let p = if s > 0.0 {
            normal_cdf(z / s)
        } else if z > 0.0 {
            1.0
        } else if z < 0.0 {
            0.0
        } else {
            0.5
        };
        (1.0 - self.theta) * p + 0.5 * self.theta
    }

    pub fn w_zz(&self, tau: f64, z: f64) -> f64 {
        let s = self.s(tau);
        if s > 0.0 {
            (1.0 - self.theta) * normal_pdf(z / s) / s
        } else if z == 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }

    /// Derivative in calendar time `t` (that is, `-d/dtau`).
    pub fn w_t(&self, tau: f64, z: f64) -> f64 {
        -0.5 * self.sigma_d2 * self.w_zz(tau, z)
    }
}

/// Difference variance `2c(1 - mu1 - mu2) + 2 mu1 mu2` for two experts.
pub fn pair_difference_variance(c: f64, mu1: f64, mu2: f64) -> f64 {
    2.0 * c * (1.0 - mu1 - mu2) + 2.0 * mu1 * mu2
}

#[derive(Debug, Clone)]
pub struct GaussianLimit {
    mu: Vec<f64>,
    theta: f64,
    c_star: f64,
    regime: Regime,
    sigma_bar: DMatrix<f64>,
    factor: DMatrix<f64>,
    factor_inv: DMatrix<f64>,
    phi: FinalCondition,
}

impl GaussianLimit {
    pub fn n_experts(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn c_star(&self) -> f64 {
        self.c_star
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    /// `c* Sigma1 - Sigma2`.
    pub fn sigma_bar(&self) -> &DMatrix<f64> {
        &self.sigma_bar
    }

    /// Symmetric square root of [`GaussianLimit::sigma_bar`].
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn final_condition(&self) -> &FinalCondition {
        &self.phi
    }

    /// Closed-form reduction, available for two experts.
    pub fn reduced(&self) -> Option<ReducedGaussian> {
        (self.mu.len() == 2).then(|| ReducedGaussian {
            sigma_d2: self.sigma_bar[(0, 0)] + self.sigma_bar[(1, 1)] - 2.0 * self.sigma_bar[(0, 1)],
            theta: self.theta,
        })
    }
}

pub fn build_gaussian_limit(model: &ExpertModel, analysis: &BalancedAnalysis, theta: f64) -> Result<GaussianLimit> {
    let (c_min, c_max) = analysis.require_feasible()?;
    if model.mu().iter().any(|&m| m <= 0.0 || m >= 1.0) {
        return Err(Error::Degenerate(
            "accuracies must lie strictly inside (0, 1) for the Gaussian limit".into(),
        ));
    }
    let phi = FinalCondition::max_theta(theta)?;
    let regime = select_regime(model)?;
    let c_star = match regime {
        Regime::Greedy => c_min,
        Regime::Generous => c_max,
    };
    let sigmas = SigmaPair::new(model);
    let pd = check_posdef(c_star, &sigmas);
    if !pd.positive_definite {
        return Err(Error::Numerical(format!(
            "limit covariance is not positive definite (min eigenvalue {:.3e})",
            pd.min_eigenvalue
        )));
    }
    let sigma_bar = sigmas.covariance(c_star);
    let eig = sigma_bar.clone().symmetric_eigen();
    let sqrt_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let q = &eig.eigenvectors;
    let factor = q * sqrt_diag * q.transpose();
    let factor_inv = q * inv_diag * q.transpose();
    Ok(GaussianLimit {
        mu: model.mu().to_vec(),
        theta,
        c_star,
        regime,
        sigma_bar,
        factor,
        factor_inv,
        phi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

fn check_point(gl: &GaussianLimit, t: f64, x: &[f64]) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("t = {t} is not in [0, 1]")));
    }
    if x.len() != gl.n_experts() {
        return Err(Error::DimensionMismatch {
            expected: gl.n_experts(),
            got: x.len(),
        });
    }
    Ok(())
}

fn check_interior(t: f64) -> Result<()> {
    if t >= 1.0 {
        return Err(Error::InvalidInput(
            "derivatives of the limit are undefined at maturity t = 1".into(),
        ));
    }
    Ok(())
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Per-block partial sums of an antithetic Monte Carlo estimator.
/// `f(xi, out)` adds the pair contribution for the normal draw `xi` into `out`.
fn mc_blocks<F>(n: usize, width: usize, samples: usize, seed: u64, f: F) -> (Vec<f64>, Vec<f64>, usize)
where
    F: Fn(&DVector<f64>, &mut [f64]) + Sync,
{
    let pairs = samples.div_ceil(2).max(1);
    let blocks = pairs.div_ceil(MC_BLOCK);
    let partial: Vec<(Vec<f64>, Vec<f64>)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng::stream(seed, b as u64);
            let count = MC_BLOCK.min(pairs - b * MC_BLOCK);
            let mut sum = vec![0.0; width];
            let mut sumsq = vec![0.0; width];
            let mut tmp = vec![0.0; width];
            let mut xi = DVector::zeros(n);
            for _ in 0..count {
                for v in xi.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                tmp.iter_mut().for_each(|v| *v = 0.0);
                f(&xi, &mut tmp);
                for k in 0..width {
                    sum[k] += tmp[k];
                    sumsq[k] += tmp[k] * tmp[k];
                }
            }
            (sum, sumsq)
        })
        .collect();
    let mut sum = vec![0.0; width];
    let mut sumsq = vec![0.0; width];
    for (s, q) in partial {
        for k in 0..width {
            sum[k] += s[k];
            sumsq[k] += q[k];
        }
    }
    (sum, sumsq, pairs)
}

/// `U(t, x)`. Exact for two experts (stderr 0), Monte Carlo otherwise.
pub fn evaluate_u(gl: &GaussianLimit, t: f64, x: &[f64], mc_samples: usize, seed: u64) -> Result<Estimate> {
    check_point(gl, t, x)?;
    if t == 1.0 {
        return Ok(Estimate {
            value: gl.phi.eval(x),
            stderr: 0.0,
        });
    }
    let tau = 1.0 - t;
    if let Some(r) = gl.reduced() {
        return Ok(Estimate {
            value: x[1] + r.w(tau, x[0] - x[1]),
            stderr: 0.0,
        });
    }
    let n = gl.n_experts();
    let scale = tau.sqrt();
    let (sum, sumsq, pairs) = mc_blocks(n, 1, mc_samples, seed, |xi, out| {
        let y = &gl.factor * xi * scale;
        let plus: Vec<f64> = (0..n).map(|i| x[i] + y[i]).collect();
        let minus: Vec<f64> = (0..n).map(|i| x[i] - y[i]).collect();
        out[0] = 0.5 * (gl.phi.eval(&plus) + gl.phi.eval(&minus));
    });
    let mean = sum[0] / pairs as f64;
    let var = (sumsq[0] / pairs as f64 - mean * mean).max(0.0) * pairs as f64 / (pairs.max(2) - 1) as f64;
    Ok(Estimate {
        value: mean,
        stderr: (var / pairs as f64).sqrt(),
    })
}

/// `grad U(t, x) = (1-theta) P(coordinate i leads) + theta/N`.
pub fn gradient_u(gl: &GaussianLimit, t: f64, x: &[f64], mc_samples: usize, seed: u64) -> Result<Vec<f64>> {
    check_point(gl, t, x)?;
    check_interior(t)?;
    let tau = 1.0 - t;
    if let Some(r) = gl.reduced() {
        let g1 = r.w_z(tau, x[0] - x[1]);
        return Ok(vec![g1, 1.0 - g1]);
    }
    let n = gl.n_experts();
    let scale = tau.sqrt();
    let (sum, _, pairs) = mc_blocks(n, n, mc_samples, seed, |xi, out| {
        let y = &gl.factor * xi * scale;
        let plus: Vec<f64> = (0..n).map(|i| x[i] + y[i]).collect();
        let minus: Vec<f64> = (0..n).map(|i| x[i] - y[i]).collect();
        out[argmax(&plus)] += 0.5;
        out[argmax(&minus)] += 0.5;
    });
    let th = gl.theta;
    Ok(sum
        .iter()
        .map(|s| (1.0 - th) * s / pairs as f64 + th / n as f64)
        .collect())
}

/// `Hess U(t, x)`, projected so that rows sum to zero.
pub fn hessian_u(gl: &GaussianLimit, t: f64, x: &[f64], mc_samples: usize, seed: u64) -> Result<DMatrix<f64>> {
    check_point(gl, t, x)?;
    check_interior(t)?;
    let tau = 1.0 - t;
    let n = gl.n_experts();
    if let Some(r) = gl.reduced() {
        let h = r.w_zz(tau, x[0] - x[1]);
        return Ok(DMatrix::from_row_slice(2, 2, &[h, -h, -h, h]));
    }
    let scale = tau.sqrt();
    // likelihood-ratio weights: d/dx_k E[g(x + Y)] = E[g(x + Y) (P^-1 xi)_k] / sqrt(tau)
    let (sum, _, pairs) = mc_blocks(n, n * n, mc_samples, seed, |xi, out| {
        let y = &gl.factor * xi * scale;
        let w = &gl.factor_inv * xi;
        let plus: Vec<f64> = (0..n).map(|i| x[i] + y[i]).collect();
        let minus: Vec<f64> = (0..n).map(|i| x[i] - y[i]).collect();
        let (jp, jm) = (argmax(&plus), argmax(&minus));
        if jp != jm {
            for k in 0..n {
                out[jp * n + k] += 0.5 * w[k];
                out[jm * n + k] -= 0.5 * w[k];
            }
        }
    });
    let raw = DMatrix::from_fn(n, n, |j, k| (1.0 - gl.theta) * sum[j * n + k] / (pairs as f64 * scale));
    let sym = (&raw + raw.transpose()) * 0.5;
    let proj = DMatrix::<f64>::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    Ok(&proj * sym * &proj)
}

/// `dU/dt`; closed form for two experts only.
pub fn time_derivative_u(gl: &GaussianLimit, t: f64, x: &[f64]) -> Result<f64> {
    check_point(gl, t, x)?;
    check_interior(t)?;
    let r = gl
        .reduced()
        .ok_or_else(|| Error::InvalidInput("closed-form time derivative needs two experts".into()))?;
    Ok(r.w_t(1.0 - t, x[0] - x[1]))
}

/// Diffusion constant of the equal-accuracy example.
pub fn symmetric_heat_constant(mu_bar: f64, n: usize) -> Result<f64> {
    if !(mu_bar > 0.0 && mu_bar < 1.0) {
        return Err(Error::InvalidInput(format!("mu = {mu_bar} is not in (0, 1)")));
    }
    if n == 0 {
        return Err(Error::InvalidInput("N must be positive".into()));
    }
    let m = mu_bar;
    let nf = n as f64;
    let inner = if m <= 0.5 { m + (1.0 - m) / nf } else { m - m / nf };
    Ok(0.5 * (1.0 - 2.0 * m) * inner + 0.5 * m * m)
}

/// Value of the two-expert sub-game on `pair` with terminal payoff `max(x_i, x_j)`.
pub fn two_expert_lower_bound(model: &ExpertModel, pair: (usize, usize), t: f64, x: &[f64]) -> Result<f64> {
    let (i, j) = pair;
    if i == j {
        return Err(Error::InvalidInput("pair must name two distinct experts".into()));
    }
    if x.len() != model.n_experts() {
        return Err(Error::DimensionMismatch {
            expected: model.n_experts(),
            got: x.len(),
        });
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("t = {t} is not in [0, 1]")));
    }
    let sub = model.restrict(&[i, j])?;
    let (mi, mj) = (sub.mu()[0], sub.mu()[1]);
    let analysis = analyze_balanced(&sub, 1e-12)?;
    let (c_min, c_max) = analysis.require_feasible()?;
    let c = if mi + mj >= 1.0 { c_min } else { c_max };
    let r = ReducedGaussian {
        sigma_d2: pair_difference_variance(c, mi, mj).max(0.0),
        theta: 0.0,
    };
    Ok(x[j] + r.w(1.0 - t, x[i] - x[j]))
}
