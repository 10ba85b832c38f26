//! Growth of high-order derivatives of the limit near maturity.
//!
//! Derivatives are estimated by central differences with steps proportional
//! to the time to maturity `tau` (time) and to `sqrt(tau)` (space), at points
//! `x = sqrt(tau) xi` on the parabolic scale. The largest magnitude per `tau`
//! is fitted against `tau` on log-log axes.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pde::gaussian::{evaluate_u, GaussianLimit, ReducedGaussian};
use crate::rng;
use crate::stats::fit_line;

/// A function `U(t, x)` on `[0, 1] x R^N` that can be probed.
pub trait LimitField: Sync {
    fn dim(&self) -> usize;
    fn value(&self, t: f64, x: &[f64]) -> Result<f64>;
}

impl LimitField for GaussianLimit {
    fn dim(&self) -> usize {
        self.n_experts()
    }

    fn value(&self, t: f64, x: &[f64]) -> Result<f64> {
        if self.reduced().is_none() {
            return Err(Error::InvalidInput(
                "derivative probes need the two-expert closed form".into(),
            ));
        }
        evaluate_u(self, t, x, 0, 0).map(|e| e.value)
    }
}

impl LimitField for ReducedGaussian {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, t: f64, x: &[f64]) -> Result<f64> {
        Ok(x[1] + self.w(1.0 - t, x[0] - x[1]))
    }
}

/// Gauss-Hermite rule for `E[f(Z)]`, `Z` standard normal, via Golub-Welsch.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(order: usize) -> Self {
        // probabilists' Hermite recurrence: off-diagonal sqrt(k)
        let jac = DMatrix::from_fn(order, order, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64).sqrt()
            } else {
                0.0
            }
        });
        let eig = jac.symmetric_eigen();
        let mut pairs: Vec<(f64, f64)> = (0..order)
            .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        }
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| w * f(*x)).sum()
    }
}

/// Smooth diagnostic terminal data `x2 + log(2 cosh(x1 - x2 - 1))` diffused
/// with the difference variance `sigma_d2`. Its derivatives stay bounded at
/// maturity; the unit shift keeps the odd derivatives away from zero near the
/// probe points.
#[derive(Debug, Clone)]
pub struct SmoothDiagnostic {
    pub sigma_d2: f64,
    pub shift: f64,
    rule: GaussHermite,
}

impl SmoothDiagnostic {
    pub fn new(sigma_d2: f64) -> Self {
        Self {
            sigma_d2,
            shift: 1.0,
            rule: GaussHermite::new(64),
        }
    }
}

fn log_2cosh(y: f64) -> f64 {
    y.abs() + (-2.0 * y.abs()).exp().ln_1p()
}

impl LimitField for SmoothDiagnostic {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, t: f64, x: &[f64]) -> Result<f64> {
        let s = ((1.0 - t).max(0.0) * self.sigma_d2).sqrt();
        let z = x[0] - x[1] - self.shift;
        Ok(x[1] + self.rule.expect(|g| log_2cosh(z + s * g)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeExponents {
    pub exponent_tt: f64,
    pub exponent_tx: f64,
    pub exponent_xxx: f64,
    pub taus: Vec<f64>,
    pub max_tt: Vec<f64>,
    pub max_tx: Vec<f64>,
    pub max_xxx: Vec<f64>,
}

/// Fit `log max |D U(1 - tau, .)|` against `log tau` for the second time
/// derivative, the mixed derivative and the third space derivative along `e1`.
/// `tau_grid` lists times to maturity in `(0, 1)`.
pub fn probe_derivative_bounds(
    field: &dyn LimitField,
    tau_grid: &[f64],
    x_samples: usize,
    seed: u64,
) -> Result<DerivativeExponents> {
    if tau_grid.len() < 4 {
        return Err(Error::InvalidInput("need at least four maturities".into()));
    }
    if tau_grid.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(Error::InvalidInput("maturities must lie in (0, 1)".into()));
    }
    let lo = tau_grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = tau_grid.iter().copied().fold(0.0, f64::max);
    if hi / lo < 10.0 - 1e-12 {
        return Err(Error::InvalidInput("maturities must span at least a decade".into()));
    }
    let n = field.dim();
    let mut rng = rng::stream(seed, 0);
    let mut xis: Vec<Vec<f64>> = vec![vec![0.0; n]];
    for _ in 1..x_samples.max(1) {
        xis.push((0..n).map(|_| StandardNormal.sample(&mut rng)).collect());
    }
    let mut max_tt = Vec::new();
    let mut max_tx = Vec::new();
    let mut max_xxx = Vec::new();
    for &tau in tau_grid {
        let t = 1.0 - tau;
        let h = 0.1 * tau;
        let k = 0.1 * tau.sqrt();
        let (mut mtt, mut mtx, mut mxxx) = (0.0f64, 0.0f64, 0.0f64);
        for xi in &xis {
            let x: Vec<f64> = xi.iter().map(|v| v * tau.sqrt()).collect();
            let at = |dt: f64, dx: f64| {
                let mut y = x.clone();
                y[0] += dx;
                field.value(t + dt, &y)
            };
            let u0 = at(0.0, 0.0)?;
            let tt = (at(h, 0.0)? - 2.0 * u0 + at(-h, 0.0)?) / (h * h);
            let tx = (at(h, k)? - at(h, -k)? - at(-h, k)? + at(-h, -k)?) / (4.0 * h * k);
            let xxx =
                (at(0.0, 2.0 * k)? - 2.0 * at(0.0, k)? + 2.0 * at(0.0, -k)? - at(0.0, -2.0 * k)?) / (2.0 * k * k * k);
            mtt = mtt.max(tt.abs());
            mtx = mtx.max(tx.abs());
            mxxx = mxxx.max(xxx.abs());
        }
        max_tt.push(mtt);
        max_tx.push(mtx);
        max_xxx.push(mxxx);
    }
    let lt: Vec<f64> = tau_grid.iter().map(|t| t.ln()).collect();
    let slope = |v: &[f64]| {
        let ly: Vec<f64> = v.iter().map(|x| x.max(1e-300).ln()).collect();
        fit_line(&lt, &ly).slope
    };
    Ok(DerivativeExponents {
        exponent_tt: slope(&max_tt),
        exponent_tx: slope(&max_tx),
        exponent_xxx: slope(&max_xxx),
        taus: tau_grid.to_vec(),
        max_tt,
        max_tx,
        max_xxx,
    })
}
