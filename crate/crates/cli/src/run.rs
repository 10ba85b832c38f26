//! Subcommand dispatch.

use std::sync::Arc;

use serde_json::{json, Value};

use expertgame::balanced::{analyze_balanced, compute_delta, construct_balanced, min_total_spread, BalancedAnalysis};
use expertgame::dp::{solve_value_with, DpOptions, ValueTable};
use expertgame::game::{AdversaryControl, ExpertModel, FinalCondition};
use expertgame::pde::{build_gaussian_limit, evaluate_u, solve_reduced_fd, GaussianLimit};
use expertgame::sim::experiments::COUNTEREXAMPLE_MU;
use expertgame::sim::{
    experiment_convergence, experiment_counterexample, experiment_empty_regime, simulate_with, AdversaryPolicy,
    AsymptoticStar, CounterAdversary, CounterForecaster, CounterexampleConfig, ForecasterPolicy, MyopicSaddle,
    SimOptions,
};
use expertgame::stats::Summary;

use crate::config::{
    AdversaryConfig, BalancedLevel, CounterAdversaryConfig, CounterForecasterConfig, ExperimentConfig, FinalKindConfig,
    ForecasterConfig,
};
use crate::error::CliError;
use crate::output::{Cell, RunOutput, Table};

/// Monte Carlo pairs per Hessian or gradient in simulated policies with three or more experts.
pub const POLICY_MC_SAMPLES: usize = 4096;
pub const DEFAULT_CONVERGE_HORIZONS: [usize; 3] = [16, 64, 256];
pub const DEFAULT_EMPTY_REGIME_HORIZONS: [usize; 3] = [64, 256, 1024];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Analyze,
    Dp,
    Pde,
    Simulate,
    Converge,
    Counterexample,
    EmptyRegime,
}

impl Subcommand {
    pub const ALL: [Subcommand; 7] = [
        Subcommand::Analyze,
        Subcommand::Dp,
        Subcommand::Pde,
        Subcommand::Simulate,
        Subcommand::Converge,
        Subcommand::Counterexample,
        Subcommand::EmptyRegime,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Analyze => "analyze",
            Subcommand::Dp => "dp",
            Subcommand::Pde => "pde",
            Subcommand::Simulate => "simulate",
            Subcommand::Converge => "converge",
            Subcommand::Counterexample => "counterexample",
            Subcommand::EmptyRegime => "empty-regime",
        }
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Result<Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError::Serialize(e.to_string()))
}

fn model(cfg: &ExperimentConfig) -> Result<ExpertModel, CliError> {
    ExpertModel::new(cfg.experts.mu.clone()).map_err(CliError::core("experts"))
}

/// `theta` of the configured final condition (0 for the plain max).
fn effective_theta(cfg: &ExperimentConfig) -> f64 {
    match cfg.final_condition.kind {
        FinalKindConfig::Max => 0.0,
        FinalKindConfig::MaxTheta => cfg.game.theta,
    }
}

fn final_condition(cfg: &ExperimentConfig) -> Result<FinalCondition, CliError> {
    match cfg.final_condition.kind {
        FinalKindConfig::Max => Ok(FinalCondition::max()),
        FinalKindConfig::MaxTheta => FinalCondition::max_theta(cfg.game.theta).map_err(CliError::core("final")),
    }
}

fn analysis(m: &ExpertModel) -> Result<BalancedAnalysis, CliError> {
    analyze_balanced(m, 1e-12).map_err(CliError::core("balanced analysis"))
}

fn limit(m: &ExpertModel, an: &BalancedAnalysis, theta: f64) -> Result<GaussianLimit, CliError> {
    build_gaussian_limit(m, an, theta).map_err(CliError::core("gaussian limit"))
}

fn summary_cells(name: &str, s: &Summary) -> Vec<Cell> {
    vec![
        Cell::from(name),
        Cell::from(s.n),
        Cell::from(s.mean),
        Cell::from(s.variance),
        Cell::from(s.stderr),
        Cell::from(s.ci95_low),
        Cell::from(s.ci95_high),
    ]
}

const SUMMARY_COLUMNS: [&str; 7] = ["estimator", "n", "mean", "variance", "stderr", "ci95_low", "ci95_high"];

pub fn run(sub: Subcommand, cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    cfg.validate()?;
    match sub {
        Subcommand::Analyze => analyze(cfg),
        Subcommand::Dp => dp(cfg),
        Subcommand::Pde => pde(cfg),
        Subcommand::Simulate => simulate(cfg),
        Subcommand::Converge => converge(cfg),
        Subcommand::Counterexample => counterexample(cfg),
        Subcommand::EmptyRegime => empty_regime(cfg),
    }
}

fn analyze(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    let m = model(cfg)?;
    let an = analysis(&m)?;
    let (delta, spread) = if an.feasible {
        (None, None)
    } else {
        let d = compute_delta(&m, 6, 200).map_err(CliError::core("gap estimate"))?;
        let (s, _) = min_total_spread(&m).map_err(CliError::core("spread"))?;
        (Some(d.delta), Some(s))
    };
    let mut table = Table::new([
        "feasible",
        "c_min",
        "c_max",
        "argmin_c",
        "s_min",
        "delta",
        "delta_spread",
    ]);
    table.push(vec![
        an.feasible.into(),
        an.c_min.into(),
        an.c_max.into(),
        an.argmin_c.into(),
        an.s_min.into(),
        delta.into(),
        spread.into(),
    ]);
    let mut summary = json!({
        "feasible": an.feasible,
        "c_min": an.c_min,
        "c_max": an.c_max,
        "argmin_c": an.argmin_c,
        "s_min": an.s_min,
    });
    if let (Some(d), Some(s)) = (delta, spread) {
        summary["delta"] = json!(d);
        summary["delta_spread"] = json!(s);
    }
    Ok(RunOutput { summary, table })
}

fn dp_table(cfg: &ExperimentConfig, horizon: usize) -> Result<ValueTable, CliError> {
    let m = model(cfg)?;
    let phi = final_condition(cfg)?;
    solve_value_with(
        horizon,
        &m,
        &phi,
        DpOptions {
            radius: cfg.game.radius,
        },
    )
    .map_err(CliError::core("dynamic program"))
}

fn dp(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    let horizon = cfg.require_horizon("dp")?;
    let table = dp_table(cfg, horizon)?;
    let n = table.n_experts();
    let mut cols = vec!["m".to_string()];
    cols.extend((1..n).map(|i| format!("z{i}")));
    cols.push("value".into());
    cols.extend((1..=n).map(|i| format!("a{i}")));
    cols.extend((1..=n).map(|i| format!("b{i}")));
    cols.extend((1..=n).map(|i| format!("phi{i}")));
    cols.push("duality_gap".into());
    let mut out = Table::new(cols);
    let mut states = 0usize;
    for slice in table.slices() {
        let values = slice.values();
        states += values.len();
        for (idx, &v) in values.iter().enumerate() {
            let mut row: Vec<Cell> = vec![slice.m.into()];
            row.extend(slice.state(idx).into_iter().map(Cell::from));
            row.push(v.into());
            if slice.has_saddles() {
                row.extend(slice.adversary_weights(idx).iter().map(|&w| Cell::from(w)));
                row.extend(slice.forecaster(idx).iter().map(|&w| Cell::from(w)));
                row.push(slice.duality_gap(idx).into());
            } else {
                row.extend(std::iter::repeat_n(Cell::Empty, 3 * n + 1));
            }
            out.push(row);
        }
    }
    let origin = vec![0i64; n];
    let summary = json!({
        "horizon": horizon,
        "value_at_origin": table.position_value(0, &origin),
        "max_duality_gap": table.max_duality_gap(),
        "states": states,
    });
    Ok(RunOutput { summary, table: out })
}

fn pde(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    let m = model(cfg)?;
    let an = analysis(&m)?;
    let theta = effective_theta(cfg);
    let gl = limit(&m, &an, theta)?;
    let n = m.n_experts();
    let seed = cfg.sim.seed;
    let mc = cfg.pde.mc_samples;
    let origin = vec![0.0; n];
    let u0 = evaluate_u(&gl, 0.0, &origin, mc, seed).map_err(CliError::core("limit value"))?;
    let mut points = Vec::new();
    let mut point_table = Table::new(
        std::iter::once("t".to_string())
            .chain((1..=n).map(|i| format!("x{i}")))
            .chain(["U".to_string(), "stderr".to_string()]),
    );
    for p in &cfg.pde.points {
        let e = evaluate_u(&gl, p.t, &p.x, mc, seed).map_err(CliError::core("limit value"))?;
        let mut row: Vec<Cell> = vec![p.t.into()];
        row.extend(p.x.iter().map(|&v| Cell::from(v)));
        row.push(e.value.into());
        row.push(e.stderr.into());
        point_table.push(row);
        points.push(json!({"t": p.t, "x": p.x, "U": e.value, "stderr": e.stderr}));
    }
    let mut summary = json!({
        "regime": to_value(&gl.regime())?,
        "c_star": gl.c_star(),
        "theta": theta,
        "u_origin": u0.value,
        "u_origin_stderr": u0.stderr,
        "points": points,
    });
    let table = if let Some(spec) = cfg.pde.grid {
        let g = solve_reduced_fd(&m, &an, theta, spec).map_err(CliError::core("finite differences"))?;
        let w0 = g.w0(0.0).ok();
        summary["fd_w_origin"] = json!(w0);
        let mut t = Table::new(["t", "z", "w"]);
        for (k, &time) in g.times.iter().enumerate() {
            for (j, &w) in g.values[k].iter().enumerate() {
                t.push(vec![time.into(), g.z(j).into(), w.into()]);
            }
        }
        t
    } else {
        if cfg.pde.points.is_empty() {
            point_table.push(
                std::iter::once(Cell::from(0.0))
                    .chain(origin.iter().map(|&v| Cell::from(v)))
                    .chain([Cell::from(u0.value), Cell::from(u0.stderr)])
                    .collect(),
            );
        }
        point_table
    };
    Ok(RunOutput { summary, table })
}

fn policies(
    cfg: &ExperimentConfig,
    m: &ExpertModel,
    phi: &FinalCondition,
    horizon: usize,
) -> Result<(AdversaryPolicy, ForecasterPolicy), CliError> {
    let needs_table = matches!(cfg.strategy.adversary, AdversaryConfig::DpReplay)
        || matches!(cfg.strategy.forecaster, ForecasterConfig::DpReplay);
    let table = if needs_table {
        Some(Arc::new(dp_table(cfg, horizon)?))
    } else {
        None
    };
    let theta = effective_theta(cfg);
    let adversary = match &cfg.strategy.adversary {
        AdversaryConfig::AsymptoticStar => {
            let an = analysis(m)?;
            let gl = limit(m, &an, theta)?;
            let star = AsymptoticStar::new(m, &an, gl)
                .map_err(CliError::core("asymptotic adversary"))?
                .with_monte_carlo(POLICY_MC_SAMPLES, cfg.sim.seed);
            AdversaryPolicy::AsymptoticStar(Box::new(star))
        }
        AdversaryConfig::Constant { a, b } => AdversaryPolicy::Constant(
            AdversaryControl::new(a.clone(), b.clone()).map_err(CliError::core("strategy.adversary"))?,
        ),
        AdversaryConfig::Balanced { level } => {
            let an = analysis(m)?;
            let (lo, hi) = an.require_feasible().map_err(CliError::core("balanced adversary"))?;
            let c = match level {
                BalancedLevel::Min => lo,
                BalancedLevel::Max => hi,
            };
            AdversaryPolicy::Constant(construct_balanced(c, m).map_err(CliError::core("balanced adversary"))?)
        }
        AdversaryConfig::Hat => AdversaryPolicy::hat(m.n_experts()).map_err(CliError::core("hat adversary"))?,
        AdversaryConfig::MyopicSaddle => {
            AdversaryPolicy::MyopicSaddle(MyopicSaddle::new(m, phi).map_err(CliError::core("one-step adversary"))?)
        }
        AdversaryConfig::DpReplay => AdversaryPolicy::DpReplay(table.clone().expect("table built above")),
    };
    let forecaster = match &cfg.strategy.forecaster {
        ForecasterConfig::GradientU => {
            let an = analysis(m)?;
            ForecasterPolicy::GradientU(Box::new(limit(m, &an, theta)?))
        }
        ForecasterConfig::FollowTheLeader => ForecasterPolicy::FollowTheLeader,
        ForecasterConfig::MultiplicativeWeights { eta } => ForecasterPolicy::MultiplicativeWeights { eta: *eta },
        ForecasterConfig::BestResponse => ForecasterPolicy::BestResponse(m.clone()),
        ForecasterConfig::Uniform => ForecasterPolicy::Uniform,
        ForecasterConfig::DpReplay => ForecasterPolicy::DpReplay(table.expect("table built above")),
    };
    Ok((adversary, forecaster))
}

fn simulate(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    let horizon = cfg.require_horizon("simulate")?;
    let m = model(cfg)?;
    let phi = final_condition(cfg)?;
    let (adv, fore) = policies(cfg, &m, &phi, horizon)?;
    let opts = SimOptions {
        record_terminal: cfg.sim.record_terminal,
        track_pair: Some((0, 1)),
    };
    let mut rep = simulate_with(&m, &adv, &fore, &phi, horizon, cfg.sim.replications, cfg.sim.seed, opts)
        .map_err(CliError::core("simulation"))?;
    let table = match (rep.terminal.take(), rep.conditional_terminal.take()) {
        (Some(raw), cond) => {
            let mut t = Table::new(["replication", "regret", "conditional"]);
            for (r, v) in raw.iter().enumerate() {
                t.push(vec![r.into(), (*v).into(), cond.as_ref().map(|c| c[r]).into()]);
            }
            t
        }
        (None, _) => {
            let mut t = Table::new(SUMMARY_COLUMNS);
            t.push(summary_cells("regret", &rep.regret));
            if let Some(c) = &rep.conditional {
                t.push(summary_cells("conditional", c));
            }
            t
        }
    };
    let mut summary = to_value(&rep)?;
    summary["adversary"] = json!(adv.name());
    summary["forecaster"] = json!(fore.name());
    Ok(RunOutput { summary, table })
}

fn converge(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    let m = model(cfg)?;
    let phi = final_condition(cfg)?;
    let hs = cfg
        .game
        .horizons
        .clone()
        .unwrap_or_else(|| DEFAULT_CONVERGE_HORIZONS.to_vec());
    let rows = experiment_convergence(&m, &phi, &hs, cfg.sim.seed).map_err(CliError::core("convergence"))?;
    let mut t = Table::new(["M", "u_M", "U", "gap"]);
    for r in &rows {
        t.push(vec![
            r.horizon.into(),
            r.scaled_value.into(),
            r.limit.into(),
            r.gap.into(),
        ]);
    }
    let summary = json!({ "rows": to_value(&rows)? });
    Ok(RunOutput { summary, table: t })
}

fn counterexample(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    if cfg.experts.mu != COUNTEREXAMPLE_MU {
        return Err(CliError::Config {
            path: "experts.mu".into(),
            message: format!("the counterexample fixes experts.mu = {COUNTEREXAMPLE_MU:?}"),
        });
    }
    if cfg.final_condition.kind != FinalKindConfig::MaxTheta || cfg.game.theta <= 0.0 {
        return Err(CliError::Config {
            path: "game.theta".into(),
            message: "the counterexample needs final.kind = max_theta with theta > 0".into(),
        });
    }
    let horizon = cfg.require_horizon("counterexample")?;
    let ce = CounterexampleConfig {
        horizon,
        replications: cfg.sim.replications,
        seed: cfg.sim.seed,
        theta: cfg.game.theta,
        adversary: match cfg.counterexample.adversary {
            CounterAdversaryConfig::Hat => CounterAdversary::Hat,
            CounterAdversaryConfig::Balanced => CounterAdversary::Balanced,
        },
        forecaster: match cfg.counterexample.forecaster {
            CounterForecasterConfig::Gradient => CounterForecaster::Gradient,
            CounterForecasterConfig::BestResponse => CounterForecaster::BestResponse,
        },
    };
    let r = experiment_counterexample(&ce).map_err(CliError::core("counterexample"))?;
    let mut t = Table::new([
        "M",
        "replications",
        "theta",
        "scaled_regret_mean",
        "scaled_regret_stderr",
        "scaled_conditional_mean",
        "scaled_conditional_stderr",
        "U0",
        "gap",
        "gap_ci95_low",
        "gap_ci95_high",
        "gap_significant",
        "z_mean",
        "z_mean_stderr",
        "z_variance",
        "z_variance_stderr",
        "exact_scaled_mean",
    ]);
    t.push(vec![
        horizon.into(),
        cfg.sim.replications.into(),
        cfg.game.theta.into(),
        r.scaled_regret.mean.into(),
        r.scaled_regret.stderr.into(),
        r.scaled_conditional.mean.into(),
        r.scaled_conditional.stderr.into(),
        r.u0.into(),
        r.gap.into(),
        r.gap_ci95_low.into(),
        r.gap_ci95_high.into(),
        r.gap_significant.into(),
        r.z_increment.mean.into(),
        r.z_increment.mean_stderr.into(),
        r.z_increment.variance.into(),
        r.z_increment.variance_stderr.into(),
        r.exact_scaled_mean.into(),
    ]);
    Ok(RunOutput {
        summary: to_value(&r)?,
        table: t,
    })
}

fn empty_regime(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    let m = model(cfg)?;
    let hs = cfg
        .game
        .horizons
        .clone()
        .unwrap_or_else(|| DEFAULT_EMPTY_REGIME_HORIZONS.to_vec());
    let r = experiment_empty_regime(&m, effective_theta(cfg), &hs, cfg.sim.replications, cfg.sim.seed)
        .map_err(CliError::core("empty regime"))?;
    let mut t = Table::new(["M", "scaled_regret_mean", "stderr", "ci95_low", "ci95_high"]);
    for row in &r.rows {
        let s = &row.scaled_regret;
        t.push(vec![
            row.horizon.into(),
            s.mean.into(),
            s.stderr.into(),
            s.ci95_low.into(),
            s.ci95_high.into(),
        ]);
    }
    Ok(RunOutput {
        summary: to_value(&r)?,
        table: t,
    })
}
