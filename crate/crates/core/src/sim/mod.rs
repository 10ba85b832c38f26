//! Monte Carlo play of the game and the scaling experiments.

pub mod engine;
pub mod experiments;
pub mod policy;

pub use engine::{simulate, simulate_with, IncrementStats, SimOptions, SimulationReport};
pub use experiments::{
    counterexample_exact_scaled_mean, dominating_pair, experiment_convergence, experiment_counterexample,
    experiment_empty_regime, ConvergenceRow, CounterAdversary, CounterForecaster, CounterexampleConfig,
    CounterexampleReport, EmptyRegimeReport, EmptyRegimeRow,
};
pub use policy::{
    adversary_asymptotic_step, adversary_hat, forecaster_gradient_step, AdversaryPolicy, AsymptoticStar,
    ForecasterPolicy, MyopicSaddle,
};
