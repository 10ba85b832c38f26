//! Numerical laboratory for prediction with expert advice against an
//! adversary who corrupts one expert per round.
//!
//! * [`game`]: experts, controls, gain laws and final conditions.
//! * [`balanced`]: balanced controls, the Hamiltonians and the gain spread.
//! * [`dp`]: exact backward induction for the finite game.
//! * [`pde`]: the Gaussian limit, its derivatives and a reduced FD solver.
//! * [`sim`]: strategies, the Monte Carlo engine and the experiments.

// negated comparisons below are deliberate: they reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod balanced;
pub mod dp;
pub mod error;
pub mod game;
pub mod lp;
pub mod pde;
pub mod rng;
pub mod sim;
pub mod stats;

pub use balanced::{
    analyze_balanced, check_posdef, compute_delta, construct_balanced, dispersion, hamiltonian_h, hamiltonian_hb,
    BalancedAnalysis, SigmaPair,
};
pub use dp::{scaled_value, solve_full_adversary, solve_value, solve_value_with, DpOptions, ValueTable};
pub use error::{Error, Result};
pub use game::{
    check_final_condition, expected_gain, gain_distribution, AdversaryControl, ExpertModel, FinalCondition, FinalKind,
    ForecasterControl, GainDistribution,
};
pub use pde::{build_gaussian_limit, evaluate_u, solve_reduced_fd, GaussianLimit, GridSpec};
pub use sim::{simulate, AdversaryPolicy, ForecasterPolicy, SimulationReport};
