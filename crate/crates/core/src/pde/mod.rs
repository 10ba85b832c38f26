//! The limiting value function of the rescaled game.

pub mod fd;
pub mod gaussian;
pub mod probe;

pub use fd::{solve_reduced_fd, solve_reduced_fd_terminal, Grid1D, GridSpec};
pub use gaussian::{
    build_gaussian_limit, evaluate_u, gradient_u, hessian_u, symmetric_heat_constant, time_derivative_u,
    two_expert_lower_bound, Estimate, GaussianLimit, ReducedGaussian, Regime,
};
pub use probe::{probe_derivative_bounds, DerivativeExponents, LimitField, SmoothDiagnostic};
