//! Fixtures shared by the benchmarks.

use expertgame::lp::{LinearProgram, Relation};
use expertgame::{analyze_balanced, BalancedAnalysis, ExpertModel, FinalCondition};

/// The two-expert model used throughout the experiments.
pub fn two_experts() -> (ExpertModel, BalancedAnalysis) {
    let m = ExpertModel::new(vec![0.75, 0.25]).expect("valid accuracies");
    let an = analyze_balanced(&m, 1e-12).expect("analysis");
    (m, an)
}

pub fn five_experts() -> ExpertModel {
    ExpertModel::new(vec![0.1, 0.3, 0.5, 0.7, 0.9]).expect("valid accuracies")
}

pub fn phi() -> FinalCondition {
    FinalCondition::max_theta(0.1).expect("theta in range")
}

/// A dense matrix game `max_w min_j (w^T A)_j` of size `n`, written as an LP.
pub fn matrix_game(n: usize) -> LinearProgram {
    let payoff = |i: usize, j: usize| (((i * 7 + j * 13) % 17) as f64 / 17.0) - 0.3;
    // variables: w_0..w_{n-1}, v+ and v- (v is free)
    let mut objective = vec![0.0; n + 2];
    objective[n] = 1.0;
    objective[n + 1] = -1.0;
    let mut lp = LinearProgram::maximize(objective);
    for j in 0..n {
        let mut row: Vec<f64> = (0..n).map(|i| -payoff(i, j)).collect();
        row.extend([1.0, -1.0]);
        lp.constraint(row, Relation::Le, 0.0);
    }
    let mut simplex = vec![1.0; n];
    simplex.extend([0.0, 0.0]);
    lp.constraint(simplex, Relation::Eq, 1.0);
    lp
}
