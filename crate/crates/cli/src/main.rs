use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser};

use expertgame_cli::{execute, Invocation, Subcommand};

const COLUMNS: &str = "\
CSV columns by subcommand:
  analyze         feasible,c_min,c_max,argmin_c,s_min,delta,delta_spread
  dp              m,z1..z(N-1),value,a1..aN,b1..bN,phi1..phiN,duality_gap
  pde             t,z,w                      (with pde.grid)
                  t,x1..xN,U,stderr          (point evaluations)
  simulate        estimator,n,mean,variance,stderr,ci95_low,ci95_high
                  replication,regret,conditional   (with sim.record_terminal)
  converge        M,u_M,U,gap
  counterexample  M,replications,theta,scaled_regret_mean,scaled_regret_stderr,
                  scaled_conditional_mean,scaled_conditional_stderr,U0,gap,
                  gap_ci95_low,gap_ci95_high,gap_significant,z_mean,z_mean_stderr,
                  z_variance,z_variance_stderr,exact_scaled_mean
  empty-regime    M,scaled_regret_mean,stderr,ci95_low,ci95_high

With --out PATH and CSV output, the JSON envelope goes to PATH.json.
Exit codes: 0 success, 2 invalid config or input, 3 numerical failure.";

#[derive(Parser)]
#[command(name = "expertgame", version, about = "Expert-advice game against a corrupting adversary", after_help = COLUMNS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output file; defaults to output.path in the config, then stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Overrides sim.seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, value_name = "N", env = "EXPERTGAME_THREADS")]
    threads: Option<usize>,
    /// Record wall-clock seconds in the envelope (makes output time-dependent).
    #[arg(long)]
    timing: bool,
}

#[derive(clap::Subcommand)]
enum Command {
    /// Balanced-control analysis of the expert accuracies.
    Analyze(Common),
    /// Exact finite-horizon values and saddle controls.
    Dp(Common),
    /// Gaussian limit values and the reduced finite-difference solve.
    Pde(Common),
    /// Monte Carlo play of configured strategies.
    Simulate(Common),
    /// Exact scaled values against the limit over several horizons.
    Converge(Common),
    /// Gradient forecaster against the two-expert hat control.
    Counterexample(Common),
    /// Regret trend when no balanced control exists.
    EmptyRegime(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (sub, common) = match cli.command {
        Command::Analyze(c) => (Subcommand::Analyze, c),
        Command::Dp(c) => (Subcommand::Dp, c),
        Command::Pde(c) => (Subcommand::Pde, c),
        Command::Simulate(c) => (Subcommand::Simulate, c),
        Command::Converge(c) => (Subcommand::Converge, c),
        Command::Counterexample(c) => (Subcommand::Counterexample, c),
        Command::EmptyRegime(c) => (Subcommand::EmptyRegime, c),
    };
    let inv = Invocation {
        config: common.config,
        out: common.out,
        seed: common.seed,
        threads: common.threads,
        timing: common.timing,
    };
    match execute(sub, &inv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
