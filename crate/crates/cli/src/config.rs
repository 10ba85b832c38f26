//! Experiment configuration: JSON in, validated and normalized.
//!
//! Unknown keys are rejected everywhere. Defaults are filled during parsing,
//! so serializing a parsed config gives its normal form.

use serde::{Deserialize, Serialize};

use expertgame::pde::GridSpec;

use crate::error::CliError;

pub const DEFAULT_THETA: f64 = 0.1;
pub const DEFAULT_REPLICATIONS: usize = 100_000;
pub const DEFAULT_PDE_MC: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experts: ExpertsConfig,
    #[serde(default)]
    pub game: GameConfig,
    #[serde(default, rename = "final")]
    pub final_condition: FinalConfig,
    #[serde(default)]
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub pde: PdeConfig,
    #[serde(default)]
    pub counterexample: CounterexampleSection,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertsConfig {
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameConfig {
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// Horizons for the scaling experiments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizons: Option<Vec<usize>>,
    /// Extra lattice radius for the DP beyond the reachable set.
    #[serde(default)]
    pub radius: usize,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            horizon: None,
            theta: DEFAULT_THETA,
            horizons: None,
            radius: 0,
        }
    }
}

fn default_theta() -> f64 {
    DEFAULT_THETA
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalKindConfig {
    Max,
    #[default]
    MaxTheta,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalConfig {
    #[serde(default)]
    pub kind: FinalKindConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalancedLevel {
    #[default]
    Min,
    Max,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdversaryConfig {
    #[default]
    AsymptoticStar,
    Constant {
        a: Vec<f64>,
        b: Vec<f64>,
    },
    /// Constant balanced control at `c_min` or `c_max`.
    Balanced {
        #[serde(default)]
        level: BalancedLevel,
    },
    Hat,
    MyopicSaddle,
    DpReplay,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForecasterConfig {
    #[default]
    GradientU,
    FollowTheLeader,
    MultiplicativeWeights {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eta: Option<f64>,
    },
    BestResponse,
    Uniform,
    DpReplay,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    #[serde(default)]
    pub adversary: AdversaryConfig,
    #[serde(default)]
    pub forecaster: ForecasterConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    /// Emit one CSV row per replication.
    #[serde(default)]
    pub record_terminal: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            replications: DEFAULT_REPLICATIONS,
            seed: 0,
            record_terminal: false,
        }
    }
}

fn default_replications() -> usize {
    DEFAULT_REPLICATIONS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointConfig {
    pub t: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<PointConfig>,
    #[serde(default = "default_pde_mc")]
    pub mc_samples: usize,
}

impl Default for PdeConfig {
    fn default() -> Self {
        Self {
            grid: None,
            points: Vec::new(),
            mc_samples: DEFAULT_PDE_MC,
        }
    }
}

fn default_pde_mc() -> usize {
    DEFAULT_PDE_MC
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterAdversaryConfig {
    #[default]
    Hat,
    Balanced,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterForecasterConfig {
    #[default]
    Gradient,
    BestResponse,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterexampleSection {
    #[serde(default)]
    pub adversary: CounterAdversaryConfig,
    #[serde(default)]
    pub forecaster: CounterForecasterConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default)]
    pub format: OutputFormat,
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn check_unit_interval(path: &str, v: f64) -> Result<(), CliError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(path, format!("{v} is not in [0, 1]")))
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        for (i, &m) in self.experts.mu.iter().enumerate() {
            check_unit_interval(&format!("experts.mu[{i}]"), m)?;
        }
        let n = self.experts.mu.len();
        if n < 2 {
            return Err(invalid("experts.mu", "need at least two experts"));
        }
        if !(0.0..1.0).contains(&self.game.theta) {
            return Err(invalid("game.theta", format!("{} is not in [0, 1)", self.game.theta)));
        }
        if let Some(hs) = &self.game.horizons {
            if hs.is_empty() {
                return Err(invalid("game.horizons", "must not be empty"));
            }
            if let Some(k) = hs.iter().position(|&h| h == 0) {
                return Err(invalid(format!("game.horizons[{k}]"), "must be positive"));
            }
        }
        if self.sim.replications == 0 {
            return Err(invalid("sim.replications", "must be positive"));
        }
        match &self.strategy.adversary {
            AdversaryConfig::Constant { a, b } => {
                for (name, v) in [("a", a), ("b", b)] {
                    if v.len() != n {
                        return Err(invalid(
                            format!("strategy.adversary.{name}"),
                            format!("expected {n} entries, got {}", v.len()),
                        ));
                    }
                    for (i, &w) in v.iter().enumerate() {
                        check_unit_interval(&format!("strategy.adversary.{name}[{i}]"), w)?;
                    }
                }
            }
            AdversaryConfig::Hat if n != 2 => {
                return Err(invalid("strategy.adversary.kind", "hat needs exactly two experts"));
            }
            _ => {}
        }
        if let ForecasterConfig::MultiplicativeWeights { eta: Some(eta) } = self.strategy.forecaster {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(invalid("strategy.forecaster.eta", format!("{eta} must be positive")));
            }
        }
        if let Some(g) = &self.pde.grid {
            if g.z_max.partial_cmp(&g.z_min) != Some(std::cmp::Ordering::Greater) {
                return Err(invalid("pde.grid.z_max", "must exceed pde.grid.z_min"));
            }
            if g.nz < 3 {
                return Err(invalid("pde.grid.nz", "must be at least 3"));
            }
            if g.nt == 0 {
                return Err(invalid("pde.grid.nt", "must be positive"));
            }
            if g.time_slices < 2 {
                return Err(invalid("pde.grid.time_slices", "must be at least 2"));
            }
        }
        for (k, p) in self.pde.points.iter().enumerate() {
            check_unit_interval(&format!("pde.points[{k}].t"), p.t)?;
            if p.x.len() != n {
                return Err(invalid(
                    format!("pde.points[{k}].x"),
                    format!("expected {n} coordinates, got {}", p.x.len()),
                ));
            }
        }
        if self.pde.mc_samples == 0 {
            return Err(invalid("pde.mc_samples", "must be positive"));
        }
        Ok(())
    }

    pub fn require_horizon(&self, subcommand: &str) -> Result<usize, CliError> {
        self.game
            .horizon
            .ok_or_else(|| invalid("game.M", format!("required by `{subcommand}`")))
    }
}

/// Parse and validate a JSON config; errors name the offending key path.
pub fn parse_config(bytes: &[u8]) -> Result<ExperimentConfig, CliError> {
    let text = std::str::from_utf8(bytes).map_err(|e| invalid("", format!("config is not UTF-8: {e}")))?;
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        invalid(
            if path == "." { String::new() } else { path },
            e.into_inner().to_string(),
        )
    })?;
    cfg.validate()?;
    Ok(cfg)
}
