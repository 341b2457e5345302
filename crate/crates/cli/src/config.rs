//! Experiment and verification config files.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sgdflow::datagen::GeneratorSpec;
use sgdflow::dynamics::{DynamicsKind, SimulationPlan, StepSchedule};

/// Step-size choice; `constant_fraction` means γ = fraction/(3K).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleConfig {
    Constant {
        gamma: f64,
    },
    ConstantFraction {
        fraction: f64,
    },
    PolynomialDecay {
        alpha: f64,
        /// Defaults to the instance's K.
        #[serde(rename = "K", default)]
        k: Option<f64>,
    },
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig::ConstantFraction { fraction: 0.5 }
    }
}

impl ScheduleConfig {
    pub fn resolve(&self, k: f64) -> StepSchedule {
        match *self {
            ScheduleConfig::Constant { gamma } => StepSchedule::Constant { gamma },
            ScheduleConfig::ConstantFraction { fraction } => StepSchedule::Constant {
                gamma: fraction / (3.0 * k),
            },
            ScheduleConfig::PolynomialDecay { alpha, k: kk } => StepSchedule::PolynomialDecay {
                alpha,
                k: kk.unwrap_or(k),
            },
        }
    }
}

/// Simulation settings; exactly one of `t_end` and `t_end_over_mu` is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    pub dynamics: DynamicsKind,
    #[serde(default)]
    pub t_end: Option<f64>,
    /// Horizon as a multiple of 1/μ_eff, with μ_eff = μ(2 − Kγ) for constant steps and μ otherwise.
    #[serde(default)]
    pub t_end_over_mu: Option<f64>,
    pub ensemble_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "one")]
    pub save_stride: usize,
    #[serde(default)]
    pub log_save_points: Option<usize>,
    #[serde(default)]
    pub save_times: Option<Vec<f64>>,
    #[serde(default)]
    pub time_average: bool,
    #[serde(default)]
    pub initial_spread: f64,
}

fn one() -> usize {
    1
}

impl PlanConfig {
    pub fn resolve(&self, mu_eff: f64) -> Result<SimulationPlan, String> {
        let t_end = match (self.t_end, self.t_end_over_mu) {
            (Some(t), None) => t,
            (None, Some(m)) => m / mu_eff,
            _ => return Err("plan: give exactly one of t_end and t_end_over_mu".into()),
        };
        Ok(SimulationPlan {
            dt: self.dt,
            t_end,
            save_stride: self.save_stride,
            log_save_points: self.log_save_points,
            save_times: self.save_times.clone(),
            ensemble_size: self.ensemble_size,
            seed: self.seed,
            dynamics: self.dynamics,
            time_average: self.time_average,
            initial_spread: self.initial_spread,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisName {
    Parametric,
    Nonparametric,
    W2,
    Localization,
    Ergodic,
    Decay,
    Tails,
    Quartic,
}

impl AnalysisName {
    pub fn as_str(self) -> &'static str {
        match self {
            AnalysisName::Parametric => "parametric",
            AnalysisName::Nonparametric => "nonparametric",
            AnalysisName::W2 => "w2",
            AnalysisName::Localization => "localization",
            AnalysisName::Ergodic => "ergodic",
            AnalysisName::Decay => "decay",
            AnalysisName::Tails => "tails",
            AnalysisName::Quartic => "quartic",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisParams {
    /// Sliced-W₂ projection count.
    #[serde(default)]
    pub projections: Option<usize>,
    /// Decay exponent.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Quartic probe count.
    #[serde(default)]
    pub probes: Option<usize>,
    /// Seed for the analysis' own randomness.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub name: AnalysisName,
    #[serde(default)]
    pub params: AnalysisParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub generator: GeneratorSpec,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    pub plan: PlanConfig,
    #[serde(default)]
    pub analyses: Vec<AnalysisConfig>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Also dump the raw M × T × d state tensor.
    #[serde(default)]
    pub write_tensor: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "unit")]
    pub bound_scale: f64,
    /// Subset of criterion ids; all when absent.
    #[serde(default)]
    pub criteria: Option<Vec<u32>>,
}

fn unit() -> f64 {
    1.0
}

/// Reads a JSON config, reporting the failing field path with line and column.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse(&text).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T, String> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        format!("field `{path}` (line {}, column {}): {inner}", inner.line(), inner.column())
    })
}
