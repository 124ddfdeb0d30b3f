use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Deserializer, Serialize};
use tallscore::schedule::{BetaProfile, DEFAULT_BETA_MAX, DEFAULT_BETA_MIN};

use crate::method::Method;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Gaussian,
    Gmm,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Gaussian => "gaussian",
            TaskKind::Gmm => "gmm",
        }
    }
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<usize>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Either {
        One(usize),
        Many(Vec<usize>),
    }
    Ok(match Either::deserialize(d)? {
        Either::One(v) => vec![v],
        Either::Many(v) => v,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            beta_min: DEFAULT_BETA_MIN,
            beta_max: DEFAULT_BETA_MAX,
        }
    }
}

impl ScheduleConfig {
    pub fn profile(&self) -> BetaProfile {
        BetaProfile {
            beta_min: self.beta_min,
            beta_max: self.beta_max,
        }
    }
}

/// Settings for the per-observation covariance estimates used by GAUSS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationConfig {
    pub t_est: usize,
    pub n_est: usize,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self { t_est: 100, n_est: 1000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub n_proj: usize,
    pub mmd: bool,
    /// Draws per set entering the quadratic-cost MMD estimate.
    pub mmd_max_draws: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            n_proj: tallscore::metrics::DEFAULT_PROJECTIONS,
            mmd: true,
            mmd_max_draws: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceConfig {
    pub mala_steps: usize,
    pub mala_step_size: f64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            mala_steps: 3000,
            mala_step_size: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    #[serde(alias = "m_list", deserialize_with = "one_or_many")]
    pub m: Vec<usize>,
    #[serde(default = "default_rho")]
    pub rho: f64,
    pub n_list: Vec<usize>,
    pub eps_list: Vec<f64>,
    /// Step counts; when absent every method runs at its equivalent-time default.
    #[serde(default, rename = "T_list", alias = "t_list")]
    pub t_list: Option<Vec<usize>>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    #[serde(rename = "N_samples", alias = "n_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub write_samples: bool,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub reference: ReferenceConfig,
}

fn default_rho() -> f64 {
    0.8
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m.is_empty() || self.m.contains(&0) {
            bail!("m entries must be positive");
        }
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            bail!("n_list entries must be >= 1");
        }
        if self.eps_list.is_empty() || self.eps_list.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
            bail!("eps_list entries must be finite and >= 0");
        }
        if let Some(ts) = &self.t_list {
            if ts.is_empty() || ts.iter().any(|t| *t < 2) {
                bail!("T_list entries must be >= 2");
            }
        }
        if self.methods.is_empty() {
            bail!("at least one method is required");
        }
        if self.seeds.is_empty() {
            bail!("at least one seed is required");
        }
        if self.n_samples < 2 {
            bail!("N_samples must be >= 2");
        }
        if self.metrics.n_proj == 0 {
            bail!("metrics.n_proj must be positive");
        }
        if self.estimation.t_est < 2 {
            bail!("estimation.t_est must be >= 2");
        }
        if self.schedule.beta_min <= 0.0 || self.schedule.beta_max <= self.schedule.beta_min {
            bail!("schedule bounds must satisfy 0 < beta_min < beta_max");
        }
        Ok(())
    }

    /// Step counts to run for a method.
    pub fn steps_for(&self, method: Method) -> Vec<usize> {
        match &self.t_list {
            Some(ts) => ts.clone(),
            None => vec![method.default_steps()],
        }
    }
}
